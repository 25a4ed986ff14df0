"""Shared simulation state handed to the controller and the harness."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .cloud_model import Topology, VirtualNetwork, VmRole
from .collection_db import CollectionDB
from .introspection import BaselineProfile, build_baseline
from .vm_state import CUSTOMER_TEMPLATE, GuestVM, TemplateSpec, instantiate_from_template
from .worm_engine import WormEngine, WormSpec


def _fmt(v: object) -> str:
    if isinstance(v, (list, tuple, set, frozenset)):
        items = sorted(v) if isinstance(v, (set, frozenset)) else v
        return ",".join(str(x) for x in items) or "-"
    if v is None:
        return "-"
    return str(v)


class RunLog:
    """Tab-separated event trace: ``tick  actor  EVENT  key=value...``."""

    def __init__(self, path: str | os.PathLike | None = None) -> None:
        self.lines: list[str] = []
        self._fh = open(path, "w", encoding="utf-8") if path is not None else None

    def emit(self, tick: int, actor: str, event: str, **fields: object) -> None:
        line = "\t".join([str(tick), actor, event] + [f"{k}={_fmt(v)}" for k, v in fields.items()])
        self.lines.append(line)
        if self._fh is not None:
            self._fh.write(line + "\n")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)


def parse_log_line(line: str) -> tuple[int, str, str, dict[str, str]]:
    tick, actor, event, *rest = line.rstrip("\n").split("\t")
    return int(tick), actor, event, dict(kv.split("=", 1) for kv in rest)


@dataclass
class World:
    topology: Topology
    templates: dict[str, TemplateSpec]
    worms: dict[str, WormSpec]
    log: RunLog
    db: CollectionDB | None = None
    seed: int = 0
    baseline_warmup_ticks: int = 0
    guests: dict[int, GuestVM] = field(default_factory=dict)
    address_books: dict[int, set[int]] = field(default_factory=dict)
    baselines: dict[str, BaselineProfile] = field(default_factory=dict)
    # pinned honeypot template per network id
    network_templates: dict[int, str] = field(default_factory=dict)
    peak_honeypots: int = 0
    tick: int = 0

    def __post_init__(self) -> None:
        self.engine = WormEngine(self.topology, self.guests, self.worms, self.seed, self.address_books)

    @classmethod
    def in_memory(
        cls,
        templates: dict[str, TemplateSpec] | None = None,
        worms: dict[str, WormSpec] | None = None,
        db_path: str | Path | None = None,
        seed: int = 0,
    ) -> World:
        topo = Topology()
        return cls(
            topo,
            dict(templates or {}),
            dict(worms or {}),
            RunLog(),
            CollectionDB(db_path),
            seed,
        )

    def add_network(
        self, switch: str, vm_count: int, software_profile=frozenset(), name: str = ""
    ) -> VirtualNetwork:
        if switch not in self.topology.switches:
            self.topology.add_switch(switch)
        net = self.topology.create_network(switch, vm_count, software_profile, name)
        for vid in net.customer_vms:
            self.guests[vid] = instantiate_from_template(CUSTOMER_TEMPLATE, vid, self.tick)
        return net

    def remove_network(self, net_id: int) -> VirtualNetwork:
        net = self.topology.destroy_network(net_id)
        self.network_templates.pop(net_id, None)
        for vid in net.customer_vms:
            guest = self.guests.pop(vid, None)
            if guest is not None:
                guest.destroy()
            self.address_books.pop(vid, None)
        return net

    def create_honeypot(self, template: TemplateSpec) -> GuestVM:
        handle = self.topology.create_vm(VmRole.HONEYPOT)
        guest = instantiate_from_template(template, handle.id, self.tick)
        self.guests[handle.id] = guest
        alive = sum(1 for v in self.topology.vms.values() if v.role is VmRole.HONEYPOT)
        self.peak_honeypots = max(self.peak_honeypots, alive)
        return guest

    def destroy_honeypot(self, guest: GuestVM) -> None:
        self.topology.destroy_vm(guest.vm_id)
        self.guests.pop(guest.vm_id, None)
        guest.destroy()

    def baseline(self, template: TemplateSpec) -> BaselineProfile:
        if template.name not in self.baselines:
            self.baselines[template.name] = build_baseline(template, self.baseline_warmup_ticks)
        return self.baselines[template.name]
