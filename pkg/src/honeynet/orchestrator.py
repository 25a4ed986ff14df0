"""Introspection controller and VM-inspector lifecycle.

The controller keeps ``ceil(live networks / networks_per_inspector)``
inspectors alive and hands each a contiguous chunk of the id-sorted network
list. Each inspector walks its networks one at a time:

    Idle -> Probe(h1 on the customer port group)
         -> Paired(h1 + h2 on a private pair link, rotation_count iterations)
         -> Teardown -> Idle (next network)

At the end of every paired iteration both honeypots are checked against the
template baseline and their payloads are recorded; between iterations one of
them is restored to pristine so its infected peer can re-contaminate it.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

from .cloud_model import GroupKind
from .introspection import check, extract_payload
from .vm_state import (
    GuestVM,
    TemplateSpec,
    list_changed_files,
    query_changed_disk_areas,
    redo_log_size,
    restore_to_snapshot,
    take_memory_snapshot,
)
from .world import World


class OrchestrationError(RuntimeError):
    pass


class TemplateNotFoundError(OrchestrationError):
    pass


@dataclass
class InspectionPolicy:
    dwell_ticks: int = 20
    rotation_count: int = 5
    snapshot_period_ticks: int = 10
    networks_per_inspector: int = 2
    baseline_warmup_ticks: int = 5
    churn_tolerance: int = 0

    def __post_init__(self) -> None:
        for name in ("dwell_ticks", "snapshot_period_ticks", "networks_per_inspector"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("rotation_count", "baseline_warmup_ticks", "churn_tolerance"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


class Phase(str, enum.Enum):
    IDLE = "Idle"
    PROBE = "Probe"
    PAIRED = "Paired"
    TEARDOWN = "Teardown"


@dataclass
class InspectorState:
    id: int
    assigned_networks: list[int] = field(default_factory=list)
    current_index: int = 0
    phase: Phase = Phase.IDLE
    h1: GuestVM | None = None
    h2: GuestVM | None = None
    iteration: int = 0
    network: int | None = None
    pair_link: int | None = None
    template_cursor: str | None = None
    phase_started: int = 0
    # (honeypot id, instance nonce) already persisted
    recorded: set[tuple[int, int]] = field(default_factory=set)

    @property
    def honeypots(self) -> list[GuestVM]:
        return [h for h in (self.h1, self.h2) if h is not None]


def select_template(profile: Iterable[str], templates: Mapping[str, TemplateSpec]) -> TemplateSpec:
    """Largest software overlap wins; ties go to the lexicographically first name."""
    if not templates:
        raise TemplateNotFoundError("no honeypot templates registered")
    profile = frozenset(profile)
    best = min(templates.values(), key=lambda t: (-len(t.software_set & profile), t.name))
    return best


def active_honeypot_count(inspectors: Iterable[InspectorState]) -> int:
    return sum(len(ins.honeypots) for ins in inspectors)


def rotate_restore(world: World, ins: InspectorState) -> GuestVM:
    """Restore h2 on odd iterations and h1 on even ones; returns the restored guest."""
    if ins.phase is not Phase.PAIRED or ins.h1 is None or ins.h2 is None:
        raise OrchestrationError(f"inspector {ins.id}: rotate_restore outside Paired phase")
    victim = ins.h2 if ins.iteration % 2 == 1 else ins.h1
    restore_to_snapshot(victim, victim.pristine)
    world.log.emit(
        world.tick, f"inspector:{ins.id}", "RESTORE",
        network=ins.network, honeypot=victim.vm_id, iteration=ins.iteration,
    )
    return victim


class IntrospectionController:
    def __init__(self, world: World, policy: InspectionPolicy) -> None:
        self.world = world
        self.policy = policy
        self.inspectors: dict[int, InspectorState] = {}
        self._next_id = 1
        self.redo_by_template: dict[str, int] = {}
        world.baseline_warmup_ticks = policy.baseline_warmup_ticks

    @property
    def log(self):
        return self.world.log

    # -- controller ----------------------------------------------------

    def controller_tick(self) -> list[tuple[str, int]]:
        """Reconcile inspectors with the live network list. Returns actions taken."""
        tick = self.world.tick
        live = [n.id for n in self.world.topology.list_networks()]
        npi = self.policy.networks_per_inspector
        chunks = [live[i:i + npi] for i in range(0, len(live), npi)]
        assert len(chunks) == math.ceil(len(live) / npi)
        actions: list[tuple[str, int]] = []

        order = sorted(self.inspectors)
        for ins_id in order[len(chunks):]:
            ins = self.inspectors.pop(ins_id)
            self._abort(ins, "inspector destroyed")
            self.log.emit(tick, "controller", "INSPECTOR_DESTROY", inspector=ins_id)
            actions.append(("destroy", ins_id))
        while len(self.inspectors) < len(chunks):
            ins = InspectorState(self._next_id)
            self._next_id += 1
            self.inspectors[ins.id] = ins
            self.log.emit(tick, "controller", "INSPECTOR_CREATE", inspector=ins.id)
            actions.append(("create", ins.id))

        for ins_id, chunk in zip(sorted(self.inspectors), chunks):
            ins = self.inspectors[ins_id]
            if ins.assigned_networks == chunk:
                continue
            if ins.network is not None and ins.network not in chunk:
                self._abort(ins, "network reassigned")
            if ins.network is not None:
                ins.current_index = chunk.index(ins.network)
            elif ins.assigned_networks and ins.current_index < len(ins.assigned_networks):
                # keep pointing at the same next network if it survived
                nxt = ins.assigned_networks[ins.current_index]
                ins.current_index = chunk.index(nxt) if nxt in chunk else ins.current_index % len(chunk)
            else:
                ins.current_index = 0
            ins.assigned_networks = list(chunk)
            self.log.emit(tick, "controller", "ASSIGN", inspector=ins_id, networks=chunk)
            actions.append(("assign", ins_id))

        if actions:
            self.log.emit(tick, "controller", "RECONCILED", live=len(live), inspectors=len(self.inspectors))
        return actions

    # -- honeypot helpers ------------------------------------------------

    def _spawn(self, ins: InspectorState, template: TemplateSpec) -> GuestVM:
        hp = self.world.create_honeypot(template)
        self.log.emit(
            self.world.tick, f"inspector:{ins.id}", "HP_CREATE",
            honeypot=hp.vm_id, template=template.name, network=ins.network,
        )
        return hp

    def _destroy(self, ins: InspectorState, hp: GuestVM) -> None:
        self.log.emit(
            self.world.tick, f"inspector:{ins.id}", "HP_DESTROY",
            honeypot=hp.vm_id, template=hp.template.name, network=ins.network,
            redo_bytes=redo_log_size(hp),
        )
        name = hp.template.name
        self.redo_by_template[name] = max(self.redo_by_template.get(name, 0), redo_log_size(hp))
        self.world.destroy_honeypot(hp)

    def collect(self, ins: InspectorState, hp: GuestVM) -> list[int]:
        """Snapshot, check and persist any not-yet-recorded payloads of ``hp``."""
        world = self.world
        tick = world.tick
        hp.take_snapshot(tick)
        snap = take_memory_snapshot(hp, tick)
        sectors = sum(n for _, n in query_changed_disk_areas(hp, hp.pristine))
        files = tuple(list_changed_files(hp, hp.pristine))
        report = check(
            snap, world.baseline(hp.template),
            changed_sector_total=sectors, changed_files=files, vm_generation=hp.generation,
        )
        ids = []
        for payload in extract_payload(hp, report):
            key = (hp.vm_id, payload.instance_nonce)
            if key in ins.recorded:
                continue
            ins.recorded.add(key)
            if world.db is not None:
                rid = world.db.append_record(
                    tick=tick,
                    network_id=ins.network,
                    inspector_id=ins.id,
                    honeypot_id=hp.vm_id,
                    template_name=hp.template.name,
                    payload_bytes=payload.bytes,
                    ground_truth_family=payload.family_id,
                    anomaly=report,
                )
                ids.append(rid)
        self.log.emit(
            tick, f"inspector:{ins.id}", "CHECK",
            network=ins.network, honeypot=hp.vm_id,
            anomalous=0 if report.is_empty(self.policy.churn_tolerance) else 1,
            unknown=report.unknown_processes, hidden=report.hidden_processes,
            modules=len(report.unknown_modules), sectors=sectors, records=ids,
        )
        return ids

    def _abort(self, ins: InspectorState, reason: str) -> None:
        if ins.phase in (Phase.PROBE, Phase.PAIRED):
            for hp in ins.honeypots:
                self.collect(ins, hp)
            self.log.emit(self.world.tick, f"inspector:{ins.id}", "ABORT", network=ins.network, reason=reason)
        self._release(ins)
        ins.phase = Phase.IDLE

    def _release(self, ins: InspectorState) -> None:
        for hp in ins.honeypots:
            self._destroy(ins, hp)
        ins.h1 = ins.h2 = None
        if ins.pair_link is not None:
            self.world.topology.destroy_port_group(ins.pair_link)
            ins.pair_link = None
        ins.network = None
        ins.iteration = 0

    # -- inspector -------------------------------------------------------

    def inspector_step(self, ins: InspectorState) -> list[str]:
        world, pol, tick = self.world, self.policy, self.world.tick
        topo = world.topology
        actor = f"inspector:{ins.id}"
        events: list[str] = []

        if ins.phase is Phase.IDLE:
            if not ins.assigned_networks:
                return events
            ins.current_index %= len(ins.assigned_networks)
            net = topo.network(ins.assigned_networks[ins.current_index])
            pinned = world.network_templates.get(net.id)
            template = world.templates[pinned] if pinned else select_template(net.software_profile, world.templates)
            ins.network = net.id
            ins.template_cursor = template.name
            ins.h1 = self._spawn(ins, template)
            topo.attach_vm(ins.h1.vm_id, net.port_group)
            ins.phase, ins.phase_started = Phase.PROBE, tick
            world.log.emit(tick, actor, "PROBE", network=net.id, honeypots=[ins.h1.vm_id], template=template.name)
            events.append("probe")

        elif ins.phase is Phase.PROBE:
            if tick - ins.phase_started < pol.dwell_ticks:
                return events
            net = topo.network(ins.network)
            topo.detach_vm(ins.h1.vm_id, net.port_group)
            if pol.rotation_count == 0:
                self.collect(ins, ins.h1)
                self._release(ins)
                ins.phase = Phase.TEARDOWN
                world.log.emit(tick, actor, "TEARDOWN", network=net.id)
                events.append("teardown")
                return events
            ins.h2 = self._spawn(ins, world.templates[ins.template_cursor])
            link = topo.create_port_group(topo.group(net.port_group).switch, GroupKind.PAIR)
            ins.pair_link = link.id
            topo.attach_vm(ins.h1.vm_id, link.id)
            topo.attach_vm(ins.h2.vm_id, link.id)
            ins.phase, ins.phase_started, ins.iteration = Phase.PAIRED, tick, 1
            world.log.emit(
                tick, actor, "PAIR", network=net.id,
                honeypots=[ins.h1.vm_id, ins.h2.vm_id], link=link.id, iteration=1,
            )
            events.append("pair")

        elif ins.phase is Phase.PAIRED:
            if tick - ins.phase_started < pol.snapshot_period_ticks:
                return events
            for hp in ins.honeypots:
                self.collect(ins, hp)
            if ins.iteration < pol.rotation_count:
                rotate_restore(world, ins)
                ins.iteration += 1
                ins.phase_started = tick
                events.append("rotate")
            else:
                net_id = ins.network
                self._release(ins)
                ins.phase = Phase.TEARDOWN
                world.log.emit(tick, actor, "TEARDOWN", network=net_id)
                events.append("teardown")

        elif ins.phase is Phase.TEARDOWN:
            ins.phase = Phase.IDLE
            ins.current_index = (ins.current_index + 1) % max(len(ins.assigned_networks), 1)
            world.log.emit(tick, actor, "IDLE", next_index=ins.current_index)
            events.append("idle")

        return events

    def step_inspectors(self) -> None:
        for ins_id in sorted(self.inspectors):
            self.inspector_step(self.inspectors[ins_id])

    def shutdown(self) -> None:
        """Final collection and teardown of everything still alive."""
        for ins_id in sorted(self.inspectors):
            self._abort(self.inspectors[ins_id], "end of run")
