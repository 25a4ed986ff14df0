"""Scenario runner and metrics reporting.

A run writes four files into its output directory: ``run.log``,
``collections.jsonl``, ``report.txt`` and ``report.machine``. Identical
config and seed give byte-identical files.
"""

from __future__ import annotations

import json
import logging
import os
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .cloud_model import Topology
from .collection_db import CollectionDB
from .orchestrator import IntrospectionController
from .scenario import NetworkCfg, ScenarioConfig
from .vm_state import GIB
from .world import RunLog, World, parse_log_line
from .worm_engine import OutcomeKind

log = logging.getLogger(__name__)

OUTPUT_FILES = ("run.log", "collections.jsonl", "report.txt", "report.machine")


@dataclass
class TemplateRedo:
    redo_bytes: int
    disk_bytes: int

    @property
    def ratio(self) -> float:
        return self.redo_bytes / self.disk_bytes


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    ticks: int
    total_collections: int = 0
    per_network_collections: dict[str, int] = field(default_factory=dict)
    per_family_distinct: dict[str, int] = field(default_factory=dict)
    redo_by_template: dict[str, TemplateRedo] = field(default_factory=dict)
    false_positives: int = 0
    false_negatives: int = 0
    peak_alive_honeypots: int = 0
    inspector_timeline: list[tuple[int, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["redo_by_template"] = {
            k: {"redo_bytes": v.redo_bytes, "disk_bytes": v.disk_bytes, "ratio": v.ratio}
            for k, v in sorted(self.redo_by_template.items())
        }
        d["inspector_timeline"] = [list(p) for p in self.inspector_timeline]
        return d


class _Run:
    def __init__(self, cfg: ScenarioConfig, out_dir: Path | None) -> None:
        self.cfg = cfg
        topo = Topology()
        for s in cfg.servers:
            topo.add_server(s.id, s.capacity)
        self.world = World(
            topology=topo,
            templates=cfg.template_specs(),
            worms=cfg.worm_specs(),
            log=RunLog(out_dir / "run.log" if out_dir else None),
            db=CollectionDB(out_dir / "collections.jsonl" if out_dir else None),
            seed=cfg.seed,
        )
        self.controller = IntrospectionController(self.world, cfg.policy.to_policy())
        self.rng = random.Random(cfg.seed)
        self.net_ids: dict[str, int] = {}
        self.net_names: dict[int, str] = {}
        self.worm_bearing: set[str] = set()
        self.inspected: set[int] = set()
        self.timeline: list[tuple[int, int]] = []

    def add_network(self, ncfg: NetworkCfg) -> None:
        w = self.world
        net = w.add_network(ncfg.switch, ncfg.vm_count, frozenset(ncfg.software_profile), ncfg.name)
        self.net_ids[ncfg.name] = net.id
        self.net_names[net.id] = ncfg.name
        if ncfg.template is not None:
            w.network_templates[net.id] = ncfg.template
        vms = net.customer_vms
        for vid in vms:
            w.address_books[vid] = {
                p for p in vms if p != vid and self.rng.random() < ncfg.address_book_density
            }
        w.log.emit(w.tick, "scenario", "ADD_NETWORK", network=net.id, name=ncfg.name,
                   port_group=net.port_group, vms=vms)
        for inf in ncfg.infections:
            self.worm_bearing.add(ncfg.name)
            payload = w.engine.seed_infection(vms[inf.vm], inf.family, w.tick)
            w.log.emit(w.tick, f"worm:{inf.family}", "SEED", dst=vms[inf.vm], nonce=payload.instance_nonce)

    def apply_events(self, tick: int) -> None:
        w = self.world
        for ev in [e for e in self.cfg.dynamic_events if e.tick == tick]:
            if ev.add_network is not None:
                self.add_network(ev.add_network)
            elif ev.remove_network is not None:
                nid = self.net_ids.pop(ev.remove_network)
                w.remove_network(nid)
                w.log.emit(tick, "scenario", "REMOVE_NETWORK", network=nid, name=ev.remove_network)
            else:
                mv = ev.migrate_vm
                vid = w.topology.network(self.net_ids[mv.network]).customer_vms[mv.vm]
                src = w.topology.vm(vid).host
                w.topology.migrate_vm(vid, mv.dest)
                w.log.emit(tick, "scenario", "MIGRATE", vm=vid, src=src, dest=mv.dest)

    def log_outcomes(self, outcomes) -> None:
        w = self.world
        topo = w.topology
        for o in outcomes:
            fields = dict(
                src=o.source, dst=o.target,
                src_groups=topo.groups_of(o.source), dst_groups=topo.groups_of(o.target),
                dst_role=topo.vm(o.target).role.value,
            )
            if o.kind is OutcomeKind.INFECTED:
                fields["nonce"] = o.payload.instance_nonce
            w.log.emit(o.tick, f"worm:{o.family_id}", o.kind.value.upper(), **fields)

    def run(self) -> None:
        w, ctl = self.world, self.controller
        for ncfg in self.cfg.networks:
            self.add_network(ncfg)
        for tick in range(self.cfg.max_ticks):
            w.tick = tick
            self.apply_events(tick)
            ctl.controller_tick()
            if not self.timeline or self.timeline[-1][1] != len(ctl.inspectors):
                self.timeline.append((tick, len(ctl.inspectors)))
            ctl.step_inspectors()
            for ins in ctl.inspectors.values():
                if ins.network is not None:
                    self.inspected.add(ins.network)
            self.log_outcomes(w.engine.step(tick))
        w.tick = self.cfg.max_ticks - 1
        ctl.shutdown()
        w.log.emit(w.tick, "scenario", "END")
        w.log.close()

    def metrics(self) -> MetricsReport:
        cfg, w = self.cfg, self.world
        records = list(w.db)
        m = MetricsReport(cfg.name, cfg.seed, cfg.max_ticks, total_collections=len(records))
        for nid in sorted(self.net_names):
            name = self.net_names[nid]
            m.per_network_collections[name] = sum(r.network_id == nid for r in records)
        for fam in sorted(w.worms):
            m.per_family_distinct[fam] = len({r.payload_bytes for r in records if r.ground_truth_family == fam})
        for name, redo in sorted(self.controller.redo_by_template.items()):
            m.redo_by_template[name] = TemplateRedo(redo, w.templates[name].disk_gb * GIB)
        m.false_positives = sum(self.net_names[r.network_id] not in self.worm_bearing for r in records)
        m.false_negatives = sum(
            1 for nid in self.inspected
            if self.net_names[nid] in self.worm_bearing and m.per_network_collections[self.net_names[nid]] == 0
        )
        m.peak_alive_honeypots = w.peak_honeypots
        m.inspector_timeline = self.timeline
        return m


def run_scenario(cfg: ScenarioConfig, out_dir: str | os.PathLike | None = None) -> MetricsReport:
    """Run ``cfg`` to completion. With ``out_dir``, write the four output files.

    Output files from a previous run in the same directory are replaced.
    """
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name in OUTPUT_FILES:
            (out / name).unlink(missing_ok=True)
    run = _Run(cfg, out)
    run.run()
    report = run.metrics()
    if out is not None:
        (out / "report.txt").write_text(emit_report(report, "table"), encoding="utf-8")
        (out / "report.machine").write_text(emit_report(report, "machine"), encoding="utf-8")
    log.info("scenario %s finished: %d collections", cfg.name, report.total_collections)
    return report


def emit_report(m: MetricsReport, fmt: str = "table") -> str:
    if fmt == "machine":
        return json.dumps(m.to_dict(), sort_keys=True, indent=2) + "\n"
    if fmt != "table":
        raise ValueError(f"unknown report format {fmt!r}")
    out = [
        f"scenario  {m.scenario}",
        f"seed  {m.seed}",
        f"ticks  {m.ticks}",
        f"total_collections  {m.total_collections}",
        "",
        "[networks]",
        f"{'network':<24}  {'collections':>11}",
    ]
    out += [f"{k:<24}  {v:>11}" for k, v in m.per_network_collections.items()]
    out += ["", "[families]", f"{'family':<24}  {'distinct':>8}"]
    out += [f"{k:<24}  {v:>8}" for k, v in m.per_family_distinct.items()]
    out += [
        "",
        "[redo]",
        f"{'template':<40}  {'redo_bytes':>12}  {'redo_mib':>9}  {'disk_bytes':>12}  {'disk_gib':>8}  {'ratio_pct':>9}",
    ]
    for name, r in m.redo_by_template.items():
        out.append(
            f"{name:<40}  {r.redo_bytes:>12}  {r.redo_bytes / 2**20:>9.2f}  {r.disk_bytes:>12}"
            f"  {r.disk_bytes / GIB:>8.2f}  {100 * r.ratio:>9.4f}"
        )
    out += [
        "",
        f"false_positives  {m.false_positives}",
        f"false_negatives  {m.false_negatives}",
        f"peak_alive_honeypots  {m.peak_alive_honeypots}",
        "inspector_timeline  " + (" ".join(f"{t}:{c}" for t, c in m.inspector_timeline) or "-"),
    ]
    return "\n".join(out) + "\n"


def parse_table_report(text: str) -> dict:
    """Read the table format back into plain numbers (used to cross-check formats)."""
    d: dict = {"per_network_collections": {}, "per_family_distinct": {}, "redo_by_template": {}}
    section = None
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("["):
            section = line.strip("[]")
            continue
        if section is None or line.startswith(("false_", "peak_", "inspector_")):
            key, _, val = line.partition("  ")
            val = val.strip()
            if key == "inspector_timeline":
                d[key] = [] if val == "-" else [list(map(int, p.split(":"))) for p in val.split()]
            else:
                d[key] = int(val) if val.lstrip("-").isdigit() else val
            continue
        cols = line.split("  ")
        cols = [c.strip() for c in cols if c.strip()]
        if cols[0] in ("network", "family", "template"):
            continue
        if section == "networks":
            d["per_network_collections"][cols[0]] = int(cols[1])
        elif section == "families":
            d["per_family_distinct"][cols[0]] = int(cols[1])
        elif section == "redo":
            d["redo_by_template"][cols[0]] = {
                "redo_bytes": int(cols[1]), "disk_bytes": int(cols[3]), "ratio_pct": float(cols[5]),
            }
    return d


def recompute_from_outputs(out_dir: str | os.PathLike) -> dict:
    """Recompute the report counts from ``run.log`` and ``collections.jsonl`` alone."""
    out = Path(out_dir)
    records = list(CollectionDB(out / "collections.jsonl"))
    names: dict[int, str] = {}
    vm_net: dict[int, int] = {}
    seeded: set[str] = set()
    inspected: set[int] = set()
    redo: dict[str, int] = {}
    alive: set[int] = set()
    peak = 0
    for line in (out / "run.log").read_text(encoding="utf-8").splitlines():
        _, _, event, f = parse_log_line(line)
        if event == "ADD_NETWORK":
            names[int(f["network"])] = f["name"]
            if f["vms"] != "-":
                vm_net.update((int(v), int(f["network"])) for v in f["vms"].split(","))
        elif event == "SEED":
            seeded.add(names[vm_net[int(f["dst"])]])
        elif event == "PROBE":
            inspected.add(int(f["network"]))
        elif event == "HP_CREATE":
            alive.add(int(f["honeypot"]))
            peak = max(peak, len(alive))
        elif event == "HP_DESTROY":
            alive.discard(int(f["honeypot"]))
            redo[f["template"]] = max(redo.get(f["template"], 0), int(f["redo_bytes"]))
    per_net = {names[n]: sum(r.network_id == n for r in records) for n in sorted(names)}
    fams = sorted({r.ground_truth_family for r in records})
    return {
        "total_collections": len(records),
        "per_network_collections": per_net,
        "per_family_distinct": {
            fam: len({r.payload_bytes for r in records if r.ground_truth_family == fam}) for fam in fams
        },
        "redo_bytes": redo,
        "false_positives": sum(names[r.network_id] not in seeded for r in records),
        "false_negatives": sum(1 for n in inspected if names[n] in seeded and per_net[names[n]] == 0),
        "peak_alive_honeypots": peak,
    }
