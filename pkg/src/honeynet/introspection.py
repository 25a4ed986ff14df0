"""Out-of-band Checker: clean baselines, snapshot diffing, payload carving."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .vm_state import (
    GuestVM,
    MemorySnapshot,
    TemplateSpec,
    instantiate_from_template,
    take_memory_snapshot,
)
from .worm_engine import Payload


class TemplateMismatchError(ValueError):
    pass


class StaleReportError(RuntimeError):
    pass


@dataclass(frozen=True)
class BaselineProfile:
    template: str
    known_processes: frozenset[str]
    known_modules: dict[str, frozenset[str]] = field(hash=False)

    def to_text(self) -> str:
        lines = [f"TEMPLATE\t{self.template}\t"]
        lines += [f"PROC\t{p}\t" for p in sorted(self.known_processes)]
        for proc in sorted(self.known_modules):
            lines += [f"MOD\t{proc}\t{m}" for m in sorted(self.known_modules[proc])]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class AnomalyReport:
    vm: int
    tick: int
    template: str
    unknown_processes: frozenset[str] = frozenset()
    unknown_modules: frozenset[tuple[str, str]] = frozenset()
    hidden_processes: frozenset[str] = frozenset()
    changed_sector_total: int = 0
    changed_files: tuple[tuple[str, str], ...] = ()
    vm_generation: int = 0

    def is_empty(self, churn_tolerance: int = 0) -> bool:
        return (
            not self.unknown_processes
            and not self.unknown_modules
            and not self.hidden_processes
            and not self.changed_files
            and self.changed_sector_total <= churn_tolerance
        )

    @property
    def anomalous_processes(self) -> frozenset[str]:
        return self.unknown_processes | self.hidden_processes

    def to_dict(self) -> dict:
        return {
            "vm": self.vm,
            "tick": self.tick,
            "template": self.template,
            "unknown_processes": sorted(self.unknown_processes),
            "unknown_modules": [list(pm) for pm in sorted(self.unknown_modules)],
            "hidden_processes": sorted(self.hidden_processes),
            "changed_sector_total": self.changed_sector_total,
            "changed_files": [list(fc) for fc in self.changed_files],
        }

    @classmethod
    def from_dict(cls, d: dict) -> AnomalyReport:
        return cls(
            vm=d["vm"],
            tick=d["tick"],
            template=d["template"],
            unknown_processes=frozenset(d["unknown_processes"]),
            unknown_modules=frozenset(tuple(pm) for pm in d["unknown_modules"]),
            hidden_processes=frozenset(d["hidden_processes"]),
            changed_sector_total=d["changed_sector_total"],
            changed_files=tuple(tuple(fc) for fc in d["changed_files"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def baseline_from_snapshots(template: str, snaps: list[MemorySnapshot]) -> BaselineProfile:
    procs: set[str] = set()
    mods: dict[str, set[str]] = {}
    for s in snaps:
        procs.update(s.running_list, s.terminated_list, s.hidden_list)
        for name, ms in s.modules_by_process:
            mods.setdefault(name, set()).update(ms)
    return BaselineProfile(template, frozenset(procs), {k: frozenset(v) for k, v in mods.items()})


def build_baseline(t: TemplateSpec, warmup_ticks: int = 0, start_tick: int = 0) -> BaselineProfile:
    """Profile a clean, unnetworked instance of ``t`` over ``warmup_ticks`` ticks."""
    vm = instantiate_from_template(t, vm_id=0, tick=start_tick)
    try:
        snaps = [take_memory_snapshot(vm, start_tick + i) for i in range(warmup_ticks + 1)]
    finally:
        vm.destroy()
    return baseline_from_snapshots(t.name, snaps)


def check(
    s: MemorySnapshot,
    b: BaselineProfile,
    *,
    changed_sector_total: int = 0,
    changed_files: tuple[tuple[str, str], ...] = (),
    vm_generation: int = 0,
) -> AnomalyReport:
    if s.template != b.template:
        raise TemplateMismatchError(
            f"snapshot of template {s.template!r} checked against baseline {b.template!r}"
        )
    seen = set(s.running_list) | set(s.terminated_list)
    unknown_mods = set()
    for proc, mods in s.modules_by_process:
        if proc in b.known_processes:
            known = b.known_modules.get(proc, frozenset())
            unknown_mods.update((proc, m) for m in mods if m not in known)
    return AnomalyReport(
        vm=s.vm,
        tick=s.tick,
        template=s.template,
        unknown_processes=frozenset(seen - b.known_processes),
        unknown_modules=frozenset(unknown_mods),
        hidden_processes=frozenset(s.hidden_list),
        changed_sector_total=changed_sector_total,
        changed_files=tuple(changed_files),
        vm_generation=vm_generation,
    )


def extract_payload(vm: GuestVM, report: AnomalyReport) -> list[Payload]:
    """Carve payload bytes for every process or module the report flags."""
    if report.vm != vm.vm_id or report.vm_generation != vm.generation or not vm.alive:
        raise StaleReportError(f"report for VM {report.vm} no longer matches the guest state")
    found: dict[int, Payload] = {}
    flagged = report.anomalous_processes
    for p in vm.memory.running + vm.memory.terminated:
        if p.name in flagged and p.payload_bytes is not None:
            found.setdefault(p.instance_nonce, Payload(p.payload_bytes, p.owner_family, p.instance_nonce))
        for mod, (fam, data, nonce) in sorted(p.module_payloads.items()):
            if (p.name, mod) in report.unknown_modules or p.name in flagged:
                found.setdefault(nonce, Payload(data, fam, nonce))
    return sorted(found.values(), key=lambda pl: pl.instance_nonce)
