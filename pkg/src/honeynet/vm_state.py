"""Simulated guest state for honeypot and customer VMs.

A guest is a process table (the "memory" an out-of-band inspector can list),
a sparse sector-addressed disk whose writes land in a REDO log on top of a
read-only base image, and a set of snapshot references it can be reverted to.
"""

from __future__ import annotations

import copy
import enum
import hashlib
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from typing import Any

SECTOR_SIZE = 512
GIB = 2**30

RECORD_KINDS = ("HIDDEN", "MOD", "RUN", "TERM")


class UnknownTemplateError(KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class VmDestroyedError(RuntimeError):
    pass


class ForeignSnapshotError(ValueError):
    pass


@dataclass(frozen=True)
class TemplateSpec:
    name: str
    os_label: str
    ram_mb: int
    disk_gb: int
    processors: int = 1
    software_set: frozenset[str] = frozenset()
    baseline_processes: tuple[tuple[str, tuple[str, ...]], ...] = ()

    def __post_init__(self) -> None:
        if self.disk_gb <= 0:
            raise ValueError(f"template {self.name!r}: disk_gb must be > 0")
        if self.ram_mb <= 0:
            raise ValueError(f"template {self.name!r}: ram_mb must be > 0")
        if self.processors < 1:
            raise ValueError(f"template {self.name!r}: processors must be >= 1")
        object.__setattr__(self, "software_set", frozenset(self.software_set))
        object.__setattr__(
            self,
            "baseline_processes",
            tuple((str(p), tuple(mods)) for p, mods in self.baseline_processes),
        )

    @property
    def total_sectors(self) -> int:
        return self.disk_gb * GIB // SECTOR_SIZE

    @property
    def disk_bytes(self) -> int:
        return self.disk_gb * GIB

    @property
    def is_windows(self) -> bool:
        return "windows" in self.os_label.lower()


# Stand-in for customer guests: never inspected, only carries infection state.
CUSTOMER_TEMPLATE = TemplateSpec(
    name="customer-guest",
    os_label="generic",
    ram_mb=1024,
    disk_gb=10,
    baseline_processes=(("init", ("libc",)),),
)


@dataclass
class ProcessEntry:
    name: str
    modules: list[str] = field(default_factory=list)
    hidden: bool = False
    owner_family: str | None = None
    payload_bytes: bytes | None = None
    instance_nonce: int | None = None
    # module id -> (family, payload bytes, nonce) for code injected into this process
    module_payloads: dict[str, tuple[str, bytes, int]] = field(default_factory=dict)


@dataclass
class GuestMemory:
    running: list[ProcessEntry] = field(default_factory=list)
    terminated: list[ProcessEntry] = field(default_factory=list)

    def linked(self) -> list[ProcessEntry]:
        """Processes visible by walking the guest's own process list."""
        return [p for p in self.running if not p.hidden]

    def hidden(self) -> list[ProcessEntry]:
        return [p for p in self.running if p.hidden]

    def find(self, name: str) -> ProcessEntry | None:
        for p in self.running:
            if p.name == name:
                return p
        return None

    def terminate(self, name: str) -> ProcessEntry:
        for i, p in enumerate(self.running):
            if p.name == name:
                self.terminated.append(self.running.pop(i))
                return p
        raise KeyError(name)


def merge_extents(extents: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    """Coalesce ``(start, length)`` extents into sorted, disjoint, non-adjacent ranges."""
    out: list[list[int]] = []
    for start, length in sorted(e for e in extents if e[1] > 0):
        if out and start <= out[-1][0] + out[-1][1]:
            end = max(out[-1][0] + out[-1][1], start + length)
            out[-1][1] = end - out[-1][0]
        else:
            out.append([start, length])
    return [(s, n) for s, n in out]


@dataclass
class RedoLog:
    """Changed-sector log over a read-only base image.

    Writes are kept as an ordered extent list ``(start, length, content_tag)``
    rather than one entry per sector; a full worm drop is tens of thousands of
    sectors and the log must be cheap to snapshot.
    """

    extents: list[tuple[int, int, bytes]] = field(default_factory=list)
    file_changes: list[tuple[str, str]] = field(default_factory=list)

    def write(self, start: int, length: int, content: bytes) -> None:
        if length <= 0:
            return
        self.extents.append((start, length, bytes(content)))

    def ranges(self, since: int = 0) -> list[tuple[int, int]]:
        return merge_extents((s, n) for s, n, _ in self.extents[since:])

    @property
    def changed_count(self) -> int:
        return sum(n for _, n in self.ranges())

    @property
    def size_bytes(self) -> int:
        return self.changed_count * SECTOR_SIZE

    @property
    def changed(self) -> Mapping[int, bytes]:
        """Sector index -> current content. Materialises every sector; for tests."""
        out: dict[int, bytes] = {}
        for s, n, tag in self.extents:
            for i in range(s, s + n):
                out[i] = _sector_bytes(tag)
        return dict(sorted(out.items()))

    def read_sector(self, index: int) -> bytes | None:
        for s, n, tag in reversed(self.extents):
            if s <= index < s + n:
                return _sector_bytes(tag)
        return None


def _sector_bytes(tag: bytes) -> bytes:
    if not tag:
        return bytes(SECTOR_SIZE)
    reps = -(-SECTOR_SIZE // len(tag))
    return (tag * reps)[:SECTOR_SIZE]


@dataclass
class GuestDisk:
    total_sectors: int
    base_image_id: str
    sector_size: int = SECTOR_SIZE
    redo: RedoLog = field(default_factory=RedoLog)


class SnapshotKind(str, enum.Enum):
    PRISTINE = "pristine"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class VmSnapshotRef:
    id: str
    vm: int
    tick: int
    kind: SnapshotKind


@dataclass(frozen=True)
class MemorySnapshot:
    vm: int
    tick: int
    template: str
    running_list: tuple[str, ...]
    terminated_list: tuple[str, ...]
    hidden_list: tuple[str, ...]
    modules_by_process: tuple[tuple[str, tuple[str, ...]], ...]

    def records(self) -> list[tuple[str, str, str]]:
        recs = [("RUN", n, "") for n in self.running_list]
        recs += [("TERM", n, "") for n in self.terminated_list]
        recs += [("HIDDEN", n, "") for n in self.hidden_list]
        for name, mods in self.modules_by_process:
            recs += [("MOD", name, m) for m in mods]
        return sorted(recs)

    def to_text(self) -> str:
        return "".join(f"{k}\t{n}\t{m}\n" for k, n, m in self.records())

    @classmethod
    def from_text(cls, text: str, *, vm: int, tick: int, template: str) -> MemorySnapshot:
        run: list[str] = []
        term: list[str] = []
        hid: list[str] = []
        mods: dict[str, list[str]] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[0] not in RECORD_KINDS:
                raise ValueError(f"line {lineno}: malformed snapshot record {line!r}")
            kind, name, mod = parts
            if kind == "RUN":
                run.append(name)
            elif kind == "TERM":
                term.append(name)
            elif kind == "HIDDEN":
                hid.append(name)
            else:
                mods.setdefault(name, []).append(mod)
        return cls(
            vm, tick, template, tuple(run), tuple(term), tuple(hid),
            tuple((n, tuple(m)) for n, m in sorted(mods.items())),
        )

    def modules(self) -> dict[str, frozenset[str]]:
        return {n: frozenset(m) for n, m in self.modules_by_process}


@dataclass
class _GuestState:
    memory: GuestMemory
    redo: RedoLog
    infections: dict[str, Any]


class GuestVM:
    """One simulated guest. ``infections`` is opaque here; the worm engine owns it."""

    def __init__(self, vm_id: int, template: TemplateSpec, tick: int = 0) -> None:
        self.vm_id = vm_id
        self.template = template
        self.memory = GuestMemory(
            running=[ProcessEntry(name, list(mods)) for name, mods in template.baseline_processes]
        )
        self.disk = GuestDisk(template.total_sectors, template.name)
        self.infections: dict[str, Any] = {}
        self.generation = 0
        self.alive = True
        self.created_at = tick
        self._snap_seq = 0
        self._snapshots: dict[str, tuple[VmSnapshotRef, _GuestState, int]] = {}
        self.pristine = self.take_snapshot(tick, SnapshotKind.PRISTINE)

    @property
    def redo(self) -> RedoLog:
        return self.disk.redo

    def _ensure_alive(self) -> None:
        if not self.alive:
            raise VmDestroyedError(f"VM {self.vm_id} has been destroyed")

    def _capture(self) -> _GuestState:
        return _GuestState(
            copy.deepcopy(self.memory), copy.deepcopy(self.disk.redo), copy.deepcopy(self.infections)
        )

    def take_snapshot(self, tick: int, kind: SnapshotKind = SnapshotKind.PERIODIC) -> VmSnapshotRef:
        self._ensure_alive()
        self._snap_seq += 1
        ref = VmSnapshotRef(f"snap-{self.vm_id}-{self._snap_seq}", self.vm_id, tick, kind)
        self._snapshots[ref.id] = (ref, self._capture(), self._snap_seq)
        return ref

    def snapshots(self) -> list[VmSnapshotRef]:
        return [v[0] for v in sorted(self._snapshots.values(), key=lambda v: v[2])]

    def _lookup(self, ref: VmSnapshotRef) -> tuple[VmSnapshotRef, _GuestState, int]:
        entry = self._snapshots.get(ref.id)
        if ref.vm != self.vm_id or entry is None or entry[0] != ref:
            raise ForeignSnapshotError(f"snapshot {ref.id} does not belong to VM {self.vm_id}")
        return entry

    def destroy(self) -> None:
        self.alive = False
        self._snapshots.clear()


def instantiate_from_template(
    template: TemplateSpec | str,
    vm_id: int,
    tick: int = 0,
    catalog: Mapping[str, TemplateSpec] | None = None,
) -> GuestVM:
    if isinstance(template, str):
        if catalog is None or template not in catalog:
            raise UnknownTemplateError(f"unknown template {template!r}")
        template = catalog[template]
    return GuestVM(vm_id, template, tick)


def take_memory_snapshot(vm: GuestVM, tick: int) -> MemorySnapshot:
    vm._ensure_alive()
    mem = vm.memory
    mods: dict[str, set[str]] = {}
    for p in mem.running:
        mods.setdefault(p.name, set()).update(p.modules)
    return MemorySnapshot(
        vm=vm.vm_id,
        tick=tick,
        template=vm.template.name,
        running_list=tuple(sorted(p.name for p in mem.linked())),
        terminated_list=tuple(sorted(p.name for p in mem.terminated)),
        hidden_list=tuple(sorted(p.name for p in mem.hidden())),
        modules_by_process=tuple((n, tuple(sorted(m))) for n, m in sorted(mods.items()) if m),
    )


def query_changed_disk_areas(vm: GuestVM, since: VmSnapshotRef) -> list[tuple[int, int]]:
    _, state, _ = vm._lookup(since)
    return vm.redo.ranges(len(state.redo.extents))


def list_changed_files(vm: GuestVM, since: VmSnapshotRef) -> list[tuple[str, str]]:
    _, state, _ = vm._lookup(since)
    fresh = vm.redo.file_changes[len(state.redo.file_changes):]
    # stable sort keeps per-path chronology
    return sorted(fresh, key=lambda fc: fc[0])


def restore_to_snapshot(vm: GuestVM, ref: VmSnapshotRef) -> None:
    """Revert memory, disk and infection bookkeeping to ``ref``.

    Snapshots taken after ``ref`` describe an abandoned timeline and are
    discarded; the pristine snapshot is never discarded.
    """
    vm._ensure_alive()
    _, state, seq = vm._lookup(ref)
    vm.memory = copy.deepcopy(state.memory)
    vm.disk.redo = copy.deepcopy(state.redo)
    vm.infections = copy.deepcopy(state.infections)
    vm.generation += 1
    for sid in [k for k, v in vm._snapshots.items() if v[2] > seq]:
        del vm._snapshots[sid]


def redo_log_size(vm: GuestVM) -> int:
    return vm.redo.size_bytes


def content_tag(*parts: object) -> bytes:
    return hashlib.blake2b("|".join(map(str, parts)).encode(), digest_size=16).digest()


def drop_path(template: TemplateSpec, filename: str) -> str:
    if template.is_windows:
        return f"C:/WINDOWS/system32/{filename}"
    return f"/usr/lib/.cache/{filename}"
