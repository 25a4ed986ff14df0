"""Worm families as parameterised behaviours driven through the topology.

Each family has a fixed invariant byte region and a seeded mutable region.
Propagation is one attempt per (source, target, family) per tick and goes
through ``Topology.can_communicate``; nothing crosses a port group.
"""

from __future__ import annotations

import enum
import hashlib
from collections.abc import Mapping
from dataclasses import dataclass

from .cloud_model import Topology, VmHandle, _vid
from .vm_state import GuestVM, ProcessEntry, content_tag, drop_path


class ScanStrategy(str, enum.Enum):
    SWEEP = "sweep_port_group"
    HARVEST = "address_harvest"


@dataclass(frozen=True)
class WormSpec:
    family_id: str
    invariant_region: bytes
    mutable_region_len: int = 16
    polymorphic: bool = True
    checks_existence: bool = False
    dormancy_ticks: int = 0
    scan_strategy: ScanStrategy = ScanStrategy.SWEEP
    disk_write_sectors: int = 0
    process_name: str = ""
    hidden: bool = False
    # load into this (trusted) process as a module instead of starting a process
    host_process: str | None = None

    def __post_init__(self) -> None:
        if len(self.invariant_region) < 1:
            raise ValueError(f"worm {self.family_id!r}: invariant_region must be non-empty")
        for attr in ("mutable_region_len", "dormancy_ticks", "disk_write_sectors"):
            if getattr(self, attr) < 0:
                raise ValueError(f"worm {self.family_id!r}: {attr} must be >= 0")
        object.__setattr__(self, "scan_strategy", ScanStrategy(self.scan_strategy))
        if not self.process_name:
            object.__setattr__(self, "process_name", f"{self.family_id}.exe")

    @property
    def canonical_payload(self) -> bytes:
        return _assemble(self, _mutable_bytes(self.family_id, "canonical", self.mutable_region_len))


@dataclass(frozen=True)
class Payload:
    bytes: bytes
    family_id: str
    instance_nonce: int


class Phase(str, enum.Enum):
    DORMANT = "dormant_in_memory"
    ACTIVE = "active_on_disk"


@dataclass
class InfectionState:
    vm: int
    family_id: str
    payload: Payload
    phase: Phase
    infected_at: int


class OutcomeKind(str, enum.Enum):
    INFECTED = "infected"
    REFUSED_EXISTING = "refused_existing"
    BLOCKED_ISOLATION = "blocked_isolation"
    ALREADY_OWN_FAMILY = "already_own_family"


@dataclass(frozen=True)
class InfectionOutcome:
    kind: OutcomeKind
    source: int
    target: int
    tick: int
    family_id: str
    payload: Payload | None = None
    # port groups source and target shared at delivery time
    shared_groups: tuple[int, ...] = ()


def _mutable_bytes(family_id: str, seed: object, n: int) -> bytes:
    if n == 0:
        return b""
    return hashlib.shake_256(f"{family_id}:{seed}".encode()).digest(n)


def _assemble(spec: WormSpec, mutable: bytes) -> bytes:
    half = len(mutable) // 2
    return mutable[:half] + spec.invariant_region + mutable[half:]


def mutate_payload(spec: WormSpec, rng_seed: int) -> Payload:
    if not spec.polymorphic:
        return Payload(spec.canonical_payload, spec.family_id, rng_seed)
    mutable = _mutable_bytes(spec.family_id, rng_seed, spec.mutable_region_len)
    return Payload(_assemble(spec, mutable), spec.family_id, rng_seed)


class WormEngine:
    """Infection bookkeeping lives on each guest (``GuestVM.infections``) so a
    snapshot restore reverts it together with memory and disk."""

    def __init__(
        self,
        topology: Topology,
        guests: dict[int, GuestVM],
        specs: Mapping[str, WormSpec],
        seed: int = 0,
        address_books: dict[int, set[int]] | None = None,
    ) -> None:
        self.topology = topology
        self.guests = guests
        self.specs = specs  # shared with the owning World
        self.seed = seed
        self.address_books = address_books if address_books is not None else {}
        self._counter = 0

    def _guest(self, vm: VmHandle | int) -> GuestVM:
        self.topology.vm(vm)
        try:
            return self.guests[_vid(vm)]
        except KeyError:
            raise KeyError(f"VM {_vid(vm)} has no guest state") from None

    def next_seed(self) -> int:
        self._counter += 1
        return ((self.seed & 0xFFFFFFFF) << 32) | self._counter

    def infected_families(self, vm: VmHandle | int) -> list[str]:
        return sorted(self._guest(vm).infections)

    # -- install -------------------------------------------------------

    def _install(self, spec: WormSpec, guest: GuestVM, tick: int, rng_seed: int) -> Payload:
        payload = mutate_payload(spec, rng_seed)
        host = guest.memory.find(spec.host_process) if spec.host_process else None
        if host is not None and not host.hidden:
            host.modules.append(spec.process_name)
            host.module_payloads[spec.process_name] = (spec.family_id, payload.bytes, rng_seed)
        else:
            guest.memory.running.append(
                ProcessEntry(
                    name=spec.process_name,
                    modules=[spec.process_name],
                    hidden=spec.hidden,
                    owner_family=spec.family_id,
                    payload_bytes=payload.bytes,
                    instance_nonce=rng_seed,
                )
            )
        state = InfectionState(guest.vm_id, spec.family_id, payload, Phase.DORMANT, tick)
        guest.infections[spec.family_id] = state
        if spec.dormancy_ticks == 0:
            self._activate(spec, guest, state)
        return payload

    def _activate(self, spec: WormSpec, guest: GuestVM, state: InfectionState) -> None:
        state.phase = Phase.ACTIVE
        total = guest.disk.total_sectors
        n = min(spec.disk_write_sectors, total)
        if n:
            h = int.from_bytes(hashlib.blake2b(spec.family_id.encode(), digest_size=8).digest(), "big")
            start = h % (total - n + 1)
            guest.redo.write(start, n, content_tag(spec.family_id, state.payload.instance_nonce))
        guest.redo.file_changes.append((drop_path(guest.template, spec.process_name), "created"))
        if guest.template.is_windows:
            guest.redo.file_changes.append(("C:/WINDOWS/system32/config/software", "modified"))

    def seed_infection(self, vm: VmHandle | int, family_id: str, tick: int = 0) -> Payload:
        """Plant an initial infection without a source (scenario set-up)."""
        guest = self._guest(vm)
        spec = self.specs[family_id]
        if family_id in guest.infections:
            return guest.infections[family_id].payload
        return self._install(spec, guest, tick, self.next_seed())

    # -- operations ----------------------------------------------------

    def select_targets(self, spec: WormSpec, source: VmHandle | int, tick: int = 0) -> list[int]:
        src = _vid(source)
        peers = self.topology.peers(src)
        if spec.scan_strategy is ScanStrategy.SWEEP:
            return peers
        book = self.address_books.get(src, set())
        return [p for p in peers if p in book]

    def attempt_infect(
        self,
        spec: WormSpec,
        source: VmHandle | int,
        target: VmHandle | int,
        tick: int,
        rng_seed: int | None = None,
    ) -> InfectionOutcome:
        src, dst = _vid(source), _vid(target)
        src_guest = self._guest(src)
        dst_guest = self._guest(dst)
        if spec.family_id not in src_guest.infections:
            raise ValueError(f"VM {src} is not infected with {spec.family_id!r}")
        fam = spec.family_id
        if not self.topology.can_communicate(src, dst):
            return InfectionOutcome(OutcomeKind.BLOCKED_ISOLATION, src, dst, tick, fam)
        shared = tuple(sorted(self.topology.groups_of(src) & self.topology.groups_of(dst)))
        if fam in dst_guest.infections:
            kind = OutcomeKind.REFUSED_EXISTING if spec.checks_existence else OutcomeKind.ALREADY_OWN_FAMILY
            return InfectionOutcome(kind, src, dst, tick, fam, shared_groups=shared)
        if rng_seed is None:
            rng_seed = self.next_seed()
        payload = self._install(spec, dst_guest, tick, rng_seed)
        return InfectionOutcome(OutcomeKind.INFECTED, src, dst, tick, fam, payload, shared)

    def advance_phases(self, tick: int) -> None:
        for vid in sorted(self.guests):
            guest = self.guests[vid]
            if not guest.alive:
                continue
            for fam in sorted(guest.infections):
                state = guest.infections[fam]
                spec = self.specs[fam]
                if state.phase is Phase.DORMANT and tick >= state.infected_at + spec.dormancy_ticks:
                    self._activate(spec, guest, state)

    def step(self, tick: int) -> list[InfectionOutcome]:
        self.advance_phases(tick)
        sources = [
            (vid, fam)
            for vid in sorted(self.guests)
            if self.guests[vid].alive and vid in self.topology.vms
            for fam in sorted(self.guests[vid].infections)
        ]
        outcomes = []
        for vid, fam in sources:
            spec = self.specs[fam]
            for dst in self.select_targets(spec, vid, tick):
                outcomes.append(self.attempt_infect(spec, vid, dst, tick))
        outcomes.sort(key=lambda o: (o.source, o.target, o.family_id))
        return outcomes


def step_worms(engine: WormEngine, tick: int) -> list[InfectionOutcome]:
    return engine.step(tick)
