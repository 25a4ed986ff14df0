"""In-memory datacenter topology: servers, distributed switches, port groups.

Port groups are the only isolation domain. Two VMs can exchange traffic iff
they share a port group; being co-resident on one physical server grants
nothing.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field


class TopologyError(Exception):
    """Base class for topology failures."""


class UnknownEntityError(TopologyError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class MembershipError(TopologyError, ValueError):
    pass


class CapacityError(TopologyError):
    pass


class VmRole(str, enum.Enum):
    CUSTOMER = "customer"
    HONEYPOT = "honeypot"


class GroupKind(str, enum.Enum):
    CUSTOMER = "customer"
    PAIR = "pair"


@dataclass
class PhysicalServer:
    id: str
    capacity: int | None = None  # None means unlimited
    residents: set[int] = field(default_factory=set)

    def has_room(self) -> bool:
        return self.capacity is None or len(self.residents) < self.capacity


@dataclass
class DistributedSwitch:
    id: str
    port_groups: set[int] = field(default_factory=set)


@dataclass
class PortGroup:
    id: int
    switch: str
    kind: GroupKind = GroupKind.CUSTOMER
    members: set[int] = field(default_factory=set)


@dataclass
class VirtualNetwork:
    id: int
    port_group: int
    customer_vms: tuple[int, ...] = ()
    software_profile: frozenset[str] = frozenset()
    name: str = ""


@dataclass
class VmHandle:
    id: int
    host: str
    role: VmRole = VmRole.CUSTOMER


def _vid(vm: VmHandle | int) -> int:
    return vm.id if isinstance(vm, VmHandle) else int(vm)


class Topology:
    """Mutable topology inventory with deterministic id allocation.

    VM, port-group and network ids come from separate monotonic counters
    starting at 1, so two runs that perform the same operations in the same
    order end up with identical ids.
    """

    def __init__(self) -> None:
        self.servers: dict[str, PhysicalServer] = {}
        self.switches: dict[str, DistributedSwitch] = {}
        self.port_groups: dict[int, PortGroup] = {}
        self.networks: dict[int, VirtualNetwork] = {}
        self.vms: dict[int, VmHandle] = {}
        self._vm_ids = itertools.count(1)
        self._pg_ids = itertools.count(1)
        self._net_ids = itertools.count(1)
        self._placement = 0
        # vm id -> set of port groups it belongs to
        self._membership: dict[int, set[int]] = {}

    # -- inventory -----------------------------------------------------

    def add_server(self, server_id: str, capacity: int | None = None) -> PhysicalServer:
        if server_id in self.servers:
            raise MembershipError(f"duplicate server id {server_id!r}")
        srv = PhysicalServer(server_id, capacity)
        self.servers[server_id] = srv
        return srv

    def add_switch(self, switch_id: str) -> DistributedSwitch:
        if switch_id in self.switches:
            raise MembershipError(f"duplicate switch id {switch_id!r}")
        sw = DistributedSwitch(switch_id)
        self.switches[switch_id] = sw
        return sw

    def vm(self, vm: VmHandle | int) -> VmHandle:
        try:
            return self.vms[_vid(vm)]
        except KeyError:
            raise UnknownEntityError(f"unknown VM id {_vid(vm)}") from None

    def group(self, group_id: int) -> PortGroup:
        try:
            return self.port_groups[group_id]
        except KeyError:
            raise UnknownEntityError(f"unknown port group id {group_id}") from None

    def network(self, net_id: int) -> VirtualNetwork:
        try:
            return self.networks[net_id]
        except KeyError:
            raise UnknownEntityError(f"unknown network id {net_id}") from None

    def groups_of(self, vm: VmHandle | int) -> frozenset[int]:
        self.vm(vm)
        return frozenset(self._membership[_vid(vm)])

    # -- VMs -----------------------------------------------------------

    def _place(self) -> str:
        if not self.servers:
            self.add_server("server-1")
        order = sorted(self.servers)
        for step in range(len(order)):
            cand = order[(self._placement + step) % len(order)]
            if self.servers[cand].has_room():
                self._placement = (self._placement + step + 1) % len(order)
                return cand
        raise CapacityError("no physical server has spare capacity")

    def create_vm(self, role: VmRole = VmRole.CUSTOMER, host: str | None = None) -> VmHandle:
        if host is None:
            host = self._place()
        else:
            srv = self.servers.get(host)
            if srv is None:
                raise UnknownEntityError(f"unknown server id {host!r}")
            if not srv.has_room():
                raise CapacityError(f"server {host!r} is full")
        handle = VmHandle(next(self._vm_ids), host, role)
        self.vms[handle.id] = handle
        self.servers[host].residents.add(handle.id)
        self._membership[handle.id] = set()
        return handle

    def destroy_vm(self, vm: VmHandle | int) -> None:
        handle = self.vm(vm)
        for gid in sorted(self._membership[handle.id]):
            self.port_groups[gid].members.discard(handle.id)
        del self._membership[handle.id]
        self.servers[handle.host].residents.discard(handle.id)
        del self.vms[handle.id]

    def migrate_vm(self, vm: VmHandle | int, dest: str) -> None:
        handle = self.vm(vm)
        srv = self.servers.get(dest)
        if srv is None:
            raise UnknownEntityError(f"unknown server id {dest!r}")
        if handle.host == dest:
            return
        if not srv.has_room():
            raise CapacityError(f"server {dest!r} is full")
        self.servers[handle.host].residents.discard(handle.id)
        srv.residents.add(handle.id)
        handle.host = dest

    # -- port groups ---------------------------------------------------

    def create_port_group(self, switch: str, kind: GroupKind = GroupKind.CUSTOMER) -> PortGroup:
        sw = self.switches.get(switch)
        if sw is None:
            raise UnknownEntityError(f"unknown switch id {switch!r}")
        pg = PortGroup(next(self._pg_ids), switch, kind)
        self.port_groups[pg.id] = pg
        sw.port_groups.add(pg.id)
        return pg

    def destroy_port_group(self, group_id: int) -> None:
        pg = self.group(group_id)
        for vid in sorted(pg.members):
            self._membership[vid].discard(group_id)
        self.switches[pg.switch].port_groups.discard(group_id)
        del self.port_groups[group_id]

    def attach_vm(self, vm: VmHandle | int, group_id: int) -> None:
        handle = self.vm(vm)
        pg = self.group(group_id)
        if handle.id in pg.members:
            raise MembershipError(f"VM {handle.id} already attached to port group {group_id}")
        if pg.kind is GroupKind.CUSTOMER:
            for other in self._membership[handle.id]:
                if self.port_groups[other].kind is GroupKind.CUSTOMER:
                    raise MembershipError(
                        f"VM {handle.id} already belongs to customer port group {other}"
                    )
        pg.members.add(handle.id)
        self._membership[handle.id].add(group_id)

    def detach_vm(self, vm: VmHandle | int, group_id: int) -> None:
        handle = self.vm(vm)
        pg = self.group(group_id)
        if handle.id not in pg.members:
            raise MembershipError(f"VM {handle.id} is not a member of port group {group_id}")
        pg.members.discard(handle.id)
        self._membership[handle.id].discard(group_id)

    def can_communicate(self, a: VmHandle | int, b: VmHandle | int) -> bool:
        ga = self.groups_of(a)
        gb = self.groups_of(b)
        if _vid(a) == _vid(b):
            return True
        return not ga.isdisjoint(gb)

    def peers(self, vm: VmHandle | int) -> list[int]:
        """Every other VM sharing at least one port group with ``vm``, in id order."""
        vid = _vid(vm)
        out: set[int] = set()
        for gid in self.groups_of(vid):
            out |= self.port_groups[gid].members
        out.discard(vid)
        return sorted(out)

    # -- networks ------------------------------------------------------

    def create_network(
        self,
        switch: str,
        vm_count: int,
        software_profile: frozenset[str] | set[str] = frozenset(),
        name: str = "",
    ) -> VirtualNetwork:
        if switch not in self.switches:
            raise UnknownEntityError(f"unknown switch id {switch!r}")
        if vm_count < 0:
            raise ValueError("vm_count must be >= 0")
        pg = self.create_port_group(switch)
        vms = []
        for _ in range(vm_count):
            handle = self.create_vm(VmRole.CUSTOMER)
            self.attach_vm(handle, pg.id)
            vms.append(handle.id)
        net_id = next(self._net_ids)
        net = VirtualNetwork(
            net_id, pg.id, tuple(vms), frozenset(software_profile), name or f"net-{net_id}"
        )
        self.networks[net_id] = net
        return net

    def destroy_network(self, net_id: int) -> VirtualNetwork:
        """Remove a network, its customer VMs and its port group.

        Honeypots still attached are detached, not destroyed; their owner is
        expected to tear them down.
        """
        net = self.network(net_id)
        for vid in net.customer_vms:
            if vid in self.vms:
                self.destroy_vm(vid)
        self.destroy_port_group(net.port_group)
        del self.networks[net_id]
        return net

    def list_networks(self) -> list[VirtualNetwork]:
        return [self.networks[k] for k in sorted(self.networks)]

    def reachability(self) -> dict[tuple[int, int], bool]:
        ids = sorted(self.vms)
        return {(a, b): self.can_communicate(a, b) for a in ids for b in ids}
