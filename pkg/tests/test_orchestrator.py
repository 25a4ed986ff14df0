import math
import random

import pytest

from honeynet.cloud_model import GroupKind, VmRole
from honeynet.orchestrator import (
    InspectionPolicy,
    InspectorState,
    IntrospectionController,
    OrchestrationError,
    Phase,
    TemplateNotFoundError,
    active_honeypot_count,
    rotate_restore,
    select_template,
)
from honeynet.world import parse_log_line
from honeynet.worm_engine import OutcomeKind

from .conftest import XP, make_worm


def chunk_oracle(ids, npi):
    out, cur = [], []
    for i in ids:
        cur.append(i)
        if len(cur) == npi:
            out.append(cur)
            cur = []
    return out + ([cur] if cur else [])


def run_ticks(world, ctl, ticks, start=0, on_tick=None):
    outcomes = []
    for tick in range(start, start + ticks):
        world.tick = tick
        if on_tick:
            on_tick(tick)
        ctl.controller_tick()
        ctl.step_inspectors()
        for ins in ctl.inspectors.values():
            assert len(ins.honeypots) <= 2
        outcomes += world.engine.step(tick)
    return outcomes


def infected_world(world, spec, vm_count=2):
    world.worms[spec.family_id] = spec
    net = world.add_network("dvs-1", vm_count, frozenset({"iis-5.1"}))
    world.engine.seed_infection(net.customer_vms[0], spec.family_id)
    return net


def test_policy_validation():
    with pytest.raises(ValueError):
        InspectionPolicy(dwell_ticks=0)
    with pytest.raises(ValueError):
        InspectionPolicy(rotation_count=-1)
    with pytest.raises(ValueError):
        InspectionPolicy(networks_per_inspector=0)


def test_chunking_four_networks(world):
    for _ in range(4):
        world.add_network("dvs-1", 1)
    ctl = IntrospectionController(world, InspectionPolicy(networks_per_inspector=2))
    ctl.controller_tick()
    ids = [n.id for n in world.topology.list_networks()]
    assert [ctl.inspectors[i].assigned_networks for i in sorted(ctl.inspectors)] == chunk_oracle(ids, 2)
    assert len(ctl.inspectors) == 2


def test_zero_networks(world):
    ctl = IntrospectionController(world, InspectionPolicy())
    ctl.controller_tick()
    assert ctl.inspectors == {}
    ctl.step_inspectors()
    assert active_honeypot_count(ctl.inspectors.values()) == 0


def test_controller_idempotent(world):
    world.add_network("dvs-1", 1)
    ctl = IntrospectionController(world, InspectionPolicy())
    assert ctl.controller_tick()
    assert ctl.controller_tick() == []


@pytest.mark.parametrize("npi", [1, 2, 3])
def test_random_add_remove_tracks_ceiling(world, npi):
    rng = random.Random(npi)
    ctl = IntrospectionController(world, InspectionPolicy(networks_per_inspector=npi, dwell_ticks=2))
    live = []
    for tick in range(60):
        world.tick = tick
        if live and rng.random() < 0.3:
            victim = live.pop(rng.randrange(len(live)))
            world.remove_network(victim)
        elif rng.random() < 0.4:
            live.append(world.add_network("dvs-1", rng.randint(0, 2)).id)
        ctl.controller_tick()
        assert len(ctl.inspectors) == math.ceil(len(live) / npi)
        got = [ctl.inspectors[i].assigned_networks for i in sorted(ctl.inspectors)]
        assert got == chunk_oracle(sorted(live), npi)
        ctl.step_inspectors()
        for ins in ctl.inspectors.values():
            assert ins.network is None or ins.network in ins.assigned_networks
        assert active_honeypot_count(ctl.inspectors.values()) <= 2 * len(ctl.inspectors)


def test_network_added_mid_run(world):
    world.add_network("dvs-1", 1)
    ctl = IntrospectionController(world, InspectionPolicy(networks_per_inspector=1))
    run_ticks(world, ctl, 3)
    assert len(ctl.inspectors) == 1
    world.add_network("dvs-1", 1)
    ctl.controller_tick()
    assert len(ctl.inspectors) == 2


def test_select_template(catalog):
    assert select_template({"iis-5.1", "msrpc-dcom"}, catalog).name == XP
    # empty profile: tie on zero overlap, lexicographic first
    assert select_template(set(), catalog).name == min(catalog)
    with pytest.raises(TemplateNotFoundError):
        select_template({"x"}, {})


def test_lifecycle_sequence(world):
    spec = make_worm()
    net = infected_world(world, spec)
    pol = InspectionPolicy(dwell_ticks=2, rotation_count=2, snapshot_period_ticks=2, networks_per_inspector=1)
    ctl = IntrospectionController(world, pol)
    phases = []
    for tick in range(12):
        world.tick = tick
        ctl.controller_tick()
        ctl.step_inspectors()
        ins = ctl.inspectors[1]
        phases.append(ins.phase)
        if ins.phase is Phase.PROBE:
            assert active_honeypot_count([ins]) == 1
            assert ins.h1.vm_id in world.topology.group(net.port_group).members
        if ins.phase is Phase.PAIRED:
            assert active_honeypot_count([ins]) == 2
            # h1 no longer on the customer network, h2 never on it
            assert world.topology.group(net.port_group).members == set(net.customer_vms)
            assert world.topology.groups_of(ins.h2.vm_id) == {ins.pair_link}
            assert world.topology.group(ins.pair_link).kind is GroupKind.PAIR
            assert ins.h1.template.name == ins.h2.template.name
        world.engine.step(tick)
    expected = (
        [Phase.PROBE] * 2 + [Phase.PAIRED] * 4 + [Phase.TEARDOWN, Phase.IDLE] + [Phase.PROBE] * 2 + [Phase.PAIRED] * 2
    )
    assert phases == expected


def test_infected_network_records_from_both(world):
    spec = make_worm(mutable_region_len=16)
    infected_world(world, spec)
    pol = InspectionPolicy(dwell_ticks=2, rotation_count=1, snapshot_period_ticks=2, networks_per_inspector=1)
    ctl = IntrospectionController(world, pol)
    run_ticks(world, ctl, 5)
    recs = list(world.db)
    assert len({r.honeypot_id for r in recs}) == 2
    assert all(spec.invariant_region in r.payload_bytes for r in recs)


def test_clean_network_no_records(world):
    world.worms["wx"] = make_worm()
    world.add_network("dvs-1", 2)
    ctl = IntrospectionController(world, InspectionPolicy(dwell_ticks=2, rotation_count=3, snapshot_period_ticks=2))
    run_ticks(world, ctl, 30)
    ctl.shutdown()
    assert len(world.db) == 0
    assert all(l.split("\t")[2] != "CHECK" or "anomalous=0" in l for l in world.log.lines)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_existence_check_worm_rotation_harvest(world, k):
    spec = make_worm(checks_existence=True, mutable_region_len=16)
    infected_world(world, spec)
    pol = InspectionPolicy(dwell_ticks=3, rotation_count=k, snapshot_period_ticks=2, networks_per_inspector=1)
    ctl = IntrospectionController(world, pol)
    run_ticks(world, ctl, 3 + 2 * k + 1)
    payloads = [r.payload_bytes for r in world.db]
    assert len(set(payloads)) == k + 1 == len(payloads)
    assert all(spec.invariant_region in p for p in payloads)


def test_rotate_restore_order(world):
    spec = make_worm()
    infected_world(world, spec)
    pol = InspectionPolicy(dwell_ticks=1, rotation_count=4, snapshot_period_ticks=1, networks_per_inspector=1)
    ctl = IntrospectionController(world, pol)
    run_ticks(world, ctl, 8)
    events = [parse_log_line(l) for l in world.log.lines]
    pair = next(f for _, _, ev, f in events if ev == "PAIR")
    h1, h2 = map(int, pair["honeypots"].split(","))
    seq = [int(f["honeypot"]) for _, _, ev, f in events if ev == "RESTORE"]
    assert seq == [h2, h1, h2]


def test_rotate_outside_paired(world):
    with pytest.raises(OrchestrationError):
        rotate_restore(world, InspectorState(1))


def test_rotate_on_clean_pair_adds_nothing(world):
    world.add_network("dvs-1", 1)
    pol = InspectionPolicy(dwell_ticks=1, rotation_count=3, snapshot_period_ticks=1, networks_per_inspector=1)
    ctl = IntrospectionController(world, pol)
    run_ticks(world, ctl, 3)
    ins = ctl.inspectors[1]
    assert ins.phase is Phase.PAIRED
    rotate_restore(world, ins)
    assert len(world.db) == 0


def test_no_cross_network_leak(world):
    """Honeypots serving one network never carry a worm to another."""
    spec = make_worm()
    a = infected_world(world, spec)
    b = world.add_network("dvs-1", 2)
    pol = InspectionPolicy(dwell_ticks=2, rotation_count=2, snapshot_period_ticks=2, networks_per_inspector=2)
    ctl = IntrospectionController(world, pol)
    outs = run_ticks(world, ctl, 40)
    ctl.shutdown()
    for vid in b.customer_vms:
        assert world.guests[vid].infections == {}
    assert all(o.target not in b.customer_vms for o in outs if o.kind is OutcomeKind.INFECTED)
    assert world.db.query(network=b.id) == []
    assert world.db.query(network=a.id)


def test_migration_does_not_disturb(world):
    spec = make_worm()
    net = infected_world(world, spec)
    pol = InspectionPolicy(dwell_ticks=2, rotation_count=1, snapshot_period_ticks=2, networks_per_inspector=1)

    def migrate(tick):
        if tick == 1:
            for vid in net.customer_vms:
                world.topology.migrate_vm(vid, "esx-2")

    ctl = IntrospectionController(world, pol)
    run_ticks(world, ctl, 6, on_tick=migrate)
    assert len(world.db) >= 2
    assert not any("\tABORT\t" in l for l in world.log.lines)


def test_removed_network_aborts_with_collection(world):
    spec = make_worm()
    net = infected_world(world, spec)
    pol = InspectionPolicy(dwell_ticks=5, rotation_count=1, snapshot_period_ticks=5, networks_per_inspector=1)
    ctl = IntrospectionController(world, pol)
    run_ticks(world, ctl, 2)
    world.remove_network(net.id)
    ctl.controller_tick()
    assert ctl.inspectors == {}
    assert any("\tABORT\t" in l for l in world.log.lines)
    assert len(world.db) == 1
    assert not any(v.role is VmRole.HONEYPOT for v in world.topology.vms.values())


def test_pinned_template(world, catalog):
    world.worms["wx"] = make_worm()
    net = world.add_network("dvs-1", 1, frozenset({"iis-5.1"}))
    other = sorted(n for n in catalog if n != XP)[0]
    world.network_templates[net.id] = other
    ctl = IntrospectionController(world, InspectionPolicy(networks_per_inspector=1))
    run_ticks(world, ctl, 1)
    assert ctl.inspectors[1].h1.template.name == other


def test_randomized_trace_honeypot_bound(catalog):
    from honeynet.world import World

    rng = random.Random(3)
    spec = make_worm(checks_existence=True)
    w = World.in_memory(templates=catalog, worms={"wx": spec})
    w.topology.add_server("esx-1")
    w.topology.add_switch("dvs-1")
    ctl = IntrospectionController(w, InspectionPolicy(dwell_ticks=2, rotation_count=2, snapshot_period_ticks=2))
    live = []

    def churn(tick):
        if live and rng.random() < 0.15:
            w.remove_network(live.pop(rng.randrange(len(live))))
        elif rng.random() < 0.25:
            n = w.add_network("dvs-1", rng.randint(1, 3))
            live.append(n.id)
            if rng.random() < 0.5:
                w.engine.seed_infection(n.customer_vms[0], "wx")

    run_ticks(w, ctl, 120, on_tick=churn)
    assert active_honeypot_count(ctl.inspectors.values()) <= 2 * len(ctl.inspectors)
