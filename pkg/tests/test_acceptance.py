"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict (``ACn PASS|FAIL ...``) that is printed
directly and again in the pytest terminal summary.
"""

import math
import random
import time
from collections import defaultdict
from pathlib import Path

from honeynet.collection_db import CollectionDB
from honeynet.harness import OUTPUT_FILES, run_scenario
from honeynet.introspection import BaselineProfile, check
from honeynet.scenario import load_scenario, scenario_path, shipped_scenarios
from honeynet.vm_state import GIB, MemorySnapshot
from honeynet.world import parse_log_line

from .conftest import ACCEPTANCE_LINES, XP


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"AC{n} {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def run(name, out: Path, **policy):
    cfg = load_scenario(scenario_path(name))
    if policy:
        max_ticks = policy.pop("max_ticks", cfg.max_ticks)
        cfg = cfg.model_copy(update={"policy": cfg.policy.model_copy(update=policy), "max_ticks": max_ticks})
    m = run_scenario(cfg, out)
    return cfg, m


def log_events(out: Path):
    return [parse_log_line(l) for l in (out / "run.log").read_text().splitlines()]


def records(out: Path):
    return list(CollectionDB(out / "collections.jsonl"))


def test_ac1_polymorphic_harvest(tmp_path):
    t0 = time.perf_counter()
    cfg, m = run("a_polymorphic_sweep", tmp_path)
    elapsed = time.perf_counter() - t0
    inv = cfg.worm_specs()["wx"].invariant_region
    payloads = {r.payload_bytes for r in records(tmp_path) if r.ground_truth_family == "wx"}
    ok = (
        cfg.policy.rotation_count == 5
        and len(payloads) >= 6
        and all(inv in p for p in payloads)
        and elapsed < 5.0
    )
    verdict(1, ok, f"distinct={len(payloads)} (need >=6), invariant in all, runtime={elapsed:.2f}s (<5s)")


def honeypot_infections(out: Path, family: str) -> int:
    return sum(
        1 for _, actor, ev, f in log_events(out)
        if actor == f"worm:{family}" and ev == "INFECTED" and f["dst_role"] == "honeypot"
    )


def test_ac2_existence_check_defeat(tmp_path):
    _, m0 = run("b_existence_check", tmp_path / "k0")
    got = {0: (m0.per_family_distinct["wy"], honeypot_infections(tmp_path / "k0", "wy"))}
    base = load_scenario(scenario_path("b_existence_check")).policy
    for k in range(1, 6):
        horizon = base.dwell_ticks + k * base.snapshot_period_ticks + 1
        out = tmp_path / f"k{k}"
        _, m = run("b_existence_check", out, rotation_count=k, max_ticks=horizon)
        got[k] = (m.per_family_distinct["wy"], honeypot_infections(out, "wy"))
    _, mr = run("b_existence_check_rotation", tmp_path / "rot")
    k_rot = load_scenario(scenario_path("b_existence_check_rotation")).policy.rotation_count
    rot = (mr.per_family_distinct["wy"], honeypot_infections(tmp_path / "rot", "wy"))
    ok = got[0] == (1, 1) and all(v == (k + 1, k + 1) for k, v in got.items()) and rot[0] >= k_rot + 1 == rot[1]
    shown = " ".join(f"k={k}:{d}/{h}" for k, (d, h) in got.items())
    verdict(2, ok, f"distinct/log-infections {shown}; shipped rotation k={k_rot}: {rot[0]}/{rot[1]}")


def test_ac3_redo_economics(tmp_path):
    _, m = run("a_polymorphic_sweep", tmp_path)
    r = m.redo_by_template[XP]
    ok = r.redo_bytes == 81_920 * 512 == 41_943_040 and r.disk_bytes == 5 * GIB and round(100 * r.ratio, 2) == 0.78
    verdict(3, ok, f"redo={r.redo_bytes} B vs disk={r.disk_bytes} B, ratio={100 * r.ratio:.4f}%")


def test_ac4_isolation(tmp_path):
    _, m = run("c_two_isolated_networks", tmp_path)
    events = log_events(tmp_path)
    n2 = next(f for _, _, ev, f in events if ev == "ADD_NETWORK" and f["name"] == "N2")
    n2_vms = set(n2["vms"].split(","))
    infections = [f for _, actor, ev, f in events if actor.startswith("worm:") and ev == "INFECTED"]
    into_n2 = sum(f["dst"] in n2_vms for f in infections)
    bad_groups = sum(
        not (set(f["src_groups"].split(",")) - {"-"}) & set(f["dst_groups"].split(",")) for f in infections
    )
    n2_records = sum(r.network_id == int(n2["network"]) for r in records(tmp_path))
    ok = into_n2 == 0 and bad_groups == 0 and n2_records == 0 and m.per_network_collections["N2"] == 0
    verdict(4, ok, f"infections={len(infections)}, into N2={into_n2}, N2 records={n2_records}, "
                   f"shared-group violations={bad_groups}")


def test_ac5_false_positives_negatives(tmp_path):
    _, mf = run("f_clean_control", tmp_path / "f")
    fn = {}
    for name in shipped_scenarios():
        if name[0] in "abcd":
            _, m = run(name, tmp_path / name)
            fn[name] = m.false_negatives
    ok = mf.false_positives == 0 and mf.total_collections == 0 and all(v == 0 for v in fn.values())
    shown = " ".join(f"{k}={v}" for k, v in fn.items())
    verdict(5, ok, f"clean FP={mf.false_positives}; FN {shown}")


def test_ac6_resource_bound(tmp_path):
    worst = 0
    for name in shipped_scenarios():
        out = tmp_path / name
        run(name, out)
        alive = defaultdict(set)
        for _, actor, ev, f in log_events(out):
            if ev == "HP_CREATE":
                alive[actor].add(f["honeypot"])
                worst = max(worst, len(alive[actor]))
            elif ev == "HP_DESTROY":
                alive[actor].discard(f["honeypot"])
    verdict(6, worst <= 2, f"max alive honeypots per inspector over {len(shipped_scenarios())} traces = {worst}")


def test_ac7_elasticity(tmp_path):
    cfg, m = run("e_dynamic_networks", tmp_path)
    npi = cfg.policy.networks_per_inspector
    events = log_events(tmp_path)
    live = 0
    pending: list[int] = []  # ticks of add/remove events not yet reconciled
    violations, checked = [], 0
    for tick, _, ev, f in events:
        if ev in ("ADD_NETWORK", "REMOVE_NETWORK"):
            live += 1 if ev == "ADD_NETWORK" else -1
            pending.append(tick)
        elif ev == "RECONCILED":
            checked += 1
            if int(f["live"]) != live or int(f["inspectors"]) != math.ceil(live / npi):
                violations.append(tick)
            pending = []
        # a change must be reconciled within one controller tick
        violations += [t for t in pending if tick - t > 1]
        pending = [t for t in pending if tick - t <= 1]
    ok = not violations and not pending and checked > 0
    timeline = " ".join(f"{t}:{c}" for t, c in m.inspector_timeline)
    verdict(7, ok, f"reconciliations={checked}, violations={violations or 0}, timeline {timeline}")


def test_ac8_determinism(tmp_path):
    diffs = []
    for name in shipped_scenarios():
        a, b = tmp_path / name / "1", tmp_path / name / "2"
        run(name, a)
        run(name, b)
        diffs += [f"{name}/{f}" for f in OUTPUT_FILES if (a / f).read_bytes() != (b / f).read_bytes()]
    verdict(8, not diffs, f"{len(shipped_scenarios())} scenarios x {len(OUTPUT_FILES)} files, differing={diffs or 0}")


def brute_force(snapshot: MemorySnapshot, baseline: BaselineProfile):
    unknown_p, unknown_m = set(), set()
    for p in list(snapshot.running_list) + list(snapshot.terminated_list):
        if not any(p == q for q in baseline.known_processes):
            unknown_p.add(p)
    for p, mods in snapshot.modules_by_process:
        if p in baseline.known_processes:
            for mod in mods:
                if mod not in baseline.known_modules.get(p, ()):
                    unknown_m.add((p, mod))
    return unknown_p, unknown_m, set(snapshot.hidden_list)


def random_pair(rng: random.Random):
    names = [f"p{i}.exe" for i in range(rng.randint(1, 15))]
    mods = [f"m{i}.dll" for i in range(rng.randint(1, 12))]
    known = rng.sample(names, rng.randint(0, len(names)))
    base = BaselineProfile(
        "t", frozenset(known),
        {p: frozenset(rng.sample(mods, rng.randint(0, len(mods)))) for p in known},
    )
    run = sorted(rng.sample(names, rng.randint(0, len(names))))
    term = sorted(rng.sample(names, rng.randint(0, min(3, len(names)))))
    hidden = sorted(rng.sample(names, rng.randint(0, min(2, len(names)))))
    by_proc = []
    for p in sorted(set(run) | set(hidden)):
        chosen = tuple(sorted(rng.sample(mods, rng.randint(0, len(mods)))))
        if chosen:
            by_proc.append((p, chosen))
    return MemorySnapshot(1, 0, "t", tuple(run), tuple(term), tuple(hidden), tuple(by_proc)), base


def test_ac9_checker_oracle():
    rng = random.Random(20260)
    mismatches = 0
    for _ in range(1000):
        snap, base = random_pair(rng)
        r = check(snap, base)
        if (set(r.unknown_processes), set(r.unknown_modules), set(r.hidden_processes)) != brute_force(snap, base):
            mismatches += 1
    verdict(9, mismatches == 0, f"1000 randomized pairs, mismatches={mismatches}")
