"""Random micro-scenarios for the exclusion oracle."""

from __future__ import annotations

import random
from dataclasses import dataclass

import oracles
from sidelink_ar.mac import Mode2Params, SciRecord, SensingLedger, exclusion


@dataclass
class MicroScenario:
    records: list[SciRecord]
    window: range
    params: Mode2Params
    unmonitored: list[int]
    hd_rri: tuple[int, ...]
    now: int


def micro_scenario(rng: random.Random) -> MicroScenario:
    lo = rng.randint(0, 300)
    hi = lo + rng.randint(0, 99)
    records = []
    for _ in range(rng.randint(0, 10)):
        rri = rng.choice([4, 5, 20, 44, 100, 150])
        offs = tuple(sorted(rng.sample(range(rri), rng.randint(1, min(6, rri)))))
        heard = rng.randint(max(0, lo - 100), hi)
        records.append(SciRecord(rng.randint(0, 5), heard, offs, rri, rng.uniform(-115.0, -70.0)))
    params = Mode2Params(
        rsrp_threshold_dbm=rng.choice([-96.0, -100.0, -90.0]),
        min_candidate_fraction=rng.choice([0.2, 0.5, 1.0, 0.05]),
        threshold_step_db=rng.choice([3.0, 1.0, 6.0]),
    )
    now = lo - rng.randint(0, 3)
    pool = range(max(0, now - 100), max(0, now) + 1)
    unmonitored = sorted(rng.sample(pool, min(len(pool), rng.randint(0, 5))))
    hd_rri = (rng.choice([4, 44, 100]),) if rng.random() < 0.5 else ()
    return MicroScenario(records, range(lo, hi + 1), params, unmonitored, hd_rri, now)


def oracle_exclusion(sc: MicroScenario) -> set[int]:
    lo, hi = sc.window.start, sc.window.stop - 1
    hd = set()
    for p in sc.hd_rri:
        hd |= oracles.hd_projected(sc.unmonitored, lo, hi, p, sc.now)
    recs = [(r.heard_at, r.reserved_offsets, r.rri_slots, r.rsrp) for r in sc.records]
    p = sc.params
    return oracles.excluded(recs, lo, hi, p.rsrp_threshold_dbm, p.threshold_step_db, p.min_candidate_fraction, hd)


def package_exclusion(sc: MicroScenario) -> set[int]:
    return exclusion(sc.records, sc.window, sc.params, sc.unmonitored, sc.hd_rri, sc.now)[0]


def ledger_of(sc: MicroScenario) -> SensingLedger:
    led = SensingLedger(10_000)
    for i, r in enumerate(sc.records):
        # distinct device ids keep every record
        led.add(SciRecord(r.sender, r.heard_at, r.reserved_offsets, r.rri_slots, r.rsrp, device=i))
    return led


def mismatches(n: int, seed: int = 2024) -> list[int]:
    rng = random.Random(seed)
    bad = []
    for i in range(n):
        sc = micro_scenario(rng)
        if package_exclusion(sc) != oracle_exclusion(sc):
            bad.append(i)
    return bad
