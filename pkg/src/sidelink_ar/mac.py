"""Sidelink resource allocation.

Mode 2 sensing-based semi-persistent scheduling (SCI ledger, RSRP exclusion
with threshold relaxation, random selection, re-selection counter), the
multiple-active-reservation (MAR) batch variant, and the genie privileges used
to emulate centralized Mode 1.

Reservations always span the whole band, so resources are identified by slot
alone. Reserved slots are stored as residues modulo the reservation interval.
"""

from __future__ import annotations

import enum
import math
import random
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

from .traffic import Direction, PairQueues


class SelectionFailure(RuntimeError):
    """No candidate resource survived exclusion."""


class Mode(enum.Enum):
    MODE2 = "mode2"
    MODE1_GENIE = "mode1"


class ExpiryDecision(enum.Enum):
    KEEP = "keep"
    RESELECT = "reselect"


MIN_RRI_MS = 2.0


@dataclass(frozen=True)
class Mode2Params:
    sensing_window_ms: float = 100.0
    rsrp_threshold_dbm: float = -96.0
    rrc_range: tuple[int, int] = (25, 75)
    p_change: float = 0.5
    rri_ms: float = 2.0
    selection_window_start_offset: int = 2
    min_candidate_fraction: float = 0.2
    threshold_step_db: float = 3.0
    hd_exclusion: bool = True  # also exclude slots a missed SCI could have reserved

    def __post_init__(self):
        if not 0.0 <= self.p_change <= 1.0:
            raise ValueError(f"p_change must be in [0, 1], got {self.p_change}")
        if self.rri_ms < MIN_RRI_MS:
            raise ValueError(
                f"rri_ms={self.rri_ms} is below the {MIN_RRI_MS} ms floor: with 0.5 ms slots and "
                "half-duplex sensing a 1 ms RRI leaves sensing-based selection no usable choice"
            )
        lo, hi = self.rrc_range
        if not 0 < lo <= hi:
            raise ValueError(f"rrc_range must satisfy 0 < lo <= hi, got {self.rrc_range}")
        if not self.sensing_window_ms > 0:
            raise ValueError("sensing_window_ms must be positive")
        if self.selection_window_start_offset < 0:
            raise ValueError("selection_window_start_offset must be >= 0")
        if not 0.0 < self.min_candidate_fraction <= 1.0:
            raise ValueError("min_candidate_fraction must be in (0, 1]")
        if not self.threshold_step_db > 0:
            raise ValueError("threshold_step_db must be positive")


@dataclass(frozen=True)
class ModeFlags:
    mode: Mode = Mode.MODE2
    mar_enabled: bool = False
    fd_sensing: bool = False

    def __post_init__(self):
        if self.fd_sensing and self.mode is not Mode.MODE2:
            raise ValueError("fd_sensing only applies to mode2")

    @property
    def label(self) -> str:
        name = "Mode 1" if self.mode is Mode.MODE1_GENIE else "Mode 2"
        if self.mar_enabled:
            name += "+MAR"
        if self.fd_sensing:
            name += "+FD"
        return name


@dataclass
class Reservation:
    owner: int
    slot_offsets: tuple[int, ...]  # residues modulo rri_slots, strictly increasing
    rri_slots: int
    remaining: int
    start: int  # first slot in which the reservation is valid
    subchannel_span: int = 1

    def __post_init__(self):
        if self.remaining < 0:
            raise ValueError("remaining must be >= 0")
        offs = self.slot_offsets
        if not offs or any(b <= a for a, b in zip(offs, offs[1:])):
            raise ValueError("slot_offsets must be non-empty and strictly increasing")
        if offs[0] < 0 or offs[-1] >= self.rri_slots:
            raise ValueError("slot_offsets must lie in [0, rri_slots)")
        if self.start % self.rri_slots not in offs:
            raise ValueError("start slot must be one of the reserved offsets")
        rel = sorted((r - self.start) % self.rri_slots for r in offs)
        self._rel = tuple(rel)
        self._offset_set = frozenset(offs)

    @property
    def batch_size(self) -> int:
        return len(self.slot_offsets)

    def hits(self, s: int) -> bool:
        return s >= self.start and s % self.rri_slots in self._offset_set

    def is_period_end(self, s: int) -> bool:
        """True on the last reserved slot of each periodic instance."""
        return (s - self.start) % self.rri_slots == self._rel[-1]

    def next_hit(self, s: int) -> int:
        """Earliest reserved slot >= s."""
        s = max(s, self.start)
        base = s - (s - self.start) % self.rri_slots
        for rel in self._rel:
            if base + rel >= s:
                return base + rel
        return base + self.rri_slots + self._rel[0]

    def occurrences(self, lo: int, hi: int) -> list[int]:
        """Reserved slots in ``[lo, hi]``."""
        return [s for s in range(max(lo, self.start), hi + 1) if s % self.rri_slots in self._offset_set]


@dataclass(frozen=True)
class SciRecord:
    sender: int
    heard_at: int
    reserved_offsets: tuple[int, ...]
    rri_slots: int
    rsrp: float
    device: int = -1  # transmitting device; -1 when not tracked

    def projects_onto(self, s: int) -> bool:
        return s > self.heard_at and s % self.rri_slots in self.reserved_offsets


def projected_slots(record: SciRecord, lo: int, hi: int) -> list[int]:
    """Slots in ``[lo, hi]`` covered by the record's advertised reservation."""
    p = record.rri_slots
    first = max(lo, record.heard_at + 1)
    out = []
    for r in record.reserved_offsets:
        s = first + (r - first) % p
        while s <= hi:
            out.append(s)
            s += p
    return out


class SensingLedger:
    """SCI records heard by one sensing UE, plus its unmonitored slots.

    Records carrying the same (device, reservation, period) project onto the
    same future slots, so only the most recent one is stored.
    """

    def __init__(self, window_slots: int):
        self.window_slots = window_slots
        self._records: dict[tuple, SciRecord] = {}
        self.unmonitored: deque[int] = deque()

    def __len__(self) -> int:
        return len(self._records)

    def add(self, record: SciRecord) -> None:
        key = (record.device, record.sender, record.reserved_offsets, record.rri_slots)
        self._records[key] = record

    def mark_unmonitored(self, slot: int) -> None:
        self.unmonitored.append(slot)

    def evict(self, now: int) -> None:
        oldest = now - self.window_slots
        stale = [k for k, r in self._records.items() if r.heard_at < oldest]
        for k in stale:
            del self._records[k]
        um = self.unmonitored
        while um and um[0] < oldest:
            um.popleft()

    def records(self, now: int | None = None) -> list[SciRecord]:
        if now is not None:
            self.evict(now)
        return list(self._records.values())


@dataclass(frozen=True)
class HeardTransmission:
    """One concurrent transmission as seen by a potential sensing UE."""

    sender: int
    device: int
    reserved_offsets: tuple[int, ...]
    rri_slots: int
    rsrp: float


def record_sci(
    ledger: SensingLedger,
    slot: int,
    transmissions: Iterable[HeardTransmission],
    receiver: int,
    receiver_transmitting: bool,
    fd_sensing: bool = False,
) -> int:
    """Decode the first-stage SCIs of ``transmissions`` into ``ledger``.

    A half-duplex UE decodes nothing in a slot it transmits in and instead
    records the slot as unmonitored. Returns the number of records added.
    """
    added = 0
    if receiver_transmitting and not fd_sensing:
        ledger.mark_unmonitored(slot)
    else:
        for tx in transmissions:
            if tx.sender == receiver:
                continue
            ledger.add(SciRecord(tx.sender, slot, tx.reserved_offsets, tx.rri_slots, tx.rsrp, tx.device))
            added += 1
    ledger.evict(slot + 1)
    return added


def slot_rsrp_map(records: Iterable[SciRecord], window: range) -> dict[int, float]:
    """Strongest RSRP of any record projecting onto each window slot."""
    lo, hi = window.start, window.stop - 1
    best: dict[int, float] = {}
    for rec in records:
        for s in projected_slots(rec, lo, hi):
            v = best.get(s)
            if v is None or rec.rsrp > v:
                best[s] = rec.rsrp
    return best


def half_duplex_slots(
    unmonitored: Iterable[int], window: range, rri_slots: Sequence[int], now: int | None = None
) -> set[int]:
    """Window slots a hypothetical SCI in an unmonitored slot could reserve.

    A hypothetical reservation with period ``p`` shorter than the window
    repeats across the whole window only if the unmonitored slot lies within
    one period before ``now``; otherwise just its next instance ``m + p`` is
    considered. With ``now=None`` every unmonitored slot repeats.
    """
    lo, hi = window.start, window.stop - 1
    out = set()
    for u in unmonitored:
        for p in rri_slots:
            if now is None or (p < len(window) and now - u <= p):
                first = max(lo, u + 1)
                s = first + (u - first) % p
                while s <= hi:
                    out.add(s)
                    s += p
            elif lo <= u + p <= hi:
                out.add(u + p)
    return out


def exclusion(
    records: Iterable[SciRecord],
    window: range,
    params: Mode2Params,
    unmonitored: Iterable[int] = (),
    hd_rri_slots: Sequence[int] = (),
    now: int | None = None,
) -> tuple[set[int], float]:
    """Excluded slots and the RSRP threshold that produced them.

    The threshold is raised in ``threshold_step_db`` steps until at least
    ``min_candidate_fraction`` of the window is left, or until no slot is
    excluded by RSRP any more. Half-duplex exclusions are not relaxed.
    """
    if len(window) == 0:
        raise ValueError("selection window is empty")
    best = slot_rsrp_map(records, window)
    hd = half_duplex_slots(unmonitored, window, hd_rri_slots, now) if hd_rri_slots else set()
    need = params.min_candidate_fraction * len(window)
    thr = params.rsrp_threshold_dbm
    top = max(best.values(), default=-math.inf)
    while True:
        excluded = hd | {s for s, v in best.items() if v > thr}
        if len(window) - len(excluded) >= need or top <= thr:
            return excluded, thr
        thr += params.threshold_step_db


def excluded_slots(
    ledger: SensingLedger | Iterable[SciRecord],
    selection_window: range,
    params: Mode2Params,
    unmonitored: Iterable[int] = (),
    hd_rri_slots: Sequence[int] = (),
) -> set[int]:
    records = ledger.records() if isinstance(ledger, SensingLedger) else ledger
    return exclusion(records, selection_window, params, unmonitored, hd_rri_slots)[0]


def candidate_slots(window: range, excluded: set[int]) -> list[int]:
    return [s for s in window if s not in excluded]


def earliest_run(candidates: Iterable[int], length: int) -> list[int] | None:
    cands = sorted(candidates)
    run_start = 0
    for i in range(len(cands)):
        if i > 0 and cands[i] != cands[i - 1] + 1:
            run_start = i
        if i - run_start + 1 == length:
            return cands[run_start : i + 1]
    return None


def draw_counter(rng: random.Random, params: Mode2Params) -> int:
    lo, hi = params.rrc_range
    return rng.randint(lo, hi)


def select_resource(
    candidates: Iterable[int],
    rng: random.Random,
    params: Mode2Params,
    mar_batch: int = 0,
    *,
    rri_slots: int,
    owner: int = 0,
    subchannel_span: int = 1,
) -> Reservation:
    """Pick a reservation among candidate slots.

    Baseline (``mar_batch == 0``): one uniformly random slot. MAR: the
    earliest run of ``mar_batch`` consecutive candidates, else the earliest
    ``mar_batch`` candidates.
    """
    cands = sorted(set(candidates))
    if not cands:
        raise SelectionFailure("no candidate resources")
    if mar_batch > 0:
        chosen = earliest_run(cands, mar_batch) or cands[:mar_batch]
    else:
        chosen = [rng.choice(cands)]
    offsets = tuple(sorted({s % rri_slots for s in chosen}))
    return Reservation(owner, offsets, rri_slots, draw_counter(rng, params), chosen[0], subchannel_span)


def on_reservation_expiry(res: Reservation, rng: random.Random, params: Mode2Params) -> ExpiryDecision:
    if res.remaining != 0:
        raise ValueError("reservation has not expired")
    if rng.random() < params.p_change:
        return ExpiryDecision.RESELECT
    res.remaining = draw_counter(rng, params)
    return ExpiryDecision.KEEP


def genie_ledger(
    owner: int,
    reservations: dict[int, Reservation],
    coupling_dbm: Sequence[Sequence[float]],
) -> list[SciRecord]:
    """True reservation state of every other user, as the genie sees it.

    ``coupling_dbm[i][j]`` is the strongest received power between any device
    of pair i and any device of pair j. Records cover the whole periodic
    pattern (``heard_at=-1``): a candidate recurs with the same period, so a
    reservation starting later in the window would still collide with it.
    """
    out = []
    for user, res in reservations.items():
        if user == owner or res is None:
            continue
        out.append(SciRecord(user, -1, res.slot_offsets, res.rri_slots, coupling_dbm[owner][user]))
    return out


def genie_allocate(
    owner: int,
    reservations: dict[int, Reservation],
    coupling_dbm: Sequence[Sequence[float]],
    window: range,
    rng: random.Random,
    params: Mode2Params,
    mar_batch: int = 0,
    *,
    rri_slots: int,
    subchannel_span: int = 1,
) -> Reservation:
    """Mode 2 selection with genie knowledge.

    Exclusion sees every user's live reservation (no missed SCIs, no
    half-duplex gaps) and gates reuse on true pair-to-pair coupling, which
    permits spatial reuse between pairs whose coupling is below threshold.
    """
    records = genie_ledger(owner, reservations, coupling_dbm)
    excluded, _ = exclusion(records, window, params)
    return select_resource(
        candidate_slots(window, excluded),
        rng,
        params,
        mar_batch,
        rri_slots=rri_slots,
        owner=owner,
        subchannel_span=subchannel_span,
    )


@dataclass
class DirectionScheduler:
    """Strict G2C/C2G alternation over one pair's shared reservation."""

    preferred: Direction = Direction.G2C

    def pick(self, queues: PairQueues) -> Direction | None:
        return schedule_pair_direction(self, queues)


def schedule_pair_direction(sched: DirectionScheduler, queues: PairQueues) -> Direction | None:
    """Direction to serve at a reserved opportunity, or None to idle."""
    first = sched.preferred
    other = Direction.C2G if first is Direction.G2C else Direction.G2C
    if queues[first]:
        chosen = first
    elif queues[other]:
        chosen = other
    else:
        return None
    sched.preferred = Direction.C2G if chosen is Direction.G2C else Direction.G2C
    return chosen
