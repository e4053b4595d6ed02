"""Slot-level sidelink simulation engine.

One :class:`Simulation` owns a single run: a static deployment of
glasses/companion pairs, the external-occupancy stream, per-pair traffic
queues, reservations and sensing ledgers. :func:`run` executes ``n_runs``
independent runs of a :class:`~sidelink_ar.config.SimConfig` and aggregates them.

Seeding: run ``i`` uses the integer ``base_seed + i``. Each stochastic
stream is then seeded with ``numpy.random.SeedSequence([base_seed + i, k])``
where ``k`` is the stream id in :data:`STREAMS`, so any stream can be
replayed in isolation.

Device numbering: pair ``u`` owns companion device ``2u`` and glasses
device ``2u + 1``.
"""

from __future__ import annotations

import csv
import math
import random
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .config import SimConfig
from .mac import (
    DirectionScheduler,
    ExpiryDecision,
    Mode,
    Reservation,
    SciRecord,
    SelectionFailure,
    SensingLedger,
    candidate_slots,
    genie_ledger,
    on_reservation_expiry,
    select_resource,
)
from .metrics import INCOMPLETE, MetricsReport, UserStats, aggregate
from .radio import (
    MCS_TABLE,
    Position,
    adapt_mcs,
    bler,
    lin_to_db,
    noise_power_dbm,
    pathloss_db,
    received_power_dbm,
    tb_capacity_bits,
)
from .traffic import (
    Direction,
    DropPolicy,
    Outcome,
    PairQueues,
    TransportBlock,
    burst_bits,
    expire_overdue,
    interval_slots,
    pdb_slots,
    segment_burst,
    tbs_needed,
)

STREAMS = {"deployment": 0, "occupancy": 1, "traffic": 2, "mac": 3, "coins": 4}


def stream_seed(base_seed: int, run_index: int, stream: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([base_seed + run_index, STREAMS[stream]])


def numpy_stream(base_seed: int, run_index: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(base_seed, run_index, stream))


def python_stream(base_seed: int, run_index: int, stream: str) -> random.Random:
    state = stream_seed(base_seed, run_index, stream).generate_state(2, np.uint64)
    return random.Random(int(state[0]) << 64 | int(state[1]))


@dataclass(frozen=True)
class Deployment:
    companions: tuple[Position, ...]
    glasses: tuple[Position, ...]
    grid_side: float = 20.0

    @property
    def n_users(self) -> int:
        return len(self.companions)

    def device(self, d: int) -> Position:
        return self.companions[d // 2] if d % 2 == 0 else self.glasses[d // 2]

    @property
    def devices(self) -> list[Position]:
        out = []
        for c, g in zip(self.companions, self.glasses):
            out.extend((c, g))
        return out


def sample_deployment(
    rng: np.random.Generator,
    n_users: int,
    grid_side: float = 20.0,
    pair_distance: tuple[float, float] = (1.0, 2.0),
) -> Deployment:
    """Companions uniform in the square; glasses at U[min, max] m in a random
    direction, redrawn until they land inside the grid.

    Users are drawn one after another, so the first ``k`` pairs of an
    ``n``-user deployment match a ``k``-user deployment from the same stream.
    """
    if n_users < 1:
        raise ValueError("need at least one user")
    lo, hi = pair_distance
    comps, glasses = [], []
    for _ in range(n_users):
        cx, cy = rng.uniform(0.0, grid_side, 2)
        while True:
            d = rng.uniform(lo, hi)
            th = rng.uniform(0.0, 2.0 * math.pi)
            gx, gy = cx + d * math.cos(th), cy + d * math.sin(th)
            if 0.0 <= gx <= grid_side and 0.0 <= gy <= grid_side:
                break
        comps.append(Position(float(cx), float(cy)))
        glasses.append(Position(float(gx), float(gy)))
    return Deployment(tuple(comps), tuple(glasses), grid_side)


def occupancy(rng: np.random.Generator, n_slots: int, x_percent: float) -> np.ndarray:
    """I.i.d. per-slot external occupancy with probability ``x_percent / 100``."""
    return rng.random(n_slots) < x_percent / 100.0


def predict_sinr(
    own_rx_dbm: float,
    selected_slots: Sequence[int],
    records: Iterable[SciRecord],
    noise_dbm: float,
) -> float:
    """Expected SINR over the selected slots from sensed reservations.

    In each selected slot every sender whose advertised reservation projects
    onto it contributes its strongest RSRP once; the interference used is the
    mean over the selected slots (a single slot for baseline SPS).
    """
    records = list(records)
    total = 0.0
    for s in selected_slots:
        strongest: dict[int, float] = {}
        for rec in records:
            if rec.projects_onto(s):
                v = strongest.get(rec.sender)
                if v is None or rec.rsrp > v:
                    strongest[rec.sender] = rec.rsrp
        total += sum(10.0 ** (v / 10.0) for v in strongest.values())
    interference = total / len(selected_slots) if selected_slots else 0.0
    return own_rx_dbm - lin_to_db(interference + 10.0 ** (noise_dbm / 10.0))


@dataclass
class Transmission:
    user: int
    direction: Direction
    tb: TransportBlock
    tx_device: int
    rx_device: int


def resolve_reception(
    txs: Sequence[Transmission],
    rx_lin: Sequence[Sequence[float]],
    noise_lin: float,
    curve,
    rng: random.Random,
    reception_time: int,
) -> list[tuple[float, float, Outcome]]:
    """SINR, BLER and coin-flip outcome for each concurrent transmission.

    ``rx_lin[d][e]`` is the linear received power (mW) at device ``e`` from
    device ``d``. Outcomes are written back to the TBs.
    """
    out = []
    for tx in txs:
        interference = noise_lin
        for other in txs:
            if other is not tx:
                interference += rx_lin[other.tx_device][tx.rx_device]
        s = 10.0 * math.log10(rx_lin[tx.tx_device][tx.rx_device] / interference)
        p = bler(curve, tx.tb.mcs, s)
        outcome = Outcome.SUCCESS if rng.random() >= p else Outcome.RX_FAILURE
        tx.tb.sinr = s
        tx.tb.finish(outcome, reception_time)
        out.append((s, p, outcome))
    return out


class Simulation:
    """State of one run plus the per-slot step."""

    def __init__(self, cfg: SimConfig, run_index: int = 0, deployment: Deployment | None = None, trace: TextIO | None = None):
        self.cfg = cfg
        seed = cfg.run.base_seed
        self.run_index = run_index
        self.slot_ms = cfg.radio.slot_duration
        self.n_slots = int(round(cfg.run.duration_s * 1000.0 / self.slot_ms))
        self.interval = interval_slots(cfg.traffic, self.slot_ms)
        self.pdb = pdb_slots(cfg.traffic, self.slot_ms)
        self.flags = cfg.flags
        self.genie = cfg.flags.mode is Mode.MODE1_GENIE
        self.mar = cfg.flags.mar_enabled
        self.fd = cfg.flags.fd_sensing
        self.params = cfg.mode2
        self.rri = self.interval if self.mar else int(round(cfg.mode2.rri_ms / self.slot_ms))
        self.hd_rri = (self.rri,) if (cfg.mode2.hd_exclusion and not self.fd and not self.genie) else ()
        self.sense_slots = int(round(cfg.mode2.sensing_window_ms / self.slot_ms))
        self.queue_policy = cfg.traffic.drop_policy

        if deployment is None:
            deployment = sample_deployment(
                numpy_stream(seed, run_index, "deployment"),
                cfg.deployment.users,
                cfg.deployment.grid_side,
                cfg.deployment.pair_distance,
            )
        self.deployment = deployment
        n = self.n = deployment.n_users
        self.occupied = occupancy(numpy_stream(seed, run_index, "occupancy"), self.n_slots, cfg.x_percent).tolist()
        traffic_rng = numpy_stream(seed, run_index, "traffic")
        if cfg.traffic.random_phase:
            self.phase = [int(p) for p in traffic_rng.integers(0, self.interval, n)]
        else:
            self.phase = [0] * n
        self.mac_rng = python_stream(seed, run_index, "mac")
        self.coin_rng = python_stream(seed, run_index, "coins")

        devices = deployment.devices
        nd = len(devices)
        radio = cfg.radio
        self.rx_dbm = [[0.0] * nd for _ in range(nd)]
        for a in range(nd):
            for b in range(nd):
                if a != b:
                    d = devices[a].distance(devices[b])
                    self.rx_dbm[a][b] = received_power_dbm(radio, pathloss_db(d, radio.carrier_freq))
        self.rx_lin = [[10.0 ** (v / 10.0) if i != j else 0.0 for j, v in enumerate(row)] for i, row in enumerate(self.rx_dbm)]
        self.link_dbm = [self.rx_dbm[2 * u][2 * u + 1] for u in range(n)]
        self.coupling = [
            [max(self.rx_dbm[a][b] for a in (2 * i, 2 * i + 1) for b in (2 * j, 2 * j + 1)) if i != j else 0.0 for j in range(n)]
            for i in range(n)
        ]
        self.noise_dbm = noise_power_dbm(cfg.bandwidth, radio.noise_figure)
        self.noise_lin = 10.0 ** (self.noise_dbm / 10.0)
        self.capacity = {m.index: tb_capacity_bits(m, cfg.bandwidth, radio) for m in MCS_TABLE}
        self.span = cfg.bandwidth.n_subchannels
        self.bits = (
            burst_bits(cfg.traffic.g2c_mbps, cfg.traffic.interval_ms),
            burst_bits(cfg.traffic.c2g_mbps, cfg.traffic.interval_ms),
        )

        self.queues = [PairQueues() for _ in range(n)]
        self.sched = [DirectionScheduler() for _ in range(n)]
        self.res: dict[int, Reservation | None] = {u: None for u in range(n)}
        self.gen = [0] * n
        self.requested = [0] * n  # MAR batch asked for at the last selection
        self.ledgers = [SensingLedger(self.sense_slots) for _ in range(n)]
        # SCIs on air: (device, sender, offsets, rri, offset set) -> recent tx slots.
        # Listener i heard a key in every such slot except those it spent
        # transmitting (half-duplex), tracked in ``self._deaf[i]``.
        self._on_air: dict[tuple, deque] = {}
        self._deaf: list[set] = [set() for _ in range(n)]
        self.mcs = [adapt_mcs(self.link_dbm[u] - self.noise_dbm, cfg.bler_curve, cfg.bler_target) for u in range(n)]
        self.calendar: dict[int, list] = {}
        self.sweeps: dict[int, list] = {}
        self.pending = set()
        self.stats = [UserStats() for _ in range(n)]
        self._open: list[dict] = [dict() for _ in range(n)]  # interval -> [outstanding, worst_slots, dropped]
        self.generated = 0
        self.transmissions = 0
        self.occupied_skips = 0
        self.max_concurrent = 0
        self.selections = 0
        self.selection_failures = 0
        self.t = 0
        self._trace = csv.writer(trace) if trace is not None else None
        if self._trace is not None:
            self._trace.writerow(["slot", "event", "occupied", "users", "directions", "sinr_db", "bler", "outcome"])

    # ------------------------------------------------------------------ sensing
    def _heard(self, u: int, now: int) -> dict[tuple, tuple[int, float]]:
        """Latest decoded SCI per key at listener ``u``: key -> (heard_at, rsrp)."""
        oldest = now - self.sense_slots
        self.ledgers[u].evict(now)
        deaf = self._deaf[u]
        if deaf:
            deaf.difference_update([x for x in deaf if x < oldest])
        cu = 2 * u
        out = {}
        for key, slots in self._on_air.items():
            if key[1] == u:
                continue
            for x in reversed(slots):
                if x < oldest:
                    break
                if x not in deaf:
                    out[key] = (x, self.rx_dbm[key[0]][cu])
                    break
        return out

    def _live(self, u: int, now: int) -> list[tuple[int, frozenset, float, int]]:
        """(sender, reserved residues, rsrp, first covered slot) of every
        reservation ``u`` knows of."""
        if self.genie:
            cu = self.coupling[u]
            return [(v, r._offset_set, cu[v], 0) for v, r in self.res.items() if r is not None and v != u]
        return [(k[1], k[4], v[1], v[0] + 1) for k, v in self._heard(u, now).items()]

    def records_for(self, u: int, now: int) -> list[SciRecord]:
        """Ledger view at slot ``now`` as :class:`SciRecord` objects."""
        if self.genie:
            return genie_ledger(u, self.res, self.coupling)
        return [SciRecord(k[1], v[0], k[2], k[3], v[1], k[0]) for k, v in self._heard(u, now).items()]

    def _exclusion(self, u: int, live, window: range) -> set[int]:
        """:func:`~sidelink_ar.mac.exclusion` specialised to one shared RRI.

        Every reservation in a run advertises the same period, which lets
        the half-duplex projection work on residues.
        """
        p = self.rri
        lo, hi = window.start, window.stop - 1
        best: dict[int, float] = {}
        for _, offs, rsrp, start in live:
            first = max(lo, start)
            for r in offs:
                s = first + (r - first) % p
                while s <= hi:
                    if rsrp > best.get(s, -math.inf):
                        best[s] = rsrp
                    s += p
        hd = set()
        if self.hd_rri:
            now = window.start - self.params.selection_window_start_offset
            if p < len(window):
                um = {x % p for x in self.ledgers[u].unmonitored if now - x <= p}
                hd = {s for s in window if s % p in um}
            else:
                hd = {x + p for x in self.ledgers[u].unmonitored if x + p in window}
        need = self.params.min_candidate_fraction * len(window)
        thr = self.params.rsrp_threshold_dbm
        top = max(best.values(), default=-math.inf)
        while True:
            excluded = hd | {s for s, v in best.items() if v > thr}
            if len(window) - len(excluded) >= need or top <= thr:
                return excluded
            thr += self.params.threshold_step_db

    def _predict(self, u: int, live, slots: Sequence[int]) -> float:
        """:func:`predict_sinr` on the ``_live`` representation."""
        if not slots:
            return self.link_dbm[u] - self.noise_dbm
        p = self.rri
        total = 0.0
        for s in slots:
            r = s % p
            strongest: dict[int, float] = {}
            for sender, offs, rsrp, start in live:
                if s >= start and r in offs and rsrp > strongest.get(sender, -math.inf):
                    strongest[sender] = rsrp
            for v in strongest.values():
                total += 10.0 ** (v / 10.0)
        return self.link_dbm[u] - lin_to_db(total / len(slots) + self.noise_lin)

    # ------------------------------------------------------------ allocation
    def _window_end(self, u: int, t: int, deadline: int | None) -> int:
        if deadline is None:
            return t + self.pdb - 1
        return deadline - 1

    def needed_batch(self, mcs_index: int) -> int:
        cap = self.capacity[mcs_index]
        return tbs_needed(self.bits[0], cap) + tbs_needed(self.bits[1], cap)

    def select(self, u: int, t: int, window_end: int) -> Reservation:
        """New reservation for ``u`` plus link adaptation over it.

        Under MAR the batch is sized from the current MCS; if adaptation over
        the chosen slots lowers the MCS so far that the batch no longer fits
        one interval's traffic, selection is repeated with the new size.
        """
        window = range(t + self.params.selection_window_start_offset, window_end + 1)
        if len(window) == 0:
            raise SelectionFailure("selection window closed")
        excluded = self._exclusion(u, self._live(u, t), window)
        candidates = candidate_slots(window, excluded)
        mcs = self.mcs[u]
        for _ in range(len(MCS_TABLE)):
            batch = max(1, self.needed_batch(mcs.index)) if self.mar else 0
            self.selections += 1
            res = select_resource(
                candidates, self.mac_rng, self.params, batch,
                rri_slots=self.rri, owner=u, subchannel_span=self.span,
            )
            mcs = self.adapt(u, res, t)
            if not self.mar or self.needed_batch(mcs.index) <= batch:
                break
        self.mcs[u] = mcs
        self.requested[u] = batch
        self._install(u, res)
        if self._trace is not None:
            self._trace.writerow([t, "select", int(self.occupied[t]), u, "", "", "", " ".join(map(str, res.slot_offsets))])
        return res

    def _install(self, u: int, res: Reservation | None) -> None:
        self.res[u] = res
        self.gen[u] += 1
        if res is not None:
            self.calendar.setdefault(res.start, []).append((u, self.gen[u]))

    def adapt(self, u: int, res: Reservation, t: int):
        horizon = max(self.rri, self.interval)
        slots = res.occurrences(t, t + horizon - 1)
        sinr = self._predict(u, self._live(u, t), slots)
        return adapt_mcs(sinr, self.cfg.bler_curve, self.cfg.bler_target)

    # ---------------------------------------------------------------- traffic
    def arrive(self, u: int, t: int) -> None:
        k = (t - self.phase[u]) // self.interval
        deadline = t + self.pdb if self.queue_policy is DropPolicy.PDB_DROP else None
        if self.res[u] is None:
            try:
                self.select(u, t, self._window_end(u, t, deadline))
            except SelectionFailure:
                self.selection_failures += 1
                self.pending.add(u)
        mcs = self.mcs[u]
        cap = self.capacity[mcs.index]
        q = self.queues[u]
        count = 0
        for direction, bits in zip((Direction.G2C, Direction.C2G), self.bits):
            for size in segment_burst(bits, cap):
                q[direction].append(TransportBlock(u, direction, size, t, deadline, interval=k, mcs=mcs.index))
                count += 1
        if count:
            self._open[u][k] = [count, 0, False]
            self.generated += count
            if deadline is not None:
                self.sweeps.setdefault(deadline, []).append(u)

    def _close(self, tb: TransportBlock) -> None:
        u = tb.owner
        st = self.stats[u]
        if tb.outcome is Outcome.SUCCESS:
            st.success += 1
        elif tb.outcome is Outcome.RX_FAILURE:
            st.rx_failure += 1
        else:
            st.drop += 1
        rec = self._open[u][tb.interval]
        rec[0] -= 1
        if tb.outcome is Outcome.DROP:
            rec[2] = True
        else:
            rec[1] = max(rec[1], tb.reception_time - tb.arrival_time)
        if rec[0] == 0:
            st.interval_latencies.append(INCOMPLETE if rec[2] else rec[1] * self.slot_ms)
            del self._open[u][tb.interval]

    # ------------------------------------------------------------------- slot
    def step_slot(self, t: int) -> list[Transmission]:
        self.t = t
        occupied = self.occupied[t]
        interval = self.interval

        # traffic arrivals, only for intervals that fit in the run
        if t + interval <= self.n_slots:
            for u in range(self.n):
                if (t - self.phase[u]) % interval == 0 and t >= self.phase[u]:
                    self.arrive(u, t)

        # PDB sweep: a TB is lost once even this slot would finish past its deadline
        for u in self.sweeps.pop(t, ()):
            q = self.queues[u]
            for direction in (Direction.G2C, Direction.C2G):
                for tb in expire_overdue(q[direction], t + 1, self.queue_policy):
                    self._close(tb)

        # (re)selection for users left without a reservation
        if self.pending:
            for u in sorted(self.pending):
                q = self.queues[u]
                if not len(q):
                    self.pending.discard(u)
                    continue
                if self.res[u] is not None:
                    self.pending.discard(u)
                    continue
                try:
                    self.select(u, t, self._window_end(u, t, q.head_deadline()))
                    self.pending.discard(u)
                except SelectionFailure:
                    self.selection_failures += 1

        # reserved opportunities
        txs: list[Transmission] = []
        due = self.calendar.pop(t, ())
        opportunities = []
        for u, gen in due:
            if gen != self.gen[u]:
                continue
            res = self.res[u]
            self.calendar.setdefault(res.next_hit(t + 1), []).append((u, gen))
            opportunities.append((u, res))
            if occupied:
                self.occupied_skips += 1
                continue
            direction = self.sched[u].pick(self.queues[u])
            if direction is None:
                continue
            tb = self.queues[u][direction].popleft()
            if direction is Direction.G2C:
                txs.append(Transmission(u, direction, tb, 2 * u + 1, 2 * u))
            else:
                txs.append(Transmission(u, direction, tb, 2 * u, 2 * u + 1))

        # reception
        if txs:
            self.transmissions += len(txs)
            self.max_concurrent = max(self.max_concurrent, len(txs))
            results = resolve_reception(txs, self.rx_lin, self.noise_lin, self.cfg.bler_curve, self.coin_rng, t + 1)
            for tx in txs:
                self._close(tx.tb)
            if self._trace is not None:
                self._trace.writerow([
                    t, "tx", int(occupied),
                    " ".join(str(tx.user) for tx in txs),
                    " ".join(tx.direction.name for tx in txs),
                    " ".join(f"{r[0]:.3f}" for r in results),
                    " ".join(f"{r[1]:.6g}" for r in results),
                    " ".join(r[2].value for r in results),
                ])
        elif occupied and self._trace is not None and opportunities:
            self._trace.writerow([t, "occupied", 1, " ".join(str(u) for u, _ in opportunities), "", "", "", "deferred"])

        # sensing by companions
        if txs and not self.genie:
            self._sense(t, txs)

        # reservation counters
        for u, res in opportunities:
            if not res.is_period_end(t):
                continue
            res.remaining -= 1
            if res.remaining == 0:
                reselect = on_reservation_expiry(res, self.mac_rng, self.params) is ExpiryDecision.RESELECT
                if not reselect:
                    # a kept reservation is re-adapted to what has been sensed since
                    mcs = self.adapt(u, res, t + 1)
                    if self.mar and self.needed_batch(mcs.index) > self.requested[u]:
                        reselect = True
                    else:
                        self.mcs[u] = mcs
                if reselect:
                    self._install(u, None)
                    if len(self.queues[u]):
                        self.pending.add(u)
        return txs

    def _sense(self, t: int, txs: list[Transmission]) -> None:
        oldest = t - self.sense_slots
        on_air = self._on_air
        for tx in txs:
            res = self.res[tx.user]
            key = (tx.tx_device, tx.user, res.slot_offsets, res.rri_slots, res._offset_set)
            slots = on_air.get(key)
            if slots is None:
                slots = on_air[key] = deque()
            slots.append(t)
            while slots[0] < oldest:
                slots.popleft()
            if tx.direction is Direction.C2G and not self.fd:
                self._deaf[tx.user].add(t)
                if self.hd_rri:
                    self.ledgers[tx.user].mark_unmonitored(t)
        if t % self.sense_slots == 0:
            for key in [k for k, v in on_air.items() if v[-1] < oldest]:
                del on_air[key]

    def finish(self) -> list[UserStats]:
        """Drop whatever is still queued and return per-user stats."""
        for u in range(self.n):
            q = self.queues[u]
            for direction in (Direction.G2C, Direction.C2G):
                while q[direction]:
                    tb = q[direction].popleft()
                    tb.finish(Outcome.DROP)
                    self._close(tb)
        return self.stats

    def run(self) -> list[UserStats]:
        step = self.step_slot
        for t in range(self.n_slots):
            step(t)
        return self.finish()

    def conservation_ok(self) -> bool:
        total = sum(s.total for s in self.stats)
        return total == self.generated


def run_once(cfg: SimConfig, run_index: int = 0, trace: TextIO | None = None) -> Simulation:
    sim = Simulation(cfg, run_index, trace=trace)
    sim.run()
    return sim


def run(cfg: SimConfig, trace: TextIO | None = None) -> MetricsReport:
    """All runs of ``cfg`` in run-index order, aggregated."""
    per_run = []
    for i in range(cfg.run.n_runs):
        sim = run_once(cfg, i, trace=trace if i == 0 else None)
        if not sim.conservation_ok():
            raise RuntimeError(f"run {i}: TB conservation violated")
        per_run.append(sim.stats)
    return aggregate(per_run, cfg.thresholds, cfg.traffic.interval_ms)
