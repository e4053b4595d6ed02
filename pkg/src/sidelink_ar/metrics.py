"""PRR, per-interval on-time latency, thermal and use-case class verdicts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .traffic import Outcome, TransportBlock

INCOMPLETE = None  # on-time marker for an interval that lost a TB to a drop


@dataclass
class UserStats:
    success: int = 0
    rx_failure: int = 0
    drop: int = 0
    interval_latencies: list = field(default_factory=list)  # ms, or INCOMPLETE

    @property
    def total(self) -> int:
        return self.success + self.rx_failure + self.drop

    @property
    def prr(self) -> float:
        return self.success / self.total if self.total else 1.0

    def complete_latencies(self) -> list[float]:
        return [v for v in self.interval_latencies if v is not INCOMPLETE]

    @property
    def incomplete_count(self) -> int:
        return sum(1 for v in self.interval_latencies if v is INCOMPLETE)


@dataclass(frozen=True)
class MetricThresholds:
    thermal_limit: float = 0.5
    class_a_ms: float = 20.0
    class_b_ms: float = 40.0
    class_c_ms: float = 1000.0

    def __post_init__(self):
        if not 0.0 < self.thermal_limit <= 1.0:
            raise ValueError("thermal_limit must be in (0, 1]")
        if not 0 < self.class_a_ms <= self.class_b_ms <= self.class_c_ms:
            raise ValueError("class thresholds must satisfy 0 < A <= B <= C")


@dataclass(frozen=True)
class ClassVerdict:
    class_a: bool
    class_b: bool
    class_c: bool
    thermal_ok: bool

    def __str__(self) -> str:
        names = [n for n, ok in (("A", self.class_a), ("B", self.class_b), ("C", self.class_c)) if ok]
        return "".join(names) or "-"


def tb_latency(tb: TransportBlock, slot_duration: float) -> float:
    """Arrival to end-of-slot reception, in ms."""
    if tb.outcome is Outcome.PENDING or tb.outcome is Outcome.DROP:
        raise ValueError("latency is only defined for received TBs")
    return (tb.reception_time - tb.arrival_time) * slot_duration


def interval_on_time(tbs: Iterable[TransportBlock], slot_duration: float):
    """On-time of one traffic interval: the latency of its last received TB."""
    worst = 0.0
    for tb in tbs:
        if tb.outcome is Outcome.DROP:
            return INCOMPLETE
        if tb.outcome is Outcome.PENDING:
            raise ValueError("interval still has pending TBs")
        worst = max(worst, tb_latency(tb, slot_duration))
    return worst


def thermal_check(on_times: Sequence[float] | float, limit_fraction: float = 0.5, interval: float = 22.0) -> bool:
    if not 0.0 < limit_fraction <= 1.0:
        raise ValueError("limit_fraction must be in (0, 1]")
    mean = float(on_times) if np.isscalar(on_times) else float(np.mean(on_times))
    return mean <= limit_fraction * interval


def classify(mean_on_time: float | None, thermal_ok: bool, thresholds: MetricThresholds = MetricThresholds()) -> ClassVerdict:
    """Use-case classes from the mean interval on-time.

    Class A additionally needs the thermal budget; B and C are pure latency
    budgets, so the nesting A => B => C always holds.
    """
    if mean_on_time is None or math.isnan(mean_on_time):
        return ClassVerdict(False, False, False, thermal_ok)
    c = mean_on_time <= thresholds.class_c_ms
    b = c and mean_on_time <= thresholds.class_b_ms
    a = b and thermal_ok and mean_on_time <= thresholds.class_a_ms
    return ClassVerdict(a, b, c, thermal_ok)


@dataclass
class RunSummary:
    prr: float
    latency_mean_ms: float  # nan when no user completed an interval
    latency_p95_ms: float
    incomplete_rate: float
    tbs: int
    success: int
    rx_failure: int
    drop: int


def summarize_run(users: Sequence[UserStats]) -> RunSummary:
    prrs, means, p95s, inc = [], [], [], []
    for u in users:
        prrs.append(u.prr)
        lat = u.complete_latencies()
        if lat:
            means.append(float(np.mean(lat)))
            p95s.append(float(np.percentile(lat, 95)))
        if u.interval_latencies:
            inc.append(u.incomplete_count / len(u.interval_latencies))
    nan = float("nan")
    return RunSummary(
        prr=float(np.mean(prrs)) if prrs else nan,
        latency_mean_ms=float(np.mean(means)) if means else nan,
        latency_p95_ms=float(np.mean(p95s)) if p95s else nan,
        incomplete_rate=float(np.mean(inc)) if inc else 0.0,
        tbs=sum(u.total for u in users),
        success=sum(u.success for u in users),
        rx_failure=sum(u.rx_failure for u in users),
        drop=sum(u.drop for u in users),
    )


def _mean_se(values: Sequence[float]) -> tuple[float, float]:
    vals = [v for v in values if not math.isnan(v)]
    if not vals:
        return float("nan"), float("nan")
    if len(vals) == 1:
        return vals[0], 0.0
    arr = np.asarray(vals)
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(len(arr)))


@dataclass
class MetricsReport:
    runs: list[RunSummary]
    prr_mean: float
    prr_se: float
    latency_mean_ms: float
    latency_se_ms: float
    latency_p95_ms: float
    incomplete_rate: float
    thermal_ok: bool
    verdict: ClassVerdict
    # disclosed convention: incomplete intervals are excluded from latency means
    latency_convention: str = "mean over complete intervals; incomplete intervals reported separately"

    @property
    def n_runs(self) -> int:
        return len(self.runs)


def aggregate(
    per_run: Sequence[Sequence[UserStats]],
    thresholds: MetricThresholds = MetricThresholds(),
    interval_ms: float = 22.0,
) -> MetricsReport:
    """Mean over users, then over runs."""
    if not per_run:
        raise ValueError("aggregate needs at least one run")
    runs = [summarize_run(users) for users in per_run]
    prr, prr_se = _mean_se([r.prr for r in runs])
    lat, lat_se = _mean_se([r.latency_mean_ms for r in runs])
    p95, _ = _mean_se([r.latency_p95_ms for r in runs])
    inc = float(np.mean([r.incomplete_rate for r in runs]))
    thermal = (not math.isnan(lat)) and thermal_check(lat, thresholds.thermal_limit, interval_ms)
    verdict = classify(None if math.isnan(lat) else lat, thermal, thresholds)
    return MetricsReport(runs, prr, prr_se, lat, lat_se, p95, inc, thermal, verdict)
