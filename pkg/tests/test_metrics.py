import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sidelink_ar.metrics import (
    INCOMPLETE,
    MetricThresholds,
    UserStats,
    aggregate,
    classify,
    interval_on_time,
    tb_latency,
    thermal_check,
)
from sidelink_ar.traffic import Direction, Outcome, TransportBlock


def _tb(arrival, reception, outcome=Outcome.SUCCESS):
    tb = TransportBlock(0, Direction.G2C, 1, arrival, arrival + 44)
    tb.finish(outcome, reception if outcome is not Outcome.DROP else None)
    return tb


def test_tb_latency_examples():
    assert tb_latency(_tb(0, 2), 0.5) == 1.0
    assert tb_latency(_tb(0, 1), 0.5) == 0.5  # transmitted in the arrival slot
    assert tb_latency(_tb(0, 43), 0.5) == 21.5
    with pytest.raises(ValueError):
        tb_latency(_tb(0, 0, Outcome.DROP), 0.5)


def test_interval_on_time_examples():
    assert interval_on_time([_tb(0, 2), _tb(0, 6), _tb(0, 10)], 0.5) == 5.0
    assert interval_on_time([_tb(0, 2), _tb(0, 0, Outcome.DROP)], 0.5) is INCOMPLETE
    assert interval_on_time([_tb(0, 7)], 0.5) == 3.5
    # a failed reception still ends the link's on-time
    assert interval_on_time([_tb(0, 3), _tb(0, 9, Outcome.RX_FAILURE)], 0.5) == 4.5


def test_thermal_examples():
    assert thermal_check([10.0], 0.5, 22.0)
    assert not thermal_check([12.0], 0.5, 22.0)
    assert thermal_check(22.0, 1.0, 22.0)
    assert thermal_check([11.0])
    with pytest.raises(ValueError):
        thermal_check([1.0], 0.0)


def test_classify_examples():
    v = classify(8.0, True)
    assert (v.class_a, v.class_b, v.class_c) == (True, True, True)
    v = classify(35.0, False)
    assert (v.class_a, v.class_b, v.class_c) == (False, True, True)
    v = classify(2000.0, False)
    assert (v.class_a, v.class_b, v.class_c) == (False, False, False)
    assert str(classify(12.0, False)) == "BC"
    assert str(classify(None, True)) == "-"


@given(st.floats(0, 5000), st.booleans())
def test_class_nesting(mean, thermal):
    v = classify(mean, thermal)
    assert (not v.class_a or v.class_b) and (not v.class_b or v.class_c)
    assert v.class_a <= thermal


def test_thresholds_validation():
    with pytest.raises(ValueError):
        MetricThresholds(class_a_ms=50.0)
    with pytest.raises(ValueError):
        MetricThresholds(thermal_limit=0.0)


def _user(success, fail, drop, lats):
    return UserStats(success, fail, drop, list(lats))


def test_aggregate_examples():
    rep = aggregate([[_user(10, 0, 0, [2.0]), _user(8, 1, 1, [4.0])]])
    assert rep.prr_mean == pytest.approx(0.9)
    assert rep.latency_mean_ms == pytest.approx(3.0)
    single = aggregate([[_user(3, 1, 0, [5.0, 7.0])]])
    assert single.prr_mean == 0.75 and single.latency_mean_ms == 6.0 and single.prr_se == 0.0
    runs = [[_user(k, 10 - k, 0, [float(k)])] for k in range(1, 21)]
    rep = aggregate(runs)
    assert rep.prr_mean == pytest.approx(sum(k / 10 for k in range(1, 21)) / 20)
    assert rep.latency_mean_ms == pytest.approx(10.5)
    sd = math.sqrt(sum((k - 10.5) ** 2 for k in range(1, 21)) / 19)
    assert rep.latency_se_ms == pytest.approx(sd / math.sqrt(20))
    with pytest.raises(ValueError):
        aggregate([])


def test_incomplete_intervals_excluded_and_reported():
    rep = aggregate([[_user(5, 0, 1, [2.0, INCOMPLETE, 4.0, INCOMPLETE])]])
    assert rep.latency_mean_ms == 3.0
    assert rep.incomplete_rate == 0.5
    assert "incomplete" in rep.latency_convention


def test_aggregate_verdict():
    rep = aggregate([[_user(1, 0, 0, [9.0])]])
    assert rep.thermal_ok and str(rep.verdict) == "ABC"
    rep = aggregate([[_user(1, 0, 0, [14.0])]])
    assert not rep.thermal_ok and str(rep.verdict) == "BC"


users_st = st.lists(
    st.builds(
        _user,
        st.integers(0, 50),
        st.integers(0, 10),
        st.integers(0, 10),
        st.lists(st.one_of(st.floats(0.5, 22.0), st.none()), max_size=6),
    ),
    min_size=1,
    max_size=6,
)


@given(st.lists(users_st, min_size=1, max_size=5), st.integers(0, 1000))
def test_aggregate_permutation_invariant(runs, seed):
    rng = random.Random(seed)
    shuffled = [rng.sample(r, len(r)) for r in runs]
    rng.shuffle(shuffled)
    a, b = aggregate(runs), aggregate(shuffled)
    for field in ("prr_mean", "latency_mean_ms", "latency_p95_ms", "incomplete_rate", "prr_se"):
        x, y = getattr(a, field), getattr(b, field)
        assert (math.isnan(x) and math.isnan(y)) or x == pytest.approx(y, abs=1e-12)
    assert 0.0 <= a.prr_mean <= 1.0
