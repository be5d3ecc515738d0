import pytest
from hypothesis import given
from hypothesis import strategies as st

from dagqos.access import AimdEvent, AimdState, aimd_tick
from dagqos.model import NodeState
from oracles import expected_filter_trace
from dagqos.qos import (
    EstimatorError,
    FeeControllerState,
    SawtoothFilterState,
    expected_delay,
    fee,
    observe_rate,
    publish_indicator,
    rate_estimate,
)

INC, DEC, HOLD = AimdEvent.INCREASE, AimdEvent.DECREASE, AimdEvent.HOLD


def _feed_cycle(filt, lo, hi):
    """Descend to ``lo``, grow to ``hi``, then decrease: closes one (lo, hi) cycle."""
    observe_rate(filt, lo, DEC)
    observe_rate(filt, hi, INC)
    observe_rate(filt, 0.7 * hi, DEC)


# -------------------------------------------------------------------- filter

def test_cycle_average_is_midpoint():
    filt = SawtoothFilterState(window=5, previous_rate=10.0)
    _feed_cycle(filt, 4.0, 8.0)
    assert list(filt.cycle_averages) == [6.0]
    assert filt.filtered_rate == 6.0


def test_constant_cycles():
    filt = SawtoothFilterState(window=3, previous_rate=10.0)
    for _ in range(3):
        _feed_cycle(filt, 4.0, 8.0)
    assert list(filt.cycle_averages) == [6.0, 6.0, 6.0]
    assert filt.filtered_rate == 6.0


def test_window_slides():
    filt = SawtoothFilterState(window=2, previous_rate=10.0)
    _feed_cycle(filt, 2.0, 6.0)    # 4
    _feed_cycle(filt, 6.0, 10.0)   # 8
    assert list(filt.cycle_averages) == [4.0, 8.0]
    _feed_cycle(filt, 8.0, 12.0)   # 10
    assert list(filt.cycle_averages) == [8.0, 10.0]
    assert filt.filtered_rate == 9.0


def test_no_estimate_before_first_cycle():
    filt = SawtoothFilterState(window=5, previous_rate=3.0)
    for r in (3.1, 3.2, 3.3):
        observe_rate(filt, r, INC)
    observe_rate(filt, 2.0, DEC)  # a maximum with no minimum before it
    assert filt.filtered_rate is None
    assert rate_estimate(filt, 2.5) == 2.5


def test_consecutive_decreases_are_one_descent():
    filt = SawtoothFilterState(window=5, previous_rate=10.0)
    for r in (7.0, 4.9, 3.43):
        observe_rate(filt, r, DEC)
    observe_rate(filt, 3.5, INC)
    observe_rate(filt, 5.0, INC)
    observe_rate(filt, 3.5, DEC)
    assert list(filt.cycle_averages) == [pytest.approx((3.43 + 5.0) / 2)]


def test_filter_window_must_be_positive():
    with pytest.raises(ValueError):
        SawtoothFilterState(window=0)


@given(
    st.lists(st.booleans(), min_size=1, max_size=400),
    st.floats(0.5, 40), st.floats(0.01, 1.0), st.floats(0.3, 0.9),
    st.integers(1, 3), st.integers(1, 8),
)
def test_filter_matches_replayed_trace(flags, start, step, beta, cool, window):
    aimd = AimdState(current_rate=start, additive_step=step, multiplicative_factor=beta,
                     update_interval=0.1, rate_floor=0.05, rate_cap=50.0, cooldown=0.1 * cool)
    filt = SawtoothFilterState(window=window, previous_rate=aimd.current_rate)
    rates, events, filtered = [], [], []
    for k, c in enumerate(flags):
        ev = aimd_tick(aimd, c, 0.1 * k)
        observe_rate(filt, aimd.current_rate, ev)
        rates.append(aimd.current_rate)
        events.append(ev)
        filtered.append(filt.filtered_rate)
    expected, cycles = expected_filter_trace(start, rates, events, window)
    closed_at = [c[0] for c in cycles]
    for k, (got, want) in enumerate(zip(filtered, expected)):
        if want is None:
            assert got is None
            continue
        assert got == pytest.approx(want, rel=1e-12)
        recent = [c for c in cycles if c[0] <= k][-window:]
        # bounds: inside the range of rates seen over the averaged cycles
        assert min(lo for _, lo, _ in recent) - 1e-12 <= got <= max(hi for _, _, hi in recent) + 1e-12
    assert len(filt.cycle_averages) == min(window, len(closed_at))


# -------------------------------------------------------------- delay and fee

@pytest.mark.parametrize("L,lam,tau", [(10, 5.0, 2.0), (0, 3.7, 0.0), (750, 50.0, 15.0)])
def test_expected_delay_examples(L, lam, tau):
    assert expected_delay(L, lam) == pytest.approx(tau)


@pytest.mark.parametrize("L,lam", [(1, 0.0), (1, -2.0), (-1, 1.0)])
def test_expected_delay_errors(L, lam):
    with pytest.raises(EstimatorError):
        expected_delay(L, lam)


@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_delay_homogeneity(L, lam):
    assert expected_delay(2 * L, 2 * lam) == pytest.approx(expected_delay(L, lam), rel=1e-12)


@pytest.mark.parametrize("tau,sigma", [(15.0, 0.0), (20.0, 4.0), (5.0, 0.0)])
def test_fee_examples(tau, sigma):
    assert fee(tau, FeeControllerState(0.8, 15.0)) == pytest.approx(sigma)


@given(st.floats(0, 1e4), st.floats(0, 1e4), st.floats(1e-3, 10), st.floats(0, 100))
def test_fee_monotone_and_clamped(t1, t2, kp, r):
    ctrl = FeeControllerState(kp, r)
    lo, hi = sorted((t1, t2))
    assert 0.0 <= fee(lo, ctrl) <= fee(hi, ctrl)
    if hi <= r:
        assert fee(hi, ctrl) == 0.0


def test_controller_validation():
    with pytest.raises(ValueError):
        FeeControllerState(0.0, 15.0)
    with pytest.raises(ValueError):
        FeeControllerState(0.8, -1.0)


# ---------------------------------------------------------------- publishing

def _node(L, lam):
    node = NodeState(
        node_id=0, reputation=1.0,
        aimd=AimdState(current_rate=lam, additive_step=0.0),
        filter=SawtoothFilterState(window=5, previous_rate=lam),
        controller=FeeControllerState(0.8, 15.0),
    )
    node.ltp.extend(range(L))
    return node


@pytest.mark.parametrize("L,lam,tau,sigma", [(0, 10.0, 0.0, 0.0), (100, 10.0, 10.0, 0.0), (200, 10.0, 20.0, 4.0)])
def test_publish_examples(L, lam, tau, sigma):
    node = _node(L, lam)
    ind = publish_indicator(node, 2.5)
    assert ind.expected_delay == pytest.approx(tau)
    assert ind.fee == pytest.approx(sigma)
    assert ind.published_at == 2.5
    assert node.indicator is ind


def test_publish_uses_filtered_rate_once_available():
    node = _node(30, 10.0)
    _feed_cycle(node.filter, 4.0, 8.0)
    assert publish_indicator(node, 0.0).expected_delay == pytest.approx(5.0)
    assert publish_indicator(node, 0.5, backlog=6).expected_delay == pytest.approx(6.0)


def test_publish_timestamps_never_go_backwards():
    node = _node(1, 1.0)
    publish_indicator(node, 5.0)
    publish_indicator(node, 5.0)
    with pytest.raises(EstimatorError):
        publish_indicator(node, 4.9)
