import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uavsense.analytics import (
    MAX_DP_UAVS,
    CapacityError,
    EquivalentUavScenario,
    cycle_sensing_prob,
    lambert_w_minus1,
    n_vd,
    n_vd_slope_numerator,
    optimal_tu,
    uplink_probs_from_frames,
    uplink_success_prob,
    valid_tx_prob,
)
from uavsense.channel import ChannelParams
from uavsense.protocol import CycleSchedule, TrajectoryCyclePlan, simulate_cycles

BS = np.array([0.0, 0.0, 25.0])


def outcome_tree(probs, c):
    """Recursive enumeration of every per-frame success/failure pattern."""
    t_count, n = probs.shape
    out = np.zeros(n)

    def walk(t, done, weight):
        if t == t_count or weight == 0.0:
            out[:] += weight * np.array(done, dtype=float)
            return
        ranked = sorted((i for i in range(n) if not done[i]), key=lambda i: (-probs[t, i], i))[:c]
        for pattern in range(1 << len(ranked)):
            w = weight
            nd = list(done)
            for b, i in enumerate(ranked):
                if pattern >> b & 1:
                    w *= probs[t, i]
                    nd[i] = True
                else:
                    w *= 1.0 - probs[t, i]
            walk(t + 1, nd, w)

    walk(0, [False] * n, 1.0)
    return out


def bisect_w(x):
    lo, hi = -60.0, -1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid * math.exp(mid) > x:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_sensing_examples():
    task = np.array([[100.0, 0.0, 0.0]])
    above = np.array([[100.0, 0.0, 100.0]])
    plan = TrajectoryCyclePlan(above, above, task, BS, params=ChannelParams(sensing_lambda=1e-3))
    assert cycle_sensing_prob(plan, 0) == pytest.approx(math.exp(-0.05), abs=1e-12)
    assert cycle_sensing_prob(plan, 0) == pytest.approx(0.95123, abs=1e-5)
    flat = TrajectoryCyclePlan(above, above, task, BS, CycleSchedule(t_s=0))
    assert cycle_sensing_prob(flat, 0) == 1.0


def test_dp_examples():
    p = 0.37
    assert uplink_probs_from_frames([[p]], 1)[0] == pytest.approx(p, abs=1e-15)
    assert uplink_probs_from_frames([[p], [p]], 1)[0] == pytest.approx(1 - (1 - p) ** 2, abs=1e-15)
    assert np.allclose(uplink_probs_from_frames([[0.8, 0.6]], 1), [0.8, 0.0])
    assert np.array_equal(uplink_probs_from_frames(np.zeros((0, 3)), 1), np.zeros(3))


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_dp_matches_outcome_tree(n, t, c, seed):
    rng = np.random.default_rng(seed)
    probs = rng.random((t, n))
    if seed % 2:
        probs = np.round(probs, 1)
    assert np.allclose(uplink_probs_from_frames(probs, c), outcome_tree(probs, c), atol=1e-13)


@given(st.integers(1, 5), st.integers(0, 6), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_dp_properties(n, t, c, seed):
    rng = np.random.default_rng(seed)
    probs = rng.random((t + 1, n))
    base = uplink_probs_from_frames(probs[:t], c)
    more = uplink_probs_from_frames(probs, c)
    assert np.all((base >= 0) & (base <= 1 + 1e-12))
    assert np.all(more >= base - 1e-12)
    assert base.sum() <= c * t + 1e-12
    # consistent relabelling; distinct values avoid tie-break asymmetry
    perm = rng.permutation(n)
    assert np.allclose(uplink_probs_from_frames(probs[:, perm], c), more[perm], atol=1e-13)


@given(st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_no_contention_closed_form(n, t, seed):
    probs = np.random.default_rng(seed).random((t, n))
    got = uplink_probs_from_frames(probs, n + seed % 3)
    assert np.max(np.abs(got - (1 - np.prod(1 - probs, axis=0)))) <= 1e-12


def test_single_uav_closed_form():
    for p in (0.05, 0.5, 0.93):
        for t in range(1, 9):
            got = uplink_probs_from_frames(np.full((t, 1), p), 1)[0]
            assert abs(got - (1 - (1 - p) ** t)) <= 1e-12


def test_capacity_guard():
    with pytest.raises(CapacityError):
        uplink_probs_from_frames(np.full((1, MAX_DP_UAVS + 1), 0.5), 1)
    many = np.zeros((MAX_DP_UAVS + 1, 3))
    with pytest.raises(CapacityError):
        uplink_success_prob(TrajectoryCyclePlan(many, many, many, BS))


def test_three_uav_one_channel_against_monte_carlo():
    starts = np.array([[175.0, 0.0, 75.0], [-100.0, 100.0, 75.0], [-125.0, -100.0, 100.0]])
    dests = starts + np.array([[25.0, 0.0, 0.0], [25.0, -25.0, 0.0], [0.0, 0.0, -25.0]])
    tasks = np.array([[500.0, 0.0, 0.0], [-353.6, 353.6, 0.0], [-353.6, -353.6, 0.0]])
    plan = TrajectoryCyclePlan(starts, dests, tasks, BS, CycleSchedule(t_u=3), c=1)
    p_u = uplink_success_prob(plan)
    trials = 10**5
    mc = simulate_cycles(plan, trials, np.random.default_rng(31), sensing_rng=np.random.default_rng(32))
    se = np.sqrt(p_u * (1 - p_u) / trials)
    assert np.all(np.abs(mc.tx_ok.mean(axis=0) - p_u) <= 3 * se + 1e-12)
    assert np.allclose(valid_tx_prob(plan), cycle_sensing_prob(plan) * p_u)
    assert valid_tx_prob(plan, 1) == pytest.approx(cycle_sensing_prob(plan, 1) * p_u[1])


def test_valid_tx_zero_cases():
    pos = np.array([[150.0, 0.0, 50.0]])
    assert valid_tx_prob(TrajectoryCyclePlan(pos, pos, pos + 400, BS, params=ChannelParams(sensing_lambda=1e6)), 0) == 0.0
    assert valid_tx_prob(TrajectoryCyclePlan(pos, pos, pos, BS, CycleSchedule(t_u=0)), 0) == 0.0


def test_n_vd_examples():
    scn = EquivalentUavScenario(n=1, c=1, p_s=1.0, p_u=0.5)
    assert n_vd(scn, 2) == pytest.approx(0.75, abs=1e-12)
    assert n_vd(scn, 0) == 0.0
    assert n_vd(scn, 1e9) < 1e-7
    with pytest.raises(ValueError):
        n_vd(scn, -1)


def test_optimal_tu_needs_overhead():
    with pytest.raises(ValueError):
        optimal_tu(EquivalentUavScenario(t_b=0, t_s=0))


@pytest.mark.parametrize("kw", [dict(p_u=0.0), dict(p_u=1.0), dict(p_s=1.5), dict(n=0), dict(c=0)])
def test_scenario_domain(kw):
    with pytest.raises(ValueError):
        EquivalentUavScenario(**kw)


def test_lambert_examples():
    assert lambert_w_minus1(-1 / math.e) == pytest.approx(-1.0, abs=1e-10)
    # bisection oracle, frozen
    assert lambert_w_minus1(-0.1) == pytest.approx(-3.577152063957297, abs=1e-12)
    assert lambert_w_minus1(-0.1) == pytest.approx(bisect_w(-0.1), abs=1e-12)
    for bad in (0.0, 0.1, -0.5):
        with pytest.raises(ValueError):
            lambert_w_minus1(bad)


def test_lambert_round_trip_grid():
    xs = np.linspace(-1 / math.e, 0, 102)[1:-1]
    for x in xs:
        w = lambert_w_minus1(x)
        assert w <= -1.0
        assert abs(w * math.exp(w) - x) <= 1e-10


@given(st.floats(-1 / math.e, -1e-300, exclude_min=True))
def test_lambert_property(x):
    w = lambert_w_minus1(x)
    assert w <= -1.0
    assert abs(w * math.exp(w) - x) <= 1e-10


GRID = [(p, n, c) for p in (0.2, 0.5, 0.8) for n in (3, 5) for c in (1, 2)]


@pytest.mark.parametrize("p_u,n,c", GRID)
def test_optimal_tu_grid(p_u, n, c):
    scn = EquivalentUavScenario(n=n, c=c, p_s=1.0, p_u=p_u)
    opt = optimal_tu(scn)
    grid = np.arange(1, 201)
    assert opt.integer == int(grid[np.argmax(n_vd(scn, grid))])
    assert abs(opt.residual) <= 1e-8
    assert opt.agreement <= 1e-8
    # rise then fall around the real maximiser
    below = np.linspace(0, opt.closed_form, 40)[:-1]
    above = np.linspace(opt.closed_form, opt.closed_form + 200, 40)[1:]
    assert np.all(n_vd_slope_numerator(scn, below) > 0)
    assert np.all(n_vd_slope_numerator(scn, above) < 0)
    assert np.all(np.diff(n_vd(scn, np.append(below, opt.closed_form))) > 0)
    assert np.all(np.diff(n_vd(scn, np.insert(above, 0, opt.closed_form))) < 0)


@given(st.floats(0.01, 0.99), st.integers(1, 12), st.integers(1, 4), st.integers(0, 6), st.integers(1, 8))
def test_optimal_tu_root(p_u, n, c, t_b, t_s):
    scn = EquivalentUavScenario(n=n, c=c, p_u=p_u, t_b=t_b, t_s=t_s)
    opt = optimal_tu(scn)
    assert abs(opt.residual) <= 1e-8
    assert opt.agreement <= 1e-6 * max(1.0, opt.closed_form)
    f = n_vd_slope_numerator(scn, np.linspace(0, 4 * opt.closed_form + 10, 400))
    signs = np.sign(f[np.abs(f) > 1e-9])
    assert np.count_nonzero(np.diff(signs)) == 1
