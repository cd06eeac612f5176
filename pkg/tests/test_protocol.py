import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uavsense import _kernels
from uavsense.channel import ChannelParams, tx_success_prob
from uavsense.protocol import (
    CycleSchedule,
    Interpolation,
    SimMode,
    TrajectoryCyclePlan,
    allocate_subchannels,
    interpolate_position,
    simulate_cycle,
    simulate_cycles,
)

BS = np.array([0.0, 0.0, 25.0])


def sort_oracle(probs, done, c):
    # sort (-p, index) pairs, skip done, take first c
    ranked = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    picked = [i for i in ranked if not done[i]][:c]
    return np.array([i in picked for i in range(len(probs))])


def plan_for(starts, dests=None, tasks=None, t_u=5, c=1, **kw):
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    dests = starts if dests is None else dests
    tasks = starts if tasks is None else tasks
    return TrajectoryCyclePlan(starts, dests, tasks, BS, CycleSchedule(t_u=t_u), c=c, **kw)


def test_schedule_basics():
    s = CycleSchedule()
    assert s.t_c == 13
    assert s.duration == pytest.approx(1.3)
    assert list(s.sensing_frames) == [4, 5, 6, 7, 8]
    assert list(s.transmission_frames) == [9, 10, 11, 12, 13]
    for bad in (dict(t_b=-1), dict(t_u=1.5), dict(t_f=0.0)):
        with pytest.raises(ValueError):
            CycleSchedule(**bad)


def test_interpolation_endpoints_and_midpoint():
    s = CycleSchedule(t_b=3, t_s=5, t_u=5)
    a, b = np.array([0.0, 0.0, 50.0]), np.array([25.0, -25.0, 75.0])
    assert np.allclose(interpolate_position(a, b, 3, s), a)
    assert np.allclose(interpolate_position(a, b, 13, s), b)
    assert np.allclose(interpolate_position(a, b, 8, s), (a + b) / 2)
    lit = interpolate_position(a, b, 3, s, Interpolation.PAPER_LITERAL)
    assert np.allclose(lit, a + 3 / 13 * (b - a))
    for t in (2, 14):
        with pytest.raises(ValueError):
            interpolate_position(a, b, t, s)


def test_allocation_examples():
    assert list(allocate_subchannels([0.9, 0.5, 0.7], [0, 0, 0], 1)) == [True, False, False]
    assert list(allocate_subchannels([0.9, 0.5, 0.7], [1, 0, 0], 1)) == [False, False, True]
    assert list(allocate_subchannels([0.6, 0.6, 0.2], [0, 0, 0], 1)) == [True, False, False]
    assert list(allocate_subchannels([0.6, 0.6, 0.2], [1, 1, 0], 5)) == [False, False, True]
    assert not allocate_subchannels([0.6, 0.6], [0, 0], 0).any()


def test_allocation_exhaustive_against_oracle():
    levels = (0.0, 0.3, 0.3, 0.8)
    for n in (1, 2, 3, 4):
        for probs in itertools.product(levels[1:], repeat=n):
            for done in itertools.product((0, 1), repeat=n):
                for c in range(n + 2):
                    got = allocate_subchannels(probs, done, c)
                    assert np.array_equal(got, sort_oracle(probs, done, c))


@given(st.lists(st.sampled_from([0.1, 0.4, 0.4, 0.9]), min_size=1, max_size=8),
       st.data(), st.integers(0, 9))
def test_allocation_properties(probs, data, c):
    done = data.draw(st.lists(st.booleans(), min_size=len(probs), max_size=len(probs)))
    got = allocate_subchannels(probs, done, c)
    assert got.sum() == min(c, len(probs) - sum(done))
    assert not (got & np.array(done)).any()


def reference_stepper(probs, c, success):
    """Frame-by-frame transmission with explicit allocation; returns frames and the done history."""
    t_count, n = probs.shape
    done = np.zeros(n, dtype=bool)
    frame = np.full(n, -1)
    history = [done.copy()]
    assigned_counts = []
    for t in range(t_count):
        nu = allocate_subchannels(probs[t], done, c)
        assigned_counts.append((int(nu.sum()), int(min(c, (~done).sum()))))
        hit = nu & success[t]
        frame[hit] = t
        done = done | hit
        history.append(done.copy())
    return frame, history, assigned_counts


@given(st.integers(1, 5), st.integers(1, 6), st.integers(0, 4), st.integers(0, 2**32 - 1))
def test_batch_transmission_matches_reference(n, t, c, seed):
    rng = np.random.default_rng(seed)
    probs = np.round(rng.random((t, n)), 1)
    success = rng.random((20, t, n)) < 0.6
    got = _kernels.transmit_batch(probs, c, success)
    for r in range(20):
        frame, history, counts = reference_stepper(probs, c, success[r])
        assert np.array_equal(got[r], frame)
        for before, after in zip(history, history[1:]):
            assert not (before & ~after).any()
        for have, want in counts:
            assert have == want


def test_zero_transmission_frames():
    plan = plan_for([[150.0, 0.0, 50.0], [100.0, 50.0, 75.0]], t_u=0)
    out = simulate_cycle(plan, np.random.default_rng(0))
    assert not out.tx_ok.any()
    assert (out.tx_frame == -1).all()
    assert not out.reward.any()


def test_single_uav_stationary_matches_probability():
    pos = [[175.0, 0.0, 75.0]]
    plan = plan_for(pos, t_u=1)
    p = float(tx_success_prob(np.array(pos[0]), BS, ChannelParams()))
    trials = 10**5
    batch = simulate_cycles(plan, trials, np.random.default_rng(11))
    assert abs(batch.tx_ok.mean() - p) <= 3 * math.sqrt(p * (1 - p) / trials)


def test_no_contention_product_form():
    starts = np.array([[175.0, 0.0, 75.0], [150.0, 50.0, 100.0], [125.0, -50.0, 50.0]])
    dests = starts + np.array([[25.0, 0.0, 0.0], [0.0, 25.0, 25.0], [-25.0, 0.0, 25.0]])
    plan = plan_for(starts, dests, t_u=4, c=3)
    p = plan.tx_probs()
    want = 1 - np.prod(1 - p, axis=0)
    trials = 10**5
    batch = simulate_cycles(plan, trials, np.random.default_rng(12))
    se = np.sqrt(want * (1 - want) / trials)
    assert np.all(np.abs(batch.tx_ok.mean(axis=0) - want) <= 3 * se + 1e-12)


def test_outcome_fields_consistent():
    starts = np.array([[150.0, 0.0, 50.0], [125.0, 25.0, 75.0], [175.0, -25.0, 50.0]])
    plan = plan_for(starts, tasks=starts + [300.0, 0.0, -50.0], t_u=5, c=1)
    b = simulate_cycles(plan, 5000, np.random.default_rng(13))
    s = plan.schedule
    assert np.array_equal(b.tx_ok, b.tx_frame >= 0)
    ok = b.tx_frame[b.tx_ok]
    assert ok.min() >= s.t_b + s.t_s + 1 and ok.max() <= s.t_c
    r = b.reward.astype(bool)
    assert not (r & ~(b.sensed_ok & b.tx_ok)).any()
    # with one subchannel at most one UAV can succeed per frame
    for row in b.tx_frame:
        got = row[row >= 0]
        assert len(set(got)) == len(got)


def test_sensing_probability_product():
    starts = np.array([[150.0, 0.0, 50.0]])
    tasks = np.array([[500.0, 0.0, 0.0]])
    plan = plan_for(starts, tasks=tasks)
    d = np.linalg.norm(starts[0] - tasks[0])
    lam = ChannelParams().sensing_lambda
    assert plan.sensing_probs()[0] == pytest.approx(math.exp(-lam * 0.1 * 5 * d))
    b = simulate_cycles(plan, 10**5, np.random.default_rng(14))
    p = plan.sensing_probs()[0]
    assert abs(b.sensed_ok.mean() - p) <= 3 * math.sqrt(p * (1 - p) / 10**5)


@pytest.mark.parametrize("c", [1, 3])
def test_full_channel_matches_bernoulli(c):
    starts = np.array([[175.0, 0.0, 75.0], [150.0, 50.0, 100.0], [125.0, -50.0, 50.0]])
    plan = plan_for(starts, starts + [[25.0, 0, 0], [0, 25, 0], [0, 0, 25]], t_u=3, c=c)
    n = 10**5
    a = simulate_cycles(plan, n, np.random.default_rng(21)).tx_ok.mean(axis=0)
    b = simulate_cycles(plan, n, np.random.default_rng(22), mode=SimMode.FULL_CHANNEL).tx_ok.mean(axis=0)
    pooled = (a + b) / 2
    se = np.sqrt(pooled * (1 - pooled) * 2 / n)
    assert np.all(np.abs(a - b) <= 3 * se + 1e-12)


def test_simulation_is_seeded():
    plan = plan_for([[150.0, 0.0, 50.0], [175.0, 25.0, 75.0]], t_u=3)
    a = simulate_cycles(plan, 100, np.random.default_rng(5), sensing_rng=np.random.default_rng(6))
    b = simulate_cycles(plan, 100, np.random.default_rng(5), sensing_rng=np.random.default_rng(6))
    assert np.array_equal(a.tx_frame, b.tx_frame) and np.array_equal(a.sensed_ok, b.sensed_ok)


def test_plan_shape_validation():
    with pytest.raises(ValueError):
        TrajectoryCyclePlan(np.zeros((2, 3)), np.zeros((3, 3)), np.zeros((2, 3)), BS)
