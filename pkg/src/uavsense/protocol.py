"""Sense-and-send cycle engine.

A cycle has ``t_b`` beaconing frames, ``t_s`` sensing frames and ``t_u``
transmission frames.  Frames are indexed from 1, so sensing happens in frames
``t_b + 1 .. t_b + t_s`` and transmission in ``t_b + t_s + 1 .. t_c``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .channel import ChannelParams, link_budget, sample_fading_success, tx_success_prob


class Interpolation(str, enum.Enum):
    # start at frame t_b, destination at frame t_c
    REANCHORED = "reanchored"
    # fraction t / t_c of the displacement, as printed
    PAPER_LITERAL = "paper-literal"


class SimMode(str, enum.Enum):
    ANALYTIC_BERNOULLI = "analytic-bernoulli"
    FULL_CHANNEL = "full-channel"


@dataclass(frozen=True)
class CycleSchedule:
    t_b: int = 3
    t_s: int = 5
    t_u: int = 5
    t_f: float = 0.1

    def __post_init__(self):
        for name in ("t_b", "t_s", "t_u"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"schedule.{name} must be a non-negative integer, got {v}")
            object.__setattr__(self, name, int(v))
        if not self.t_f > 0:
            raise ValueError(f"schedule.t_f must be > 0, got {self.t_f}")

    @property
    def t_c(self) -> int:
        return self.t_b + self.t_s + self.t_u

    @property
    def duration(self) -> float:
        """Cycle length in seconds."""
        return self.t_c * self.t_f

    @property
    def sensing_frames(self) -> np.ndarray:
        return np.arange(self.t_b + 1, self.t_b + self.t_s + 1)

    @property
    def transmission_frames(self) -> np.ndarray:
        return np.arange(self.t_b + self.t_s + 1, self.t_c + 1)


def interpolate_position(start, dest, t, sched: CycleSchedule, mode=Interpolation.REANCHORED):
    """Position at frame ``t`` for straight, uniform-speed flight ``start -> dest``.

    ``t`` may be an array of frames; the result then has shape ``t.shape + (3,)``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < sched.t_b) or np.any(t > sched.t_c):
        raise ValueError(f"frame index must lie in [{sched.t_b}, {sched.t_c}]")
    start = np.asarray(start, dtype=float)
    dest = np.asarray(dest, dtype=float)
    if Interpolation(mode) is Interpolation.PAPER_LITERAL:
        frac = t / sched.t_c
    elif sched.t_c == sched.t_b:
        frac = np.zeros_like(t)
    else:
        frac = (t - sched.t_b) / (sched.t_c - sched.t_b)
    return start + frac[..., None] * (dest - start)


def allocate_subchannels(tx_probs, done, c: int) -> np.ndarray:
    """Give the ``c`` subchannels to the best not-yet-done UAVs.

    Ties in probability go to the lower UAV index.  Returns a boolean mask.
    """
    p = np.asarray(tx_probs, dtype=float)
    done = np.asarray(done, dtype=bool)
    order = np.argsort(-p, kind="stable")
    order = order[~done[order]][: max(int(c), 0)]
    out = np.zeros(p.shape[0], dtype=bool)
    out[order] = True
    return out


@dataclass(frozen=True)
class TrajectoryCyclePlan:
    """Everything needed to evaluate or simulate one cycle for N UAVs.

    ``starts``, ``dests`` and ``tasks`` are ``(N, 3)`` metric arrays; ``bs``
    is ``(3,)``.
    """

    starts: np.ndarray
    dests: np.ndarray
    tasks: np.ndarray
    bs: np.ndarray
    schedule: CycleSchedule = field(default_factory=CycleSchedule)
    params: ChannelParams = field(default_factory=ChannelParams)
    c: int = 1
    interpolation: Interpolation = Interpolation.REANCHORED

    def __post_init__(self):
        for name in ("starts", "dests", "tasks"):
            arr = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "bs", np.asarray(self.bs, dtype=float))
        n = self.starts.shape[0]
        if self.dests.shape != (n, 3) or self.tasks.shape != (n, 3) or self.starts.shape != (n, 3):
            raise ValueError("starts, dests and tasks must all be (N, 3) with the same N")
        if self.c < 0:
            raise ValueError("subchannel count must be non-negative")

    @property
    def n(self) -> int:
        return self.starts.shape[0]

    def positions(self, frames) -> np.ndarray:
        """``(len(frames), N, 3)`` UAV positions at the given frames."""
        frames = np.asarray(frames)
        return interpolate_position(self.starts, self.dests, frames[:, None], self.schedule, self.interpolation)

    def sensing_probs(self) -> np.ndarray:
        """Per-UAV probability that every sensing frame succeeds."""
        frames = self.schedule.sensing_frames
        if frames.size == 0:
            return np.ones(self.n)
        l = np.linalg.norm(self.positions(frames) - self.tasks[None], axis=-1)
        lam = self.params.sensing_lambda
        return np.exp(-lam * self.schedule.t_f * l.sum(axis=0))

    def tx_probs(self) -> np.ndarray:
        """``(t_u, N)`` per-frame uplink success probabilities."""
        frames = self.schedule.transmission_frames
        if frames.size == 0:
            return np.zeros((0, self.n))
        return np.asarray(tx_success_prob(self.positions(frames), self.bs, self.params))


@dataclass
class CycleOutcome:
    """Result of one simulated cycle.

    ``tx_frame`` holds the absolute frame index of the successful uplink, or
    -1 when the UAV never got through.
    """

    sensed_ok: np.ndarray
    tx_ok: np.ndarray
    tx_frame: np.ndarray

    @property
    def reward(self) -> np.ndarray:
        return (self.sensed_ok & self.tx_ok).astype(np.int8)


@dataclass
class CycleBatch:
    """Outcomes of many independent cycles of the same plan, shaped ``(trials, N)``."""

    sensed_ok: np.ndarray
    tx_ok: np.ndarray
    tx_frame: np.ndarray

    @property
    def reward(self) -> np.ndarray:
        return (self.sensed_ok & self.tx_ok).astype(np.int8)


def _potential_successes(plan, tx_probs, trials, mode, rng):
    # success of every (trial, frame, UAV) attempt, whether or not it gets a subchannel
    shape = (trials,) + tx_probs.shape
    if SimMode(mode) is SimMode.ANALYTIC_BERNOULLI:
        return rng.random(shape) < tx_probs
    frames = plan.schedule.transmission_frames
    lb = link_budget(plan.positions(frames), plan.bs, plan.params)
    return sample_fading_success(lb, rng, shape)


def simulate_cycles(plan: TrajectoryCyclePlan, trials: int, rng, mode=SimMode.ANALYTIC_BERNOULLI,
                    sensing_rng=None, tx_probs=None, sensing_probs=None) -> CycleBatch:
    """Simulate ``trials`` independent cycles of ``plan``.

    Sensing is one Bernoulli draw per UAV on the product probability.  In each
    transmission frame the subchannels go to the best not-yet-done UAVs by
    analytic probability; an assigned UAV succeeds by a Bernoulli draw on that
    probability or, in ``FULL_CHANNEL`` mode, by sampling LoS state and fading.

    ``sensing_rng`` defaults to ``rng``; pass a separate generator to keep the
    sensing and channel streams disjoint.  Precomputed ``tx_probs`` /
    ``sensing_probs`` may be supplied to skip re-evaluating the channel.
    """
    sensing_rng = rng if sensing_rng is None else sensing_rng
    p_s = plan.sensing_probs() if sensing_probs is None else np.asarray(sensing_probs)
    p_tx = plan.tx_probs() if tx_probs is None else np.asarray(tx_probs)
    sensed = sensing_rng.random((trials, plan.n)) < p_s
    if p_tx.shape[0] == 0:
        frame = np.full((trials, plan.n), -1, dtype=np.int64)
    else:
        success = _potential_successes(plan, p_tx, trials, mode, rng)
        frame = _kernels.transmit_batch(p_tx, plan.c, success)
    tx_ok = frame >= 0
    first = plan.schedule.t_b + plan.schedule.t_s + 1
    tx_frame = np.where(tx_ok, frame + first, -1)
    return CycleBatch(sensed, tx_ok, tx_frame)


def simulate_cycle(plan: TrajectoryCyclePlan, rng, mode=SimMode.ANALYTIC_BERNOULLI, sensing_rng=None,
                   tx_probs=None, sensing_probs=None) -> CycleOutcome:
    """Simulate a single cycle; see :func:`simulate_cycles`."""
    b = simulate_cycles(plan, 1, rng, mode, sensing_rng, tx_probs, sensing_probs)
    return CycleOutcome(b.sensed_ok[0], b.tx_ok[0], b.tx_frame[0])
