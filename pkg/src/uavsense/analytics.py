"""Closed-form and dynamic-programming analysis of the sense-and-send cycle.

Covers the per-cycle sensing probability, the absorbing probability of the
transmission-state chain (successful uplink within the cycle), their product
(valid data delivered), the spectrum-efficiency metric ``N_vd`` for
equivalent UAVs and its maximiser over the transmission-phase length.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from .protocol import TrajectoryCyclePlan

MAX_DP_UAVS = 20


class CapacityError(RuntimeError):
    """The requested computation exceeds a documented size guard."""


def cycle_sensing_prob(plan: TrajectoryCyclePlan, uav: int | None = None):
    p = plan.sensing_probs()
    return p if uav is None else float(p[uav])


def uplink_probs_from_frames(tx_probs, c: int) -> np.ndarray:
    """Absorbing probabilities for a batch of per-frame probability tables.

    ``tx_probs`` is ``(M, t_u, N)`` (or ``(t_u, N)``); the result is ``(M, N)``
    (or ``(N,)``) probabilities that each UAV gets its frame through before the
    cycle ends.  The chain is solved backwards over ``(frame, done-mask)``.
    """
    tx_probs = np.asarray(tx_probs, dtype=float)
    single = tx_probs.ndim == 2
    if single:
        tx_probs = tx_probs[None]
    m, t_u, n = tx_probs.shape
    if n > MAX_DP_UAVS:
        raise CapacityError(f"uplink DP enumerates 2^N states; N={n} exceeds the guard of {MAX_DP_UAVS}")
    if t_u == 0 or c <= 0:
        out = np.zeros((m, n))
    else:
        out = _kernels.uplink_dp(tx_probs, int(c))
    return out[0] if single else out


def uplink_success_prob(plan: TrajectoryCyclePlan, uav: int | None = None):
    """Probability that the UAV's data frame is delivered in the transmission phase."""
    if plan.n > MAX_DP_UAVS:
        raise CapacityError(f"N={plan.n} exceeds the uplink DP guard of {MAX_DP_UAVS}")
    p = uplink_probs_from_frames(plan.tx_probs(), plan.c)
    return p if uav is None else float(p[uav])


def valid_tx_prob(plan: TrajectoryCyclePlan, uav: int | None = None):
    """Probability that valid (successfully sensed) data reaches the BS this cycle."""
    p = plan.sensing_probs() * uplink_probs_from_frames(plan.tx_probs(), plan.c)
    return p if uav is None else float(p[uav])


# ---------------------------------------------------------------------------
# Equivalent-UAV spectrum efficiency
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EquivalentUavScenario:
    """Symmetric scenario: every UAV shares the same sensing and per-frame uplink odds."""

    n: int = 3
    c: int = 1
    p_s: float = 1.0
    p_u: float = 0.5
    t_b: int = 3
    t_s: int = 5
    t_f: float = 0.1

    def __post_init__(self):
        if self.n < 1 or self.c < 1:
            raise ValueError("n and c must be at least 1")
        if not 0.0 < self.p_u < 1.0:
            raise ValueError(f"p_u must lie strictly between 0 and 1, got {self.p_u}")
        if not 0.0 <= self.p_s <= 1.0:
            raise ValueError(f"p_s must lie in [0, 1], got {self.p_s}")

    @property
    def p_f(self) -> float:
        return 1.0 - self.p_u


def n_vd(scn: EquivalentUavScenario, t_u):
    """Valid sensory data delivered per second for transmission phases of ``t_u`` frames."""
    t_u = np.asarray(t_u, dtype=float)
    if np.any(t_u < 0):
        raise ValueError("t_u must be non-negative")
    delivered = -np.expm1(scn.c * t_u / scn.n * math.log(scn.p_f))
    out = scn.n * scn.p_s * delivered / ((scn.t_b + scn.t_s + t_u) * scn.t_f)
    return out if out.ndim else float(out)


def n_vd_slope_numerator(scn: EquivalentUavScenario, t_u):
    """``F(t_u)``: the sign-carrying factor of ``d N_vd / d t_u``."""
    t_u = np.asarray(t_u, dtype=float)
    ln_pf = math.log(scn.p_f)
    pow_ = np.exp(scn.c * t_u / scn.n * ln_pf)
    out = pow_ * (scn.n - scn.c * (scn.t_b + scn.t_s + t_u) * ln_pf) - scn.n
    return out if out.ndim else float(out)


_W_TOL = 1e-15


def lambert_w_minus1(x: float) -> float:
    """Lower real branch ``W_{-1}`` of the Lambert W function on ``[-1/e, 0)``.

    Safeguarded Newton iteration on ``f(w) = w e^w - x`` over a shrinking
    bracket in ``(-inf, -1]``; falls back to bisection whenever a Newton step
    leaves the bracket.
    """
    x = float(x)
    branch = -math.exp(-1.0)
    if not (branch - 1e-15 <= x < 0.0):
        raise ValueError(f"W_-1 is defined on [-1/e, 0); got {x}")
    if x <= branch:
        return -1.0
    # near the branch point use the series in p = -sqrt(2 (1 + e x))
    p = -math.sqrt(max(2.0 * (1.0 + math.e * x), 0.0))
    if p > -0.5:
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3
    else:
        l1 = math.log(-x)
        l2 = math.log(-l1)
        w = l1 - l2 + l2 / l1
    w = min(w, -1.0)
    # bracket [lo, hi] with f(lo) > 0 > f(hi) (w e^w is decreasing on (-inf, -1])
    hi = -1.0
    lo = min(w, -2.0)
    while lo * math.exp(lo) <= x:
        lo *= 2.0
    for _ in range(200):
        f = w * math.exp(w) - x
        if f > 0:
            lo = w
        else:
            hi = w
        d = math.exp(w) * (w + 1.0)
        nw = w - f / d if d != 0.0 else 0.5 * (lo + hi)
        if not (lo < nw < hi):
            nw = 0.5 * (lo + hi)
        if abs(nw - w) <= _W_TOL * max(1.0, abs(w)) or hi - lo <= _W_TOL * max(1.0, abs(lo)):
            w = nw
            break
        w = nw
    return w


@dataclass(frozen=True)
class OptimalTu:
    """Maximiser of ``N_vd`` over the transmission-phase length."""

    closed_form: float
    numeric_root: float
    integer: int
    residual: float

    @property
    def agreement(self) -> float:
        return abs(self.closed_form - self.numeric_root)


def optimal_tu(scn: EquivalentUavScenario) -> OptimalTu:
    """Closed-form maximiser of ``N_vd`` plus an independent bracketed root of ``F``.

    ``T* = N / (C ln p_f) * (1 + W_{-1}(-p_f^{C (t_b + t_s) / N} / e)) - t_b - t_s``
    solves ``F(T*) = 0``.  The integer recommendation is whichever neighbour
    of ``T*`` yields the larger ``N_vd``.
    """
    ln_pf = math.log(scn.p_f)
    s = scn.t_b + scn.t_s
    if s == 0:
        # N_vd then decreases from t_u = 0 onwards; there is no interior maximiser
        raise ValueError("optimal_tu needs t_b + t_s > 0")
    arg = -math.exp(scn.c * s / scn.n * ln_pf - 1.0)
    t_star = scn.n / (scn.c * ln_pf) * (1.0 + lambert_w_minus1(arg)) - s

    f = lambda t: n_vd_slope_numerator(scn, t)  # noqa: E731
    hi = max(1.0, 2.0 * t_star)
    while f(hi) > 0:
        hi *= 2.0
    root = brentq(f, 0.0, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)

    lo_i = max(int(math.floor(t_star)), 1)
    candidates = sorted({lo_i, lo_i + 1, max(int(math.ceil(t_star)), 1)})
    best = max(candidates, key=lambda t: (n_vd(scn, t), -t))
    return OptimalTu(closed_form=t_star, numeric_root=root, integer=best, residual=f(t_star))


# ---------------------------------------------------------------------------
# Cached joint evaluation for learning agents
# ---------------------------------------------------------------------------


class JointEvaluator:
    """Valid-transmission probabilities for every joint action profile of a state.

    Per-UAV trajectory quantities (sensing probability and per-frame uplink
    probabilities of a ``start -> dest`` segment) do not depend on the other
    UAVs, so they are cached per UAV; the contention between UAVs is then
    resolved for all profiles in one batched DP.
    """

    def __init__(self, tasks, lattice, schedule, params, c, interpolation="reanchored", table_cache=256):
        from .spatial import to_cartesian

        self._to_cart = to_cartesian
        self.tasks = np.asarray(tasks, dtype=float)
        self.lattice = lattice
        self.schedule = schedule
        self.params = params
        self.c = int(c)
        self.interpolation = interpolation
        self.bs = np.asarray(lattice.bs, dtype=float)
        self._segments: dict = {}
        self._joint: OrderedDict = OrderedDict()
        self._table_cache = table_cache

    @property
    def n(self) -> int:
        return self.tasks.shape[0]

    def segment(self, uav: int, start, dest):
        """``(sensing prob, per-frame tx probs)`` for one UAV flying ``start -> dest``."""
        key = (uav, start, dest)
        hit = self._segments.get(key)
        if hit is None:
            plan = TrajectoryCyclePlan(
                starts=[self._to_cart(start, self.lattice)],
                dests=[self._to_cart(dest, self.lattice)],
                tasks=self.tasks[uav : uav + 1],
                bs=self.bs,
                schedule=self.schedule,
                params=self.params,
                c=self.c,
                interpolation=self.interpolation,
            )
            hit = (float(plan.sensing_probs()[0]), plan.tx_probs()[:, 0].copy())
            self._segments[key] = hit
        return hit

    def profile(self, state, joint_action) -> np.ndarray:
        """Per-UAV valid-transmission probability for one joint action."""
        n = self.n
        p_s = np.empty(n)
        tx = np.empty((self.schedule.t_u, n))
        for j in range(n):
            p_s[j], tx[:, j] = self.segment(j, state[j], state[j].step(joint_action[j]))
        return p_s * uplink_probs_from_frames(tx, self.c)

    def table(self, state, action_sets) -> np.ndarray:
        """Probabilities for the full product of ``action_sets``.

        Returns an array of shape ``(len(A_1), ..., len(A_N), N)``; cached per
        ``(state, action_sets)`` in a bounded LRU.
        """
        key = (state, action_sets)
        hit = self._joint.get(key)
        if hit is not None:
            self._joint.move_to_end(key)
            return hit
        n = self.n
        sizes = [len(a) for a in action_sets]
        t_u = self.schedule.t_u
        seg_s = []
        seg_tx = []
        for j in range(n):
            s_j = [self.segment(j, state[j], state[j].step(a)) for a in action_sets[j]]
            seg_s.append(np.array([v[0] for v in s_j]))
            seg_tx.append(np.array([v[1] for v in s_j]).reshape(len(s_j), t_u))
        grids = np.meshgrid(*[np.arange(k) for k in sizes], indexing="ij")
        flat = [g.ravel() for g in grids]
        m = flat[0].size
        p_s = np.empty((m, n))
        tx = np.empty((m, t_u, n))
        for j in range(n):
            p_s[:, j] = seg_s[j][flat[j]]
            tx[:, :, j] = seg_tx[j][flat[j]]
        if n > MAX_DP_UAVS:
            raise CapacityError(f"N={n} exceeds the uplink DP guard of {MAX_DP_UAVS}")
        out = (p_s * uplink_probs_from_frames(tx, self.c)).reshape(*sizes, n)
        self._joint[key] = out
        if len(self._joint) > self._table_cache:
            self._joint.popitem(last=False)
        return out
