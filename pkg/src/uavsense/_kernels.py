"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Three kernels dominate the runtime of learning runs and validation:

* ``marcum_q1`` -- first-order Marcum Q, evaluated for every per-frame
  uplink probability.
* ``uplink_dp`` -- absorbing probabilities of the per-frame transmission
  state chain, batched over many joint trajectories.
* ``transmit_batch`` -- realisation of a transmission phase for many
  independent cycles at once.

Set ``UAVSENSE_DISABLE_JIT=1`` to force the numpy implementations even when
numba is importable.  Both implementations are always importable under
explicit names (``*_numba`` / ``*_numpy``) so tests and benchmarks can compare
them; ``*_numba`` silently aliases the numpy version when numba is missing.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

JIT_DISABLED = os.environ.get("UAVSENSE_DISABLE_JIT", "").strip().lower() in {"1", "true", "yes", "on"}
USE_NUMBA = HAVE_NUMBA and not JIT_DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"

# Series truncation: the neglected Poisson tail is bounded by this value.
_SERIES_TOL = 1e-15


def _njit(fn):
    if HAVE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# Marcum Q_1
#
# Q_1(a, b) = sum_k Pois(k; a^2/2) * P[Pois(b^2/2) <= k]
#
# i.e. the noncentral chi-square (2 dof) survival function written as a
# Poisson mixture.  Every term is non-negative, weights are formed in the log
# domain, and the neglected tail after term k is at most w_k * r / (1 - r)
# with r = (a^2/2) / (k + 1) once k exceeds a^2/2.
# ---------------------------------------------------------------------------


def _marcum_q1_scalar_py(a, b):
    la = 0.5 * a * a
    lb = 0.5 * b * b
    if lb <= 0.0:
        return 1.0
    log_la = math.log(la) if la > 0.0 else 0.0
    log_lb = math.log(lb)
    total = 0.0
    cdf_b = 0.0
    k = 0
    while True:
        lg = math.lgamma(k + 1.0)
        cdf_b += math.exp(-lb + k * log_lb - lg)
        if cdf_b > 1.0:
            cdf_b = 1.0
        if la > 0.0:
            w = math.exp(-la + k * log_la - lg)
        else:
            w = 1.0 if k == 0 else 0.0
        total += w * cdf_b
        if k + 1.0 > la:
            r = la / (k + 1.0)
            if w * r / (1.0 - r) <= _SERIES_TOL:
                break
        k += 1
    if total > 1.0:
        total = 1.0
    return total


_marcum_q1_scalar = _njit(_marcum_q1_scalar_py)


@_njit
def _marcum_q1_loop(a, b, out):
    for i in range(a.shape[0]):
        out[i] = _marcum_q1_scalar(a[i], b[i])
    return out


def marcum_q1_numba(a, b):
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    shape = a.shape
    af = np.ascontiguousarray(a.ravel())
    bf = np.ascontiguousarray(b.ravel())
    out = np.empty(af.shape[0], dtype=np.float64)
    _marcum_q1_loop(af, bf, out)
    return out.reshape(shape)


def marcum_q1_numpy(a, b):
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    shape = a.shape
    la = 0.5 * a.ravel() ** 2
    lb = 0.5 * b.ravel() ** 2
    n = la.shape[0]
    total = np.zeros(n)
    cdf_b = np.zeros(n)
    active = lb > 0.0
    total[~active] = 1.0
    with np.errstate(divide="ignore"):
        log_la = np.where(la > 0.0, np.log(la), 0.0)
        log_lb = np.where(lb > 0.0, np.log(lb), 0.0)
    k = 0
    while active.any():
        idx = np.flatnonzero(active)
        lg = math.lgamma(k + 1.0)
        c = np.minimum(cdf_b[idx] + np.exp(-lb[idx] + k * log_lb[idx] - lg), 1.0)
        cdf_b[idx] = c
        lai = la[idx]
        w = np.where(lai > 0.0, np.exp(-lai + k * log_la[idx] - lg), 1.0 if k == 0 else 0.0)
        total[idx] += w * c
        past = k + 1.0 > lai
        r = np.where(past, lai / (k + 1.0), 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            done = past & (w * r / (1.0 - r) <= _SERIES_TOL)
        active[idx[done]] = False
        k += 1
    return np.minimum(total, 1.0).reshape(shape)


# ---------------------------------------------------------------------------
# Transmission-state chain (allocation to the C best not-yet-done UAVs)
# ---------------------------------------------------------------------------


def _uplink_dp_py(probs, c):
    # probs: (M, T, N) per-frame success probabilities; returns (M, N).
    m_count, t_count, n = probs.shape
    n_masks = 1 << n
    out = np.zeros((m_count, n))
    nxt = np.zeros((n_masks, n))
    cur = np.zeros((n_masks, n))
    order = np.zeros(n, dtype=np.int64)
    chosen = np.zeros(n, dtype=np.int64)
    for m in range(m_count):
        for mask in range(n_masks):
            for i in range(n):
                nxt[mask, i] = 1.0 if (mask >> i) & 1 else 0.0
        for t in range(t_count - 1, -1, -1):
            for mask in range(n_masks):
                # collect not-done UAVs and pick the c best (ties -> lower index)
                cnt = 0
                for i in range(n):
                    if not (mask >> i) & 1:
                        order[cnt] = i
                        cnt += 1
                k = c if c < cnt else cnt
                for s in range(k):
                    best = s
                    for j in range(s + 1, cnt):
                        if probs[m, t, order[j]] > probs[m, t, order[best]]:
                            best = j
                        elif probs[m, t, order[j]] == probs[m, t, order[best]] and order[j] < order[best]:
                            best = j
                    tmp = order[s]
                    order[s] = order[best]
                    order[best] = tmp
                    chosen[s] = order[s]
                for i in range(n):
                    cur[mask, i] = 0.0
                for sub in range(1 << k):
                    p = 1.0
                    new_mask = mask
                    for s in range(k):
                        u = chosen[s]
                        if (sub >> s) & 1:
                            p *= probs[m, t, u]
                            new_mask |= 1 << u
                        else:
                            p *= 1.0 - probs[m, t, u]
                    if p == 0.0:
                        continue
                    for i in range(n):
                        cur[mask, i] += p * nxt[new_mask, i]
            for mask in range(n_masks):
                for i in range(n):
                    nxt[mask, i] = cur[mask, i]
        for i in range(n):
            out[m, i] = nxt[0, i]
    return out


_uplink_dp_jit = _njit(_uplink_dp_py)


def uplink_dp_numba(probs, c):
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    return _uplink_dp_jit(probs, int(c))


def uplink_dp_numpy(probs, c):
    probs = np.asarray(probs, dtype=np.float64)
    m_count, t_count, n = probs.shape
    n_masks = 1 << n
    masks = np.arange(n_masks)
    bits = ((masks[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)  # (masks, N)
    # value[mask] -> (M, N); terminal value is the done indicator itself
    nxt = np.broadcast_to(bits[:, None, :].astype(np.float64), (n_masks, m_count, n)).copy()
    rows = np.arange(m_count)
    for t in range(t_count - 1, -1, -1):
        p_t = probs[:, t, :]
        cur = np.empty_like(nxt)
        for mask in range(n_masks):
            free = np.flatnonzero(~bits[mask])
            k = min(c, free.size)
            if k == 0:
                cur[mask] = nxt[mask]
                continue
            # stable sort on -p keeps the lower index first among ties
            rank = np.argsort(-p_t[:, free], axis=1, kind="stable")[:, :k]
            chosen = free[rank]  # (M, k) UAV indices
            pc = p_t[rows[:, None], chosen]
            acc = np.zeros((m_count, n))
            for sub in range(1 << k):
                take = ((sub >> np.arange(k)) & 1).astype(bool)
                weight = np.prod(np.where(take[None, :], pc, 1.0 - pc), axis=1)
                new_mask = mask | np.sum(np.where(take[None, :], 1 << chosen, 0), axis=1)
                acc += weight[:, None] * nxt[new_mask, rows, :]
            cur[mask] = acc
        nxt = cur
    return nxt[0].copy()


# ---------------------------------------------------------------------------
# Batched transmission phase
# ---------------------------------------------------------------------------


def _transmit_batch_py(order, c, success, tx_frame):
    # order: (T, N) priority per frame; success: (trials, T, N) potential outcomes.
    trials, t_count, n = success.shape
    done = np.zeros(n, dtype=np.bool_)
    for r in range(trials):
        for i in range(n):
            done[i] = False
            tx_frame[r, i] = -1
        for t in range(t_count):
            given = 0
            for j in range(n):
                if given >= c:
                    break
                u = order[t, j]
                if done[u]:
                    continue
                given += 1
                if success[r, t, u]:
                    done[u] = True
                    tx_frame[r, u] = t
    return tx_frame


_transmit_batch_jit = _njit(_transmit_batch_py)


def _priority(probs):
    return np.argsort(-np.asarray(probs, dtype=np.float64), axis=1, kind="stable")


def transmit_batch_numba(probs, c, success):
    """Return per-trial, per-UAV index of the successful frame (-1 if none)."""
    order = np.ascontiguousarray(_priority(probs), dtype=np.int64)
    success = np.ascontiguousarray(success, dtype=np.bool_)
    tx_frame = np.empty(success.shape[::2], dtype=np.int64)
    return _transmit_batch_jit(order, int(c), success, tx_frame)


def transmit_batch_numpy(probs, c, success):
    order = _priority(probs)
    success = np.asarray(success, dtype=bool)
    trials, t_count, n = success.shape
    done = np.zeros((trials, n), dtype=bool)
    tx_frame = np.full((trials, n), -1, dtype=np.int64)
    for t in range(t_count):
        o = order[t]
        free = ~done[:, o]
        assigned_sorted = free & (np.cumsum(free, axis=1) <= c)
        assigned = np.empty_like(assigned_sorted)
        assigned[:, o] = assigned_sorted
        hit = assigned & success[:, t, :]
        tx_frame[hit] = t
        done |= hit
    return tx_frame


if USE_NUMBA:
    marcum_q1 = marcum_q1_numba
    uplink_dp = uplink_dp_numba
    transmit_batch = transmit_batch_numba
else:
    marcum_q1 = marcum_q1_numpy
    uplink_dp = uplink_dp_numpy
    transmit_batch = transmit_batch_numpy

__all__ = [
    "BACKEND",
    "HAVE_NUMBA",
    "USE_NUMBA",
    "marcum_q1",
    "marcum_q1_numba",
    "marcum_q1_numpy",
    "transmit_batch",
    "transmit_batch_numba",
    "transmit_batch_numpy",
    "uplink_dp",
    "uplink_dp_numba",
    "uplink_dp_numpy",
]
