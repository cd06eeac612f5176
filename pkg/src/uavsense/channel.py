"""Air-to-ground channel: sensing model, LoS probability, pathloss and fading.

All functions broadcast over numpy arrays.  Positions are ``(..., 3)`` arrays
laid out as ``(x, y, h)`` in metres.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels


class LosMode(str, enum.Enum):
    # literal formula, clipped to 1 where it overshoots
    PAPER_LITERAL_CLAMPED = "paper-literal-clamped"
    # 3GPP TR 36.777 form: exponential term weighted by (1 - r_c / r)
    TR36777_CORRECTED = "tr36777-corrected"


@dataclass(frozen=True)
class ChannelParams:
    tx_power_dbm: float = 10.0
    noise_dbm: float = -85.0
    snr_threshold_db: float = 10.0
    carrier_ghz: float = 2.0
    sensing_lambda: float = 1e-3
    los_mode: LosMode = LosMode.PAPER_LITERAL_CLAMPED

    def __post_init__(self):
        object.__setattr__(self, "los_mode", LosMode(self.los_mode))
        if not self.sensing_lambda > 0:
            raise ValueError(f"channel.sensing_lambda must be > 0, got {self.sensing_lambda}")
        if not self.carrier_ghz > 0:
            raise ValueError(f"channel.carrier_ghz must be > 0, got {self.carrier_ghz}")

    @property
    def chi_offset_db(self) -> float:
        """N0 * gamma_th / P_u in dB; add the pathloss to get chi in dB."""
        return self.noise_dbm + self.snr_threshold_db - self.tx_power_dbm


def sensing_success_prob(l, lam, duration):
    """Probability of sensing the task from distance ``l`` over ``duration`` seconds."""
    l = np.asarray(l, dtype=float)
    if np.any(l < 0) or np.any(np.asarray(duration) < 0) or np.any(np.asarray(lam) < 0):
        raise ValueError("sensing distance, rate and duration must be non-negative")
    return np.exp(-lam * duration * l)


def _los_geometry(h):
    lh = np.log10(h)
    p0 = 233.98 * lh - 0.95
    r_c = np.maximum(294.05 * lh - 432.94, 18.0)
    return p0, r_c


def los_probability(r, h, mode=LosMode.PAPER_LITERAL_CLAMPED):
    """Probability that the UAV-BS link has a line-of-sight component.

    ``r`` is the horizontal UAV-BS distance and ``h`` the UAV height.
    """
    r = np.asarray(r, dtype=float)
    h = np.asarray(h, dtype=float)
    p0, r_c = _los_geometry(h)
    mode = LosMode(mode)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(r > 0, r_c / r, 1.0)
        if mode is LosMode.PAPER_LITERAL_CLAMPED:
            far = np.minimum(1.0, ratio + np.exp(-r / p0 + r_c / p0))
        else:
            far = ratio + np.exp(-(r - r_c) / p0) * (1.0 - ratio)
    return np.where(r <= r_c, 1.0, far)


def _check_positive(name, v):
    if np.any(np.asarray(v) <= 0):
        raise ValueError(f"{name} must be positive")


def pathloss_los(d, h, fc):
    """LoS air-to-ground pathloss in dB (distance and height in metres, fc in GHz)."""
    _check_positive("distance", d)
    _check_positive("height", h)
    return 30.9 + (22.25 - 0.5 * np.log10(h)) * np.log10(d) + 20.0 * np.log10(fc)


def pathloss_nlos(d, h, fc):
    """NLoS air-to-ground pathloss in dB."""
    _check_positive("distance", d)
    _check_positive("height", h)
    return 32.4 + (43.2 - 7.6 * np.log10(h)) * np.log10(d) + 20.0 * np.log10(fc)


def rice_k_linear(h):
    """Height-dependent Rice factor K (linear)."""
    k_db = 4.217 * np.log10(h) + 5.787
    return 10.0 ** (k_db / 10.0)


def marcum_q1(a, b):
    """First-order Marcum Q-function Q_1(a, b), absolute error below 1e-10.

    Evaluated as a Poisson mixture of Poisson CDFs (the noncentral
    chi-square survival function with two degrees of freedom).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("Marcum Q arguments must be non-negative")
    out = _kernels.marcum_q1(a, b)
    return out if out.ndim else float(out)


def rice_cdf(x, k):
    """CDF of the Rice amplitude with unit mean power and factor ``k``."""
    x = np.asarray(x, dtype=float)
    k = np.asarray(k, dtype=float)
    return 1.0 - np.asarray(marcum_q1(np.sqrt(2.0 * k), x * np.sqrt(2.0 * (k + 1.0))))


def rayleigh_cdf(x):
    x = np.asarray(x, dtype=float)
    return -np.expm1(-0.5 * x * x)


@dataclass(frozen=True)
class LinkBudget:
    """Per-position link quantities shared by the analytic and sampled paths."""

    p_los: np.ndarray
    k_factor: np.ndarray
    chi_los: np.ndarray
    chi_nlos: np.ndarray


def link_budget(uav, bs, params: ChannelParams) -> LinkBudget:
    uav = np.asarray(uav, dtype=float)
    bs = np.asarray(bs, dtype=float)
    dx = uav[..., 0] - bs[0]
    dy = uav[..., 1] - bs[1]
    h = uav[..., 2]
    r = np.hypot(dx, dy)
    d = np.sqrt(r * r + (h - bs[2]) ** 2)
    fc = params.carrier_ghz
    chi_los = 10.0 ** (0.1 * (params.chi_offset_db + pathloss_los(d, h, fc)))
    chi_nlos = 10.0 ** (0.1 * (params.chi_offset_db + pathloss_nlos(d, h, fc)))
    return LinkBudget(
        p_los=los_probability(r, h, params.los_mode),
        k_factor=rice_k_linear(h),
        chi_los=chi_los,
        chi_nlos=chi_nlos,
    )


def tx_success_prob(uav, bs, params: ChannelParams):
    """Probability that one uplink frame from ``uav`` is decoded at ``bs``.

    The fading amplitude is compared against the threshold ``chi`` directly:
    ``P_LoS * (1 - F_rice(chi_LoS)) + (1 - P_LoS) * (1 - F_rayleigh(chi_NLoS))``.
    """
    lb = link_budget(uav, bs, params)
    k = lb.k_factor
    los_ok = np.asarray(marcum_q1(np.sqrt(2.0 * k), lb.chi_los * np.sqrt(2.0 * (k + 1.0))))
    nlos_ok = np.exp(-0.5 * lb.chi_nlos**2)
    out = lb.p_los * los_ok + (1.0 - lb.p_los) * nlos_ok
    return out if out.ndim else float(out)


def sample_fading_success(lb: LinkBudget, rng: np.random.Generator, size=None):
    """Draw LoS state and fading amplitude; return whether ``|H| >= chi``.

    Exactly three standard variates are consumed per draw whatever the LoS
    outcome, which keeps streams aligned across parameter changes.
    """
    shape = np.broadcast_shapes(np.shape(lb.p_los), () if size is None else tuple(np.atleast_1d(size)))
    u = rng.random(shape)
    g = rng.standard_normal((2,) + shape)
    los = u < lb.p_los
    k = lb.k_factor
    sigma = np.sqrt(0.5 / (k + 1.0))
    nu = np.sqrt(k / (k + 1.0))
    amp_los = np.hypot(nu + sigma * g[0], sigma * g[1])
    amp_nlos = np.hypot(g[0], g[1])
    return np.where(los, amp_los >= lb.chi_los, amp_nlos >= lb.chi_nlos)


def sample_frame_transmission(uav, bs, params: ChannelParams, rng: np.random.Generator, size=None):
    """Sample whether an uplink frame succeeds via the full channel model."""
    out = sample_fading_success(link_budget(uav, bs, params), rng, size)
    return out if out.ndim else bool(out)


__all__ = [
    "ChannelParams",
    "LinkBudget",
    "LosMode",
    "link_budget",
    "los_probability",
    "marcum_q1",
    "pathloss_los",
    "pathloss_nlos",
    "rayleigh_cdf",
    "rice_cdf",
    "rice_k_linear",
    "sample_fading_success",
    "sample_frame_transmission",
    "sensing_success_prob",
    "tx_success_prob",
]
