"""Experiment orchestration: configuration, seeding, replica loops and oracles."""

from __future__ import annotations

import enum
import math
import time
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from . import _kernels
from .analytics import MAX_DP_UAVS, CapacityError, JointEvaluator, uplink_success_prob
from .channel import ChannelParams, LosMode, link_budget, sample_fading_success, tx_success_prob
from .learning import (
    EnhancedLearner,
    GreedyConvention,
    LearningSchedule,
    OpponentModelLearner,
    ReducedActionCache,
    SingleAgentLearner,
    infer_joint_action,
)
from .protocol import CycleSchedule, Interpolation, SimMode, TrajectoryCyclePlan, simulate_cycles
from .spatial import LatticeConfig, full_action_set, to_cartesian

MAX_JOINT_UAVS = 5


class ConfigError(ValueError):
    """Invalid experiment configuration; the message starts with the offending key."""


class Algorithm(str, enum.Enum):
    SINGLE_AGENT = "single-agent"
    OPPONENT_MODELING = "opponent-modeling"
    ENHANCED = "enhanced"


class SweepPolicy(str, enum.Enum):
    FIXED = "fixed"
    LEARNING = "learning"


# Every configurable knob, by dotted key.  ``None`` means "derived" (see
# ExperimentConfig.from_flat).  Defaults reproduce the simulation table.
DEFAULTS: dict = {
    "uavs.count": 3,
    "uavs.subchannels": 1,
    "uavs.init_positions": None,
    "uavs.init_fraction": 1.0 / 3.0,
    "uavs.init_height": 75.0,
    "tasks.positions": None,
    "tasks.distance": 500.0,
    "bs.height": 25.0,
    "lattice.delta": 25.0,
    "lattice.h_min": 50.0,
    "lattice.h_max": 150.0,
    "lattice.r_max": None,
    "channel.tx_power_dbm": 10.0,
    "channel.noise_dbm": -85.0,
    "channel.snr_threshold_db": 10.0,
    "channel.carrier_ghz": 2.0,
    "channel.sensing_lambda": 1e-3,
    "channel.los_mode": LosMode.PAPER_LITERAL_CLAMPED.value,
    "schedule.t_b": 3,
    "schedule.t_s": 5,
    "schedule.t_u": 5,
    "schedule.t_f": 0.1,
    "learning.alpha_exponent": 2.0 / 3.0,
    "learning.epsilon_scale": 0.8,
    "learning.epsilon_decay": 0.03,
    "learning.discount": 0.9,
    "learning.greedy_convention": GreedyConvention.STANDARD.value,
    "run.algorithm": Algorithm.ENHANCED.value,
    "run.cycles": 1000,
    "run.replicas": 10,
    "run.seed": None,
    "run.final_window": 100,
    "sim.mode": SimMode.ANALYTIC_BERNOULLI.value,
    "sim.interpolation": Interpolation.REANCHORED.value,
    "sweep.tu_min": 1,
    "sweep.tu_max": 20,
    "sweep.cycles": 20000,
    "sweep.policy": SweepPolicy.FIXED.value,
    "sweep.smoothing": 3,
    "validate.trials": 100000,
    "validate.position_sets": 20,
    "validate.radius": 250.0,
    "validate.t_u": 3,
    "validate.z_max": 3.0,
}

_INT_KEYS = {k for k, v in DEFAULTS.items() if isinstance(v, int) and not isinstance(v, bool)} | {"run.seed"}
_FLOAT_KEYS = {k for k, v in DEFAULTS.items() if isinstance(v, float)} | {"lattice.r_max"}
_STR_KEYS = {k for k, v in DEFAULTS.items() if isinstance(v, str)}
_LIST_KEYS = {"uavs.init_positions", "tasks.positions"}


def _coerce(key, value):
    if value is None:
        return None
    try:
        if key in _INT_KEYS:
            if isinstance(value, bool):
                raise TypeError
            if isinstance(value, str):
                value = value.strip()
            f = float(value)
            if not f.is_integer():
                raise ValueError
            return int(f)
        if key in _FLOAT_KEYS:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if key in _STR_KEYS:
            return str(value)
        if key in _LIST_KEYS:
            if isinstance(value, str):
                import json

                value = json.loads(value)
            return [[float(c) for c in row] for row in value]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot interpret {value!r}") from exc
    raise ConfigError(f"{key}: unknown configuration key")


def parse_override(text: str):
    """Split ``key=value`` into a pair; the value stays a string until coercion."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value")
    key, value = text.split("=", 1)
    key = key.strip()
    if key not in DEFAULTS:
        raise ConfigError(f"{key}: unknown configuration key")
    value = value.strip()
    if value.lower() in {"none", "null", ""}:
        return key, None
    return key, value


def flatten(tree: dict, prefix: str = "") -> dict:
    """Collapse a nested mapping (as produced by a TOML parser) to dotted keys."""
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def default_tasks(n: int, distance: float) -> np.ndarray:
    """Ground tasks at ``distance`` from the BS.

    For three UAVs: one on the +x axis and two at +-135 degrees; otherwise
    evenly spaced in angle starting from +x.
    """
    if n == 3:
        angles = np.array([0.0, 0.75 * math.pi, -0.75 * math.pi])
    else:
        angles = 2.0 * math.pi * np.arange(n) / n
    return np.column_stack([distance * np.cos(angles), distance * np.sin(angles), np.zeros(n)])


@dataclass(frozen=True)
class ExperimentConfig:
    n_uavs: int
    subchannels: int
    tasks: np.ndarray
    initial_positions: tuple
    lattice: LatticeConfig
    channel: ChannelParams
    schedule: CycleSchedule
    learning: LearningSchedule
    algorithm: Algorithm
    cycles: int
    replicas: int
    seed: int | None
    final_window: int
    sim_mode: SimMode
    interpolation: Interpolation
    flat: dict = field(repr=False, compare=False)

    @classmethod
    def default(cls) -> "ExperimentConfig":
        return cls.from_flat({})

    @classmethod
    def from_flat(cls, values: dict) -> "ExperimentConfig":
        unknown = sorted(set(values) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown configuration key")
        flat = dict(DEFAULTS)
        for k, v in values.items():
            flat[k] = _coerce(k, v)
        return cls._build(flat)

    @classmethod
    def _build(cls, f: dict) -> "ExperimentConfig":
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg} (got {f[key]!r})")

        n = f["uavs.count"]
        need(n >= 1, "uavs.count", "must be at least 1")
        need(f["uavs.subchannels"] >= 1, "uavs.subchannels", "must be at least 1")
        need(f["run.cycles"] >= 0, "run.cycles", "must be non-negative")
        need(f["run.replicas"] >= 1, "run.replicas", "must be at least 1")
        need(f["run.final_window"] >= 1, "run.final_window", "must be at least 1")
        need(f["tasks.distance"] > 0, "tasks.distance", "must be positive")
        need(0 < f["uavs.init_fraction"] <= 1, "uavs.init_fraction", "must lie in (0, 1]")
        need(f["sweep.tu_min"] >= 0, "sweep.tu_min", "must be non-negative")
        need(f["sweep.tu_max"] >= f["sweep.tu_min"], "sweep.tu_max", "must be >= sweep.tu_min")
        need(f["sweep.cycles"] >= 1, "sweep.cycles", "must be at least 1")
        need(f["sweep.smoothing"] >= 1, "sweep.smoothing", "must be at least 1")
        need(f["validate.trials"] >= 1, "validate.trials", "must be at least 1")
        need(f["validate.position_sets"] >= 1, "validate.position_sets", "must be at least 1")
        need(f["validate.radius"] > 0, "validate.radius", "must be positive")
        need(f["validate.t_u"] >= 0, "validate.t_u", "must be non-negative")
        need(f["validate.z_max"] > 0, "validate.z_max", "must be positive")
        if f["run.seed"] is not None:
            need(f["run.seed"] >= 0, "run.seed", "must be non-negative")

        if f["tasks.positions"] is None:
            tasks = default_tasks(n, f["tasks.distance"])
        else:
            rows = f["tasks.positions"]
            need(all(len(r) in (2, 3) for r in rows), "tasks.positions", "entries must be [x, y] or [x, y, h]")
            tasks = np.array([list(r) + [0.0] * (3 - len(r)) for r in rows], dtype=float)
            need(tasks.shape[0] == n, "tasks.positions", f"must list exactly uavs.count={n} tasks")
        if np.any(np.hypot(tasks[:, 0], tasks[:, 1]) < 1e-9):
            raise ConfigError("tasks.positions: a task may not sit directly below the BS")

        r_max = f["lattice.r_max"]
        if r_max is None:
            r_max = float(np.max(np.hypot(tasks[:, 0], tasks[:, 1])))
        try:
            lattice = LatticeConfig(
                delta=f["lattice.delta"], h_min=f["lattice.h_min"], h_max=f["lattice.h_max"], r_max=r_max,
                bs_height=f["bs.height"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        try:
            channel = ChannelParams(
                tx_power_dbm=f["channel.tx_power_dbm"], noise_dbm=f["channel.noise_dbm"],
                snr_threshold_db=f["channel.snr_threshold_db"], carrier_ghz=f["channel.carrier_ghz"],
                sensing_lambda=f["channel.sensing_lambda"], los_mode=f["channel.los_mode"],
            )
        except ValueError as exc:
            raise ConfigError(f"channel: {exc}") from exc
        try:
            schedule = CycleSchedule(f["schedule.t_b"], f["schedule.t_s"], f["schedule.t_u"], f["schedule.t_f"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        try:
            learning = LearningSchedule(
                alpha_exponent=f["learning.alpha_exponent"], epsilon_scale=f["learning.epsilon_scale"],
                epsilon_decay=f["learning.epsilon_decay"], discount=f["learning.discount"],
                greedy_convention=f["learning.greedy_convention"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        enums = {}
        for key, enum_cls in (("run.algorithm", Algorithm), ("sim.mode", SimMode),
                              ("sim.interpolation", Interpolation), ("sweep.policy", SweepPolicy)):
            try:
                enums[key] = enum_cls(f[key])
            except ValueError:
                choices = ", ".join(m.value for m in enum_cls)
                raise ConfigError(f"{key}: expected one of {choices} (got {f[key]!r})") from None

        if f["uavs.init_positions"] is None:
            frac = f["uavs.init_fraction"]
            try:
                init = tuple(lattice.snap(t[0] * frac, t[1] * frac, f["uavs.init_height"]) for t in tasks)
            except ValueError as exc:
                raise ConfigError(f"uavs.init_positions: {exc}") from exc
        else:
            rows = f["uavs.init_positions"]
            need(len(rows) == n and all(len(r) == 3 for r in rows), "uavs.init_positions",
                 f"must list uavs.count={n} [x, y, h] triples")
            try:
                init = tuple(lattice.snap(*r) for r in rows)
            except ValueError as exc:
                raise ConfigError(f"uavs.init_positions: {exc}") from exc

        return cls(
            n_uavs=n, subchannels=f["uavs.subchannels"], tasks=tasks, initial_positions=init, lattice=lattice,
            channel=channel, schedule=schedule, learning=learning, algorithm=enums["run.algorithm"],
            cycles=f["run.cycles"], replicas=f["run.replicas"], seed=f["run.seed"],
            final_window=f["run.final_window"], sim_mode=enums["sim.mode"],
            interpolation=enums["sim.interpolation"], flat=f,
        )

    def to_flat(self) -> dict:
        return dict(self.flat)

    def resolved(self) -> dict:
        """Flat snapshot with derived values filled in (for manifests)."""
        out = self.to_flat()
        out["lattice.r_max"] = self.lattice.r_max
        out["tasks.positions"] = self.tasks.tolist()
        out["uavs.init_positions"] = [list(to_cartesian(p, self.lattice)) for p in self.initial_positions]
        return out

    def replace(self, **overrides) -> "ExperimentConfig":
        """New config with dotted-key overrides (use ``__`` in place of ``.``)."""
        flat = self.to_flat()
        for k, v in overrides.items():
            key = k.replace("__", ".")
            if key not in DEFAULTS:
                raise ConfigError(f"{key}: unknown configuration key")
            flat[key] = _coerce(key, v)
        return ExperimentConfig._build(flat)

    def evaluator(self) -> JointEvaluator:
        return JointEvaluator(self.tasks, self.lattice, self.schedule, self.channel, self.subchannels,
                              self.interpolation)

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("run.seed: a seed is required for randomized runs (pass --seed)")
        return self.seed


# ---------------------------------------------------------------------------
# RNG substreams
# ---------------------------------------------------------------------------


def substream(seed: int, replica: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``(seed, replica, name, *extra)``.

    Streams are addressed by spawn key, so adding or removing consumers of one
    name never shifts the sequence seen under another.
    """
    key = (int(replica), zlib.crc32(name.encode()), *(int(e) for e in extra))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass
class MetricsSeries:
    """Per-cycle, per-UAV record of one replica."""

    rewards: np.ndarray
    model_rewards: np.ndarray | None
    discount: float
    cycle_seconds: float
    positions: np.ndarray
    timings: dict = field(default_factory=dict)

    @property
    def cycles(self) -> int:
        return self.rewards.shape[0]

    @property
    def avg_reward(self) -> np.ndarray:
        """Running mean of the realized reward up to each cycle, per UAV."""
        if self.cycles == 0:
            return np.zeros_like(self.rewards, dtype=float)
        return np.cumsum(self.rewards, axis=0) / np.arange(1, self.cycles + 1)[:, None]

    @property
    def discounted_return(self) -> np.ndarray:
        """``sum_{n<k} rho^n R^(n+1)``: realized discounted sum from cycle 1 to cycle k."""
        w = self.discount ** np.arange(self.cycles)
        return np.cumsum(self.rewards * w[:, None], axis=0)

    @property
    def total_successes(self) -> int:
        return int(self.rewards.sum())

    @property
    def n_vd(self) -> float:
        if self.cycles == 0:
            return 0.0
        return self.total_successes / (self.cycles * self.cycle_seconds)

    def mean_curve(self) -> np.ndarray:
        """Reward per cycle averaged over UAVs."""
        return self.rewards.mean(axis=1) if self.cycles else np.zeros(0)

    def final_window_mean(self, window: int) -> float:
        if self.cycles == 0:
            return float("nan")
        return float(self.mean_curve()[-window:].mean())

    def cycles_to_fraction(self, window: int, fraction: float = 0.9) -> int:
        """First cycle whose running mean reaches ``fraction`` of the final-window mean."""
        if self.cycles == 0:
            return 0
        target = fraction * self.final_window_mean(window)
        running = np.cumsum(self.mean_curve()) / np.arange(1, self.cycles + 1)
        hit = np.flatnonzero(running >= target)
        return int(hit[0]) + 1 if hit.size else self.cycles


def _mean_se(x) -> tuple:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return float("nan"), float("nan")
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return float(x.mean()), se


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    replicas: list
    agents: list = field(default_factory=list)

    def mean_curve(self) -> tuple:
        """Cross-replica mean and standard error of the per-cycle reward."""
        curves = np.array([r.mean_curve() for r in self.replicas])
        if curves.shape[1] == 0:
            return np.zeros(0), np.zeros(0)
        mean = curves.mean(axis=0)
        se = curves.std(axis=0, ddof=1) / math.sqrt(len(curves)) if len(curves) > 1 else np.zeros_like(mean)
        return mean, se

    def final_window_means(self) -> np.ndarray:
        return np.array([r.final_window_mean(self.config.final_window) for r in self.replicas])

    def summary(self) -> dict:
        w = self.config.final_window
        fw = self.final_window_means()
        nvd = [r.n_vd for r in self.replicas]
        conv = [r.cycles_to_fraction(w) for r in self.replicas]
        fw_m, fw_se = _mean_se(fw) if self.config.cycles else (None, None)
        nvd_m, nvd_se = _mean_se(nvd)
        return {
            "algorithm": self.config.algorithm.value,
            "cycles": self.config.cycles,
            "replicas": len(self.replicas),
            "seed": self.config.seed,
            "final_window": w,
            "final_window_mean": fw_m,
            "final_window_stderr": fw_se,
            "n_vd_mean": nvd_m,
            "n_vd_stderr": nvd_se,
            "cycles_to_90pct_median": float(np.median(conv)) if self.config.cycles else None,
            "per_replica": [
                {
                    "replica": i,
                    "total_successes": r.total_successes,
                    "final_window_mean": r.final_window_mean(w) if r.cycles else None,
                    "n_vd": r.n_vd,
                    "cycles_to_90pct": conv[i],
                    "model_reward_mean": None if r.model_rewards is None or r.cycles == 0
                    else float(r.model_rewards.mean()),
                }
                for i, r in enumerate(self.replicas)
            ],
        }


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def _check_capacity(cfg: ExperimentConfig):
    if cfg.n_uavs > MAX_DP_UAVS:
        raise CapacityError(f"uavs.count={cfg.n_uavs} exceeds the uplink DP guard of {MAX_DP_UAVS}")
    if cfg.algorithm is not Algorithm.SINGLE_AGENT and cfg.n_uavs > MAX_JOINT_UAVS:
        raise CapacityError(
            f"{cfg.algorithm.value} keys tables on the joint state; uavs.count={cfg.n_uavs} exceeds {MAX_JOINT_UAVS}"
        )


def make_agents(cfg: ExperimentConfig, replica: int, evaluator: JointEvaluator, reduced=None) -> list:
    seed = cfg.require_seed()
    agents = []
    for i in range(cfg.n_uavs):
        rng = substream(seed, replica, "exploration", i)
        if cfg.algorithm is Algorithm.SINGLE_AGENT:
            agents.append(SingleAgentLearner(i, cfg.lattice, cfg.learning, rng))
        elif cfg.algorithm is Algorithm.OPPONENT_MODELING:
            agents.append(OpponentModelLearner(i, cfg.lattice, cfg.learning, rng))
        else:
            reduced = reduced or ReducedActionCache(cfg.tasks, cfg.lattice)
            agents.append(EnhancedLearner(i, cfg.lattice, cfg.learning, rng, evaluator, reduced))
    return agents


def _segment_arrays(evaluator, state, next_state):
    n = len(state)
    p_s = np.empty(n)
    tx = np.empty((evaluator.schedule.t_u, n))
    for j in range(n):
        p_s[j], tx[:, j] = evaluator.segment(j, state[j], next_state[j])
    return p_s, tx


def run_replica(cfg: ExperimentConfig, replica: int, evaluator: JointEvaluator | None = None,
                agents: list | None = None) -> MetricsSeries:
    """One learning run of ``cfg.cycles`` cycles; deterministic in ``(seed, replica)``."""
    _check_capacity(cfg)
    seed = cfg.require_seed()
    evaluator = evaluator or cfg.evaluator()
    agents = agents if agents is not None else make_agents(cfg, replica, evaluator)
    chan_rng = substream(seed, replica, "channel")
    sense_rng = substream(seed, replica, "sensing")
    n, k_max = cfg.n_uavs, cfg.cycles
    rewards = np.zeros((k_max, n), dtype=np.int8)
    model = np.zeros((k_max, n)) if cfg.algorithm is Algorithm.ENHANCED else None
    positions = np.zeros((k_max + 1, n, 3), dtype=np.int64)
    state = tuple(cfg.initial_positions)
    positions[0] = state
    timings = {"act": 0.0, "simulate": 0.0, "learn": 0.0}
    full = cfg.sim_mode is SimMode.FULL_CHANNEL
    for k in range(1, k_max + 1):
        t0 = time.perf_counter()
        chosen = tuple(ag.act(state, k) for ag in agents)
        next_state = tuple(p.step(a) for p, a in zip(state, chosen))
        t1 = time.perf_counter()
        p_s, tx = _segment_arrays(evaluator, state, next_state)
        sensed = sense_rng.random(n) < p_s
        if tx.shape[0] == 0:
            delivered = np.zeros(n, dtype=bool)
        else:
            if full:
                plan = cycle_plan(cfg, state, next_state)
                lb = link_budget(plan.positions(cfg.schedule.transmission_frames), plan.bs, cfg.channel)
                success = sample_fading_success(lb, chan_rng, (1,) + tx.shape)
            else:
                success = chan_rng.random((1,) + tx.shape) < tx
            delivered = _kernels.transmit_batch(tx, cfg.subchannels, success)[0] >= 0
        r = sensed & delivered
        rewards[k - 1] = r
        t2 = time.perf_counter()
        # others' moves are recovered from consecutive beacon positions
        observed = infer_joint_action(state, next_state)
        for j, ag in enumerate(agents):
            out = ag.learn(state, observed, r, next_state, k)
            if model is not None:
                model[k - 1, j] = out
        state = next_state
        positions[k] = state
        t3 = time.perf_counter()
        timings["act"] += t1 - t0
        timings["simulate"] += t2 - t1
        timings["learn"] += t3 - t2
    return MetricsSeries(rewards, model, cfg.learning.discount, cfg.schedule.duration, positions, timings)


def cycle_plan(cfg, state, next_state, tasks=None) -> TrajectoryCyclePlan:
    return TrajectoryCyclePlan(
        starts=[to_cartesian(p, cfg.lattice) for p in state],
        dests=[to_cartesian(p, cfg.lattice) for p in next_state],
        tasks=cfg.tasks if tasks is None else tasks,
        bs=cfg.lattice.bs,
        schedule=cfg.schedule,
        params=cfg.channel,
        c=cfg.subchannels,
        interpolation=cfg.interpolation,
    )


def run_experiment(cfg: ExperimentConfig, progress=None, keep_agents: bool = False) -> ExperimentResult:
    """Run every replica sequentially; ``progress(replica)`` is called after each.

    With ``keep_agents`` the trained agents of every replica are returned too
    (for checkpointing).
    """
    _check_capacity(cfg)
    cfg.require_seed()
    evaluator = cfg.evaluator()
    out, kept = [], []
    for r in range(cfg.replicas):
        agents = make_agents(cfg, r, evaluator)
        out.append(run_replica(cfg, r, evaluator, agents))
        if keep_agents:
            kept.append(agents)
        if progress is not None:
            progress(r)
    return ExperimentResult(cfg, out, kept)


# ---------------------------------------------------------------------------
# Monte Carlo oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MonteCarloEstimate:
    estimate: np.ndarray
    stderr: np.ndarray
    trials: int


def monte_carlo_uplink(plan: TrajectoryCyclePlan, trials: int, seed: int, mode=SimMode.ANALYTIC_BERNOULLI,
                       batch: int = 100000) -> MonteCarloEstimate:
    """Empirical per-UAV uplink success frequency with its binomial standard error."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = substream(seed, 0, "channel")
    sense_rng = substream(seed, 0, "sensing")
    tx = plan.tx_probs()
    p_s = plan.sensing_probs()
    hits = np.zeros(plan.n, dtype=np.int64)
    done = 0
    while done < trials:
        m = min(batch, trials - done)
        b = simulate_cycles(plan, m, rng, mode, sensing_rng=sense_rng, tx_probs=tx, sensing_probs=p_s)
        hits += b.tx_ok.sum(axis=0)
        done += m
    est = hits / trials
    return MonteCarloEstimate(est, np.sqrt(est * (1.0 - est) / trials), trials)


# ---------------------------------------------------------------------------
# Transmission-phase sweep
# ---------------------------------------------------------------------------


def best_hover_points(cfg: ExperimentConfig) -> tuple:
    """Per UAV, the lattice point maximising (hover sensing prob) x (per-frame uplink prob).

    Ties go to the first point in lattice enumeration order.
    """
    pts = list(cfg.lattice.points())
    xyz = np.array([to_cartesian(p, cfg.lattice) for p in pts])
    tx = np.asarray(tx_success_prob(xyz, cfg.lattice.bs, cfg.channel))
    out = []
    for t in cfg.tasks:
        l = np.linalg.norm(xyz - t, axis=1)
        p_s = np.exp(-cfg.channel.sensing_lambda * cfg.schedule.t_f * cfg.schedule.t_s * l)
        out.append(pts[int(np.argmax(p_s * tx))])
    return tuple(out)


@dataclass(frozen=True)
class SweepRow:
    t_u: int
    successes: int
    seconds: float
    n_uavs: int

    @property
    def n_vd(self) -> float:
        return self.successes / self.seconds if self.seconds > 0 else 0.0

    @property
    def n_vd_per_uav(self) -> float:
        return self.n_vd / self.n_uavs


def sweep_tu(cfg: ExperimentConfig, tu_values=None, policy=None) -> list:
    """``N_vd`` (successes per simulated second) for each transmission-phase length.

    ``fixed`` hovers every UAV at its best single-UAV point for
    ``sweep.cycles`` cycles; ``learning`` reruns the configured learning
    experiment for every value.
    """
    seed = cfg.require_seed()
    if tu_values is None:
        tu_values = range(cfg.flat["sweep.tu_min"], cfg.flat["sweep.tu_max"] + 1)
    policy = SweepPolicy(policy or cfg.flat["sweep.policy"])
    rows = []
    hover = best_hover_points(cfg) if policy is SweepPolicy.FIXED else None
    for t_u in tu_values:
        t_u = int(t_u)
        if t_u < 0:
            raise ValueError("t_u must be non-negative")
        c = cfg.replace(schedule__t_u=t_u)
        if policy is SweepPolicy.FIXED:
            cycles = cfg.flat["sweep.cycles"]
            plan = cycle_plan(c, hover, hover)
            b = simulate_cycles(plan, cycles, substream(seed, 0, "channel", t_u), c.sim_mode,
                                sensing_rng=substream(seed, 0, "sensing", t_u))
            rows.append(SweepRow(t_u, int(b.reward.sum()), cycles * c.schedule.duration, c.n_uavs))
        else:
            res = run_experiment(c)
            succ = sum(r.total_successes for r in res.replicas)
            secs = sum(r.cycles for r in res.replicas) * c.schedule.duration
            rows.append(SweepRow(t_u, succ, secs, c.n_uavs))
    return rows


def smooth(values, window: int) -> np.ndarray:
    """Centred moving average; the window shrinks at the edges."""
    v = np.asarray(values, dtype=float)
    if window <= 1 or v.size == 0:
        return v.copy()
    half = window // 2
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(v.size)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, v.size)
    return (c[hi] - c[lo]) / (hi - lo)


def sign_changes(values) -> int:
    d = np.sign(np.diff(np.asarray(values, dtype=float)))
    d = d[d != 0]
    return int(np.count_nonzero(d[1:] != d[:-1]))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationCheck:
    name: str
    z: float
    passed: bool
    detail: str = ""


def random_position_sets(cfg: ExperimentConfig, count: int, seed: int, radius: float, n: int):
    """``count`` random ``(starts, dests)`` lattice trajectories within ``radius`` of the BS."""
    rng = substream(seed, 0, "positions")
    lat = LatticeConfig(delta=cfg.lattice.delta, h_min=cfg.lattice.h_min, h_max=cfg.lattice.h_max,
                                r_max=min(radius, cfg.lattice.r_max), bs_height=cfg.lattice.bs_height)
    pts = list(lat.points())
    out = []
    for _ in range(count):
        starts = [pts[i] for i in rng.integers(len(pts), size=n)]
        dests = []
        for p in starts:
            acts = full_action_set(p, lat)
            dests.append(p.step(acts[rng.integers(len(acts))]))
        out.append((tuple(starts), tuple(dests)))
    return out


def _z(mc, p, trials):
    se = math.sqrt(p * (1.0 - p) / trials)
    if se == 0.0:
        return 0.0 if mc == p else math.inf
    return (mc - p) / se


def _detail(p, est, trials) -> str:
    # exact two-sided binomial p-value, informative where the normal approximation is poor
    hits = int(round(est * trials))
    exact = binomtest(hits, trials, float(p)).pvalue if 0.0 < p < 1.0 else float(hits == round(p * trials))
    return f"analytic={p:.6g} mc={est:.6g} exact_p={exact:.3g}"


def validate(cfg: ExperimentConfig, trials: int | None = None, tamper: float = 0.0) -> list:
    """Monte Carlo checks of the analytic uplink probability.

    Uses ``validate.position_sets`` random trajectories with
    ``validate.t_u`` transmission frames, plus one analytic-vs-full-channel
    comparison on the configured initial positions.  ``tamper`` shifts every
    analytic value (harness sensitivity hook).
    """
    seed = cfg.require_seed()
    trials = int(trials or cfg.flat["validate.trials"])
    z_max = cfg.flat["validate.z_max"]
    c = cfg.replace(schedule__t_u=cfg.flat["validate.t_u"], lattice__r_max=cfg.lattice.r_max)
    sets = random_position_sets(c, cfg.flat["validate.position_sets"], seed, cfg.flat["validate.radius"], c.n_uavs)
    checks = []
    for idx, (starts, dests) in enumerate(sets):
        plan = cycle_plan(c, starts, dests)
        analytic = np.clip(uplink_success_prob(plan) + tamper, 0.0, 1.0)
        mc = monte_carlo_uplink(plan, trials, seed + idx)
        for u in range(plan.n):
            z = _z(mc.estimate[u], analytic[u], trials)
            checks.append(ValidationCheck(f"uplink set={idx} uav={u}", z, abs(z) <= z_max,
                                          _detail(analytic[u], mc.estimate[u], trials)))
    plan = cycle_plan(c, c.initial_positions, c.initial_positions)
    analytic = np.clip(uplink_success_prob(plan) + tamper, 0.0, 1.0)
    mc = monte_carlo_uplink(plan, trials, seed + len(sets), SimMode.FULL_CHANNEL)
    for u in range(plan.n):
        z = _z(mc.estimate[u], analytic[u], trials)
        checks.append(ValidationCheck(f"full-channel uav={u}", z, abs(z) <= z_max,
                                      _detail(analytic[u], mc.estimate[u], trials)))
    return checks
