"""Tabular trajectory learners.

Three decentralised agents share one interface (``act`` / ``learn``):

* :class:`SingleAgentLearner` keys its table on its own lattice point and
  ignores the other UAVs.
* :class:`OpponentModelLearner` keys on the joint state and averages its
  joint-action values over the empirical frequency of the others' moves.
* :class:`EnhancedLearner` does the same over reduced action sets, seeds
  every new joint state with the analytic valid-transmission probability and
  learns from that probability instead of the 0/1 outcome.

All tables are sparse: a row exists only for states that were reached.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .spatial import ALL_ACTIONS, Action, GridPoint, LatticeConfig, full_action_set, reduced_action_set

CHECKPOINT_FORMAT = "uavsense-qtable"
CHECKPOINT_VERSION = 1


class GreedyConvention(str, enum.Enum):
    # explore with probability eps_k
    STANDARD = "standard"
    # exploit with probability eps_k, as the algorithm listings read
    PAPER_LITERAL = "paper-literal"


@dataclass(frozen=True)
class LearningSchedule:
    alpha_exponent: float = 2.0 / 3.0
    epsilon_scale: float = 0.8
    epsilon_decay: float = 0.03
    discount: float = 0.9
    greedy_convention: GreedyConvention = GreedyConvention.STANDARD

    def __post_init__(self):
        object.__setattr__(self, "greedy_convention", GreedyConvention(self.greedy_convention))
        if not 0.5 < self.alpha_exponent <= 1.0:
            # outside (1/2, 1] the step sizes are no longer square-summable-but-divergent
            raise ValueError(f"learning.alpha_exponent must lie in (0.5, 1], got {self.alpha_exponent}")
        if not 0.0 <= self.epsilon_scale <= 1.0:
            raise ValueError(f"learning.epsilon_scale must lie in [0, 1], got {self.epsilon_scale}")
        if self.epsilon_decay < 0:
            raise ValueError(f"learning.epsilon_decay must be >= 0, got {self.epsilon_decay}")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"learning.discount must lie in [0, 1), got {self.discount}")

    def alpha(self, k) -> float:
        if k < 1:
            raise ValueError(f"cycle index must be >= 1, got {k}")
        return float(k) ** -self.alpha_exponent

    def epsilon(self, k) -> float:
        if k < 0:
            raise ValueError(f"cycle index must be >= 0, got {k}")
        return self.epsilon_scale * math.exp(-self.epsilon_decay * k)

    def explore_prob(self, k) -> float:
        eps = self.epsilon(k)
        return eps if self.greedy_convention is GreedyConvention.STANDARD else 1.0 - eps


class _FixedSchedule:
    """Duck-typed schedule with constant rates, handy for tests and toy chains."""

    def __init__(self, alpha=1.0, explore=0.0, discount=0.9):
        self._alpha, self._explore, self.discount = alpha, explore, discount

    def alpha(self, k):
        return self._alpha

    def explore_prob(self, k):
        return self._explore


def _argmax_uniform(values: np.ndarray, rng) -> int:
    best = np.flatnonzero(values == values.max())
    return int(best[rng.integers(best.size)])


def _epsilon_greedy(values: np.ndarray, k, schedule, rng) -> int:
    if rng.random() < schedule.explore_prob(k):
        return int(rng.integers(values.size))
    return _argmax_uniform(values, rng)


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


class QTableSingle:
    """``Q(s, a)`` over own lattice points; rows hold the valid actions at ``s``."""

    kind = "single"

    def __init__(self, actions_fn):
        self._actions_fn = actions_fn
        self._rows: dict = {}

    def row(self, s):
        r = self._rows.get(s)
        if r is None:
            acts = tuple(self._actions_fn(s))
            r = (acts, {a: i for i, a in enumerate(acts)}, np.zeros(len(acts)))
            self._rows[s] = r
        return r

    def __contains__(self, s):
        return s in self._rows

    def __len__(self):
        return len(self._rows)

    def get(self, s, a) -> float:
        r = self._rows.get(s)
        if r is None:
            if a not in self._actions_fn(s):
                raise KeyError(f"action {a} is not valid at {s}")
            return 0.0
        return float(r[2][r[1][a]])

    def set(self, s, a, value):
        acts, index, vals = self.row(s)
        if a not in index:
            raise KeyError(f"action {a} is not valid at {s}")
        vals[index[a]] = value

    def max_value(self, s) -> float:
        r = self._rows.get(s)
        return 0.0 if r is None else float(r[2].max())

    def entries(self):
        for s, (acts, _, vals) in self._rows.items():
            for a, v in zip(acts, vals):
                yield s, a, float(v)

    def values(self) -> np.ndarray:
        if not self._rows:
            return np.zeros(0)
        return np.concatenate([r[2] for r in self._rows.values()])


class _JointRow:
    __slots__ = ("actions", "index", "cols", "data", "n_cols")

    def __init__(self, actions):
        self.actions = actions
        self.index = {a: i for i, a in enumerate(actions)}
        self.cols: dict = {}
        self.data = np.zeros((len(actions), 4))
        self.n_cols = 0

    def values(self) -> np.ndarray:
        return self.data[:, : self.n_cols]

    def add_columns(self, keys, block):
        need = self.n_cols + len(keys)
        if need > self.data.shape[1]:
            grown = np.zeros((len(self.actions), max(need, 2 * self.data.shape[1])))
            grown[:, : self.n_cols] = self.data[:, : self.n_cols]
            self.data = grown
        for j, key in enumerate(keys):
            self.cols[key] = self.n_cols + j
        self.data[:, self.n_cols : need] = block
        self.n_cols = need


class QTableJoint:
    """``Q_i(s, (a_i, a_-i))`` over joint states.

    Each row keeps the agent's own actions at ``s`` and one column per
    opponent joint action (a tuple of the other UAVs' actions in index order)
    added lazily.  ``column_init(s, key)`` supplies the initial column
    values; the default is zeros.
    """

    kind = "joint"

    def __init__(self, actions_fn, column_init=None):
        self._actions_fn = actions_fn
        self._column_init = column_init
        self._rows: dict = {}

    def __contains__(self, s):
        return s in self._rows

    def __len__(self):
        return len(self._rows)

    def row(self, s) -> _JointRow:
        r = self._rows.get(s)
        if r is None:
            r = _JointRow(tuple(self._actions_fn(s)))
            self._rows[s] = r
        return r

    def peek(self, s):
        return self._rows.get(s)

    def add_columns(self, s, keys, block):
        r = self.row(s)
        fresh = [i for i, k in enumerate(keys) if k not in r.cols]
        if fresh:
            block = np.asarray(block, dtype=float).reshape(len(r.actions), len(keys))
            r.add_columns([keys[i] for i in fresh], block[:, fresh])

    def column(self, s, key) -> int:
        r = self.row(s)
        c = r.cols.get(key)
        if c is None:
            init = np.zeros(len(r.actions)) if self._column_init is None else self._column_init(s, key)
            r.add_columns([key], np.asarray(init, dtype=float).reshape(-1, 1))
            c = r.cols[key]
        return c

    def get(self, s, a, key) -> float:
        r = self._rows.get(s)
        if r is None or key not in r.cols:
            return 0.0
        return float(r.data[r.index[a], r.cols[key]])

    def set(self, s, a, key, value):
        r = self.row(s)
        if a not in r.index:
            raise KeyError(f"action {a} is not valid at {s}")
        r.data[r.index[a], self.column(s, key)] = value

    def entries(self):
        for s, r in self._rows.items():
            for key, c in r.cols.items():
                for a, i in r.index.items():
                    yield s, a, key, float(r.data[i, c])

    def values(self) -> np.ndarray:
        parts = [r.values().ravel() for r in self._rows.values()]
        return np.concatenate(parts) if parts else np.zeros(0)


class OpponentModel:
    """Visit counts of the others' joint action per joint state."""

    def __init__(self):
        self.counts: dict = {}
        self.state_visits: dict = {}

    def observe(self, s, key):
        per = self.counts.setdefault(s, {})
        per[key] = per.get(key, 0) + 1
        self.state_visits[s] = self.state_visits.get(s, 0) + 1

    def visits(self, s) -> int:
        return self.state_visits.get(s, 0)

    def distribution(self, s) -> dict:
        n = self.visits(s)
        if n == 0:
            return {}
        return {k: c / n for k, c in self.counts[s].items()}

    def entries(self):
        for s, per in self.counts.items():
            for key, c in per.items():
                yield s, key, c


# ---------------------------------------------------------------------------
# Single-agent rule
# ---------------------------------------------------------------------------


def select_action_single(q: QTableSingle, s, k, schedule, rng) -> Action:
    acts, _, vals = q.row(s)
    return acts[_epsilon_greedy(vals, k, schedule, rng)]


def update_single(q: QTableSingle, s, a, reward, s_next, k, schedule) -> float:
    """One temporal-difference step with a greedy backup; returns the new value."""
    old = q.get(s, a)
    new = old + schedule.alpha(k) * (reward + schedule.discount * q.max_value(s_next) - old)
    q.set(s, a, new)
    return new


# ---------------------------------------------------------------------------
# Opponent-modelling rule
# ---------------------------------------------------------------------------


def _column_weights(row: _JointRow, model: OpponentModel, s) -> np.ndarray:
    w = np.zeros(row.n_cols)
    dist = model.distribution(s)
    if dist:
        for key, p in dist.items():
            c = row.cols.get(key)
            if c is not None:
                w[c] = p
    elif row.n_cols:
        w[:] = 1.0 / row.n_cols
    return w


def expected_q_all(q: QTableJoint, model: OpponentModel, s) -> np.ndarray:
    """Expected value of every own action at ``s`` under the opponent model."""
    r = q.row(s)
    if r.n_cols == 0:
        return np.zeros(len(r.actions))
    return r.values() @ _column_weights(r, model, s)


def expected_q(q: QTableJoint, model: OpponentModel, s, a_i) -> float:
    r = q.row(s)
    return float(expected_q_all(q, model, s)[r.index[a_i]])


def state_value(q: QTableJoint, model: OpponentModel, s) -> float:
    """``max_a E[Q(s, (a, a_-i))]``, zero for a state with no recorded columns."""
    r = q.peek(s)
    if r is None or r.n_cols == 0:
        return 0.0
    return float(expected_q_all(q, model, s).max())


def select_action_opponent(q: QTableJoint, model: OpponentModel, s, k, schedule, rng) -> Action:
    vals = expected_q_all(q, model, s)
    return q.row(s).actions[_epsilon_greedy(vals, k, schedule, rng)]


def _split(joint_action, i):
    return joint_action[i], tuple(a for j, a in enumerate(joint_action) if j != i)


def update_opponent(q: QTableJoint, model: OpponentModel, s, joint_action, reward, s_next, k, schedule,
                    agent: int = 0) -> float:
    own, key = _split(joint_action, agent)
    model.observe(s, key)
    old = q.get(s, own, key)
    target = reward + schedule.discount * state_value(q, model, s_next)
    a = schedule.alpha(k)
    new = (1.0 - a) * old + a * target
    q.set(s, own, key, new)
    return new


def infer_joint_action(state, next_state) -> tuple:
    """Recover everybody's move from two consecutive beacon snapshots."""
    return tuple(Action(b.ix - a.ix, b.iy - a.iy, b.ih - a.ih) for a, b in zip(state, next_state))


# ---------------------------------------------------------------------------
# Agents
# ---------------------------------------------------------------------------


class _Agent:
    kind = ""

    def __init__(self, index: int, lattice: LatticeConfig, schedule: LearningSchedule, rng):
        self.index = index
        self.lattice = lattice
        self.schedule = schedule
        self.rng = rng

    def q_values(self) -> np.ndarray:
        return self.q.values()

    # checkpoint ------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "kind": self.kind,
            "agent": self.index,
            "schedule": _schedule_meta(self.schedule),
            "entries": self._dump_entries(),
            "opponent_counts": self._dump_counts(),
        }

    def load_dict(self, payload: dict):
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a uavsense Q-table checkpoint")
        if payload.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
        if payload.get("kind") != self.kind:
            raise ValueError(f"checkpoint holds a {payload.get('kind')!r} agent, expected {self.kind!r}")
        self._load_entries(payload["entries"], payload.get("opponent_counts", []))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")))

    def load(self, path):
        self.load_dict(json.loads(Path(path).read_text()))

    def _dump_counts(self):
        return []


def _schedule_meta(schedule) -> dict:
    if isinstance(schedule, LearningSchedule):
        d = asdict(schedule)
        d["greedy_convention"] = schedule.greedy_convention.value
        return d
    return {"discount": schedule.discount}


def _pt(s) -> list:
    return [int(s[0]), int(s[1]), int(s[2])]


def _joint_pt(s) -> list:
    return [_pt(p) for p in s]


class SingleAgentLearner(_Agent):
    """Independent learner over its own position and the full 27-move cube."""

    kind = "single-agent"

    def __init__(self, index, lattice, schedule, rng):
        super().__init__(index, lattice, schedule, rng)
        self.q = QTableSingle(lambda s: full_action_set(s, lattice))

    def act(self, state, k) -> Action:
        return select_action_single(self.q, state[self.index], k, self.schedule, self.rng)

    def learn(self, state, joint_action, rewards, next_state, k):
        i = self.index
        update_single(self.q, state[i], joint_action[i], float(rewards[i]), next_state[i], k, self.schedule)
        return None

    def _dump_entries(self):
        return [[_pt(s), _pt(a), v] for s, a, v in self.q.entries()]

    def _load_entries(self, entries, counts):
        self.q = QTableSingle(lambda s: full_action_set(s, self.lattice))
        for s, a, v in entries:
            self.q.set(GridPoint(*s), Action(*a), v)


class _JointAgent(_Agent):
    def _dump_entries(self):
        out = []
        for s, a, key, v in self.q.entries():
            joint = list(key)
            joint.insert(self.index, a)
            out.append([_joint_pt(s), _joint_pt(joint), v])
        return out

    def _dump_counts(self):
        return [[_joint_pt(s), _joint_pt(key), c] for s, key, c in self.model.entries()]

    def _load_entries(self, entries, counts):
        self._reset()
        by_state: dict = OrderedDict()
        for s, joint, v in entries:
            s = tuple(GridPoint(*p) for p in s)
            own, key = _split(tuple(Action(*a) for a in joint), self.index)
            by_state.setdefault(s, OrderedDict()).setdefault(key, {})[own] = v
        for s, cols in by_state.items():
            row = self.q.row(s)
            keys = list(cols)
            block = np.zeros((len(row.actions), len(keys)))
            for j, key in enumerate(keys):
                for own, v in cols[key].items():
                    block[row.index[own], j] = v
            self.q.add_columns(s, keys, block)
        for s, key, c in counts:
            s = tuple(GridPoint(*p) for p in s)
            key = tuple(Action(*a) for a in key)
            self.model.counts.setdefault(s, {})[key] = int(c)
            self.model.state_visits[s] = self.model.state_visits.get(s, 0) + int(c)


class OpponentModelLearner(_JointAgent):
    """Joint-state learner that best-responds to empirical opponent frequencies."""

    kind = "opponent-modeling"

    def __init__(self, index, lattice, schedule, rng):
        super().__init__(index, lattice, schedule, rng)
        self._reset()

    def _reset(self):
        self.q = QTableJoint(lambda s: full_action_set(s[self.index], self.lattice))
        self.model = OpponentModel()

    def act(self, state, k) -> Action:
        return select_action_opponent(self.q, self.model, state, k, self.schedule, self.rng)

    def learn(self, state, joint_action, rewards, next_state, k):
        update_opponent(self.q, self.model, state, joint_action, float(rewards[self.index]), next_state, k,
                        self.schedule, self.index)
        return None


class ReducedActionCache:
    """Reduced action sets per (UAV, lattice point), shared by all enhanced agents."""

    def __init__(self, tasks, lattice: LatticeConfig):
        self.tasks = np.asarray(tasks, dtype=float)
        self.lattice = lattice
        self._sets: dict = {}

    def __call__(self, uav: int, p: GridPoint) -> tuple:
        key = (uav, p)
        hit = self._sets.get(key)
        if hit is None:
            hit = reduced_action_set(p, self.tasks[uav], self.lattice.bs, self.lattice)
            self._sets[key] = hit
        return hit

    def joint(self, state) -> tuple:
        return tuple(self(j, p) for j, p in enumerate(state))


class EnhancedLearner(_JointAgent):
    """Opponent-modelling learner over reduced sets with model-based rewards.

    ``evaluator`` must offer ``table(state, action_sets)`` returning the
    per-UAV valid-transmission probability for the product of the sets
    (see :class:`uavsense.analytics.JointEvaluator`).
    """

    kind = "enhanced"

    def __init__(self, index, lattice, schedule, rng, evaluator, reduced: ReducedActionCache):
        super().__init__(index, lattice, schedule, rng)
        self.evaluator = evaluator
        self.reduced = reduced
        self._reset()

    def _reset(self):
        self.q = QTableJoint(lambda s: self.reduced(self.index, s[self.index]), column_init=self._init_column)
        self.model = OpponentModel()

    def _probabilities(self, state):
        sets = self.reduced.joint(state)
        return sets, self.evaluator.table(state, sets)

    def _own_block(self, state):
        sets, tab = self._probabilities(state)
        i = self.index
        block = np.moveaxis(tab[..., i], i, 0).reshape(len(sets[i]), -1)
        keys = list(itertools.product(*(sets[j] for j in range(len(sets)) if j != i)))
        return keys, block

    def _init_column(self, s, key):
        # only reached for an opponent move outside the reduced product, e.g. after a reload
        sets, _ = self._probabilities(s)
        i = self.index
        out = np.empty(len(sets[i]))
        for r, own in enumerate(sets[i]):
            joint = list(key)
            joint.insert(i, own)
            out[r] = self.evaluator.profile(s, tuple(joint))[i]
        return out

    def ensure_state(self, state):
        if state not in self.q:
            keys, block = self._own_block(state)
            self.q.add_columns(state, keys, block)

    def model_reward(self, state, joint_action) -> float:
        sets, tab = self._probabilities(state)
        try:
            idx = tuple(sets[j].index(a) for j, a in enumerate(joint_action))
        except ValueError:
            return float(self.evaluator.profile(state, joint_action)[self.index])
        return float(tab[idx + (self.index,)])

    def act(self, state, k) -> Action:
        return enhanced_step(self, state, k, self.rng)

    def learn(self, state, joint_action, rewards, next_state, k):
        return enhanced_update(self, state, joint_action, next_state, k)


def enhanced_step(agent: EnhancedLearner, s, k, rng) -> Action:
    agent.ensure_state(s)
    return select_action_opponent(agent.q, agent.model, s, k, agent.schedule, rng)


def enhanced_update(agent: EnhancedLearner, s, joint_action, s_next, k) -> float:
    """Model-based update; returns the reward used (the analytic probability)."""
    r_hat = agent.model_reward(s, joint_action)
    agent.ensure_state(s_next)
    update_opponent(agent.q, agent.model, s, joint_action, r_hat, s_next, k, agent.schedule, agent.index)
    return r_hat


def load_checkpoint(path) -> dict:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a uavsense Q-table checkpoint")
    return payload


__all__ = [
    "ALL_ACTIONS",
    "EnhancedLearner",
    "GreedyConvention",
    "LearningSchedule",
    "OpponentModel",
    "OpponentModelLearner",
    "QTableJoint",
    "QTableSingle",
    "ReducedActionCache",
    "SingleAgentLearner",
    "enhanced_step",
    "enhanced_update",
    "expected_q",
    "expected_q_all",
    "infer_joint_action",
    "load_checkpoint",
    "select_action_opponent",
    "select_action_single",
    "state_value",
    "update_opponent",
    "update_single",
]
