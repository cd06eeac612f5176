"""Discrete flight lattice, action sets and BS-task plane geometry.

Lattice positions are integer index triples; metres are always derived on
the fly so that states hash exactly.  The BS sits at the horizontal origin.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple

_EPS = 1e-9


class GridPoint(NamedTuple):
    ix: int
    iy: int
    ih: int

    def step(self, a: "Action") -> "GridPoint":
        return GridPoint(self.ix + a.ax, self.iy + a.ay, self.ih + a.ah)


class Action(NamedTuple):
    ax: int
    ay: int
    ah: int

    @property
    def code(self) -> int:
        """Index of the action in :data:`ALL_ACTIONS` (0..26)."""
        return (self.ax + 1) * 9 + (self.ay + 1) * 3 + (self.ah + 1)


class Position(NamedTuple):
    x: float
    y: float
    h: float


ALL_ACTIONS: tuple[Action, ...] = tuple(Action(*a) for a in itertools.product((-1, 0, 1), repeat=3))
ZERO_ACTION = Action(0, 0, 0)


class DegeneratePlaneError(ValueError):
    """The task sits horizontally on top of the BS, so no vertical plane is defined."""


@dataclass(frozen=True)
class LatticeConfig:
    delta: float = 25.0
    h_min: float = 50.0
    h_max: float = 150.0
    r_max: float = 500.0
    bs_height: float = 25.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"lattice.delta must be > 0, got {self.delta}")
        if not self.h_min < self.h_max:
            raise ValueError(f"lattice.h_min ({self.h_min}) must be < lattice.h_max ({self.h_max})")
        if not self.r_max > 0:
            raise ValueError(f"lattice.r_max must be > 0, got {self.r_max}")

    @property
    def max_flight_distance(self) -> float:
        """Longest move in one cycle, D = sqrt(3) * delta (a cube diagonal)."""
        return math.sqrt(3.0) * self.delta

    @property
    def n_levels(self) -> int:
        return int(math.floor((self.h_max - self.h_min) / self.delta + _EPS)) + 1

    @property
    def bs(self) -> Position:
        return Position(0.0, 0.0, self.bs_height)

    def contains(self, p: GridPoint) -> bool:
        if not 0 <= p.ih < self.n_levels:
            return False
        return math.hypot(p.ix * self.delta, p.iy * self.delta) <= self.r_max + _EPS

    def points(self) -> Iterator[GridPoint]:
        m = int(math.floor(self.r_max / self.delta + _EPS))
        for ix in range(-m, m + 1):
            for iy in range(-m, m + 1):
                for ih in range(self.n_levels):
                    p = GridPoint(ix, iy, ih)
                    if self.contains(p):
                        yield p

    def snap(self, x: float, y: float, h: float) -> GridPoint:
        """Nearest valid lattice point to a metric position inside the cylinder."""
        ih = min(max(int(round((h - self.h_min) / self.delta)), 0), self.n_levels - 1)
        fx, fy = x / self.delta, y / self.delta
        cands = {
            GridPoint(ix, iy, ih)
            for ix in (math.floor(fx), math.ceil(fx))
            for iy in (math.floor(fy), math.ceil(fy))
        }
        valid = [c for c in cands if self.contains(c)]
        if not valid:
            raise ValueError(f"({x}, {y}) lies outside the lattice cylinder r_max={self.r_max}")
        return min(valid, key=lambda c: ((c.ix - fx) ** 2 + (c.iy - fy) ** 2, c))


def to_cartesian(p: GridPoint, cfg: LatticeConfig) -> Position:
    if not cfg.contains(p):
        raise ValueError(f"{p} lies outside the lattice (r_max={cfg.r_max}, levels={cfg.n_levels})")
    return Position(p.ix * cfg.delta, p.iy * cfg.delta, cfg.h_min + p.ih * cfg.delta)


def full_action_set(p: GridPoint, cfg: LatticeConfig) -> tuple[Action, ...]:
    """All moves in the 3x3x3 cube that keep the UAV on the lattice.

    Returned in the canonical :data:`ALL_ACTIONS` order; always contains the
    hover action.
    """
    return tuple(a for a in ALL_ACTIONS if cfg.contains(p.step(a)))


def plane_distance(s, task, bs) -> float:
    """Horizontal distance from ``s`` to the vertical plane through ``task`` and ``bs``."""
    tx, ty = task[0] - bs[0], task[1] - bs[1]
    norm = math.hypot(tx, ty)
    if norm < _EPS:
        raise DegeneratePlaneError(f"task {tuple(task)} is horizontally co-located with the BS")
    sx, sy = s[0] - bs[0], s[1] - bs[1]
    return abs(sx * ty - sy * tx) / norm


def reduced_action_set(p: GridPoint, task, bs, cfg: LatticeConfig) -> tuple[Action, ...]:
    """Moves that stay close to the BS-task plane and inside the BS-task box.

    An action survives when (1) the plane distance after the move does not
    grow, or is at most ``delta``; and (2) the horizontal indices stay inside
    the box spanned by the current index, the (snapped) task column and the
    BS column.  The hover action satisfies both, so the result is never empty.
    """
    here = to_cartesian(p, cfg)
    d0 = plane_distance(here, task, bs)
    tx = int(round((task[0] - bs[0]) / cfg.delta))
    ty = int(round((task[1] - bs[1]) / cfg.delta))
    lo_x, hi_x = min(p.ix, tx, 0), max(p.ix, tx, 0)
    lo_y, hi_y = min(p.iy, ty, 0), max(p.iy, ty, 0)
    out = []
    for a in full_action_set(p, cfg):
        q = p.step(a)
        if not (lo_x <= q.ix <= hi_x and lo_y <= q.iy <= hi_y):
            continue
        d1 = plane_distance(to_cartesian(q, cfg), task, bs)
        if d1 <= d0 + _EPS or d1 <= cfg.delta + _EPS:
            out.append(a)
    return tuple(out)
