"""Online hyperparameter selection: follow the grid member with the smallest past loss."""

from __future__ import annotations

import copy
from typing import Callable, Iterable, Sequence

import numpy as np

from expertagg.core import ForecastRound, LossSpec, StateError

ALPHA_GRID = (0.0, 0.005, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0)
EXTENSION_FACTORS = (2.0, 4.0, 8.0)


class Grid:
    """Parameter tuples ``(eta,)`` or ``(eta, alpha)`` with their cumulative losses."""

    def __init__(self, points: Iterable, cumulative_losses: Iterable[float] | None = None):
        self.points: list[tuple[float, ...]] = [_as_point(p) for p in points]
        if len(set(self.points)) != len(self.points):
            raise ValueError("grid points must be distinct")
        for p in self.points:
            if not p[0] > 0:
                raise ValueError(f"eta must be > 0, got {p[0]}")
            if len(p) > 1 and not 0.0 <= p[1] <= 1.0:
                raise ValueError(f"alpha must lie in [0, 1], got {p[1]}")
        if cumulative_losses is None:
            self.cumulative_losses = [0.0] * len(self.points)
        else:
            self.cumulative_losses = [float(x) for x in cumulative_losses]
        if len(self.cumulative_losses) != len(self.points):
            raise ValueError("one cumulative loss per grid point")

    def __len__(self):
        return len(self.points)

    def __repr__(self):
        return f"Grid({len(self)} points)"

    def copy(self) -> "Grid":
        return Grid(self.points, self.cumulative_losses)

    @property
    def etas(self) -> list[float]:
        return sorted({p[0] for p in self.points})

    @property
    def alphas(self) -> list[float]:
        return sorted({p[1] for p in self.points if len(p) > 1})


def _as_point(p) -> tuple[float, ...]:
    if isinstance(p, (int, float, np.floating)):
        return (float(p),)
    return tuple(float(x) for x in p)


def meta_select_index(grid: Grid) -> int:
    if not len(grid):
        raise ValueError("empty grid")
    # first index among minimizers
    return int(np.argmin(np.asarray(grid.cumulative_losses)))


def meta_select(grid: Grid) -> tuple[float, ...]:
    return grid.points[meta_select_index(grid)]


def extend_grid(grid: Grid, selected) -> Grid:
    """Grow the eta range when ``selected`` sits at an end of it.

    New points are appended with every alpha already present and start with
    the current minimal cumulative loss.
    """
    selected = _as_point(selected)
    if selected not in grid.points:
        raise ValueError(f"{selected} is not a grid point")
    etas = grid.etas
    eta = selected[0]
    new_etas = []
    if eta == etas[0]:
        new_etas += [eta / f for f in EXTENSION_FACTORS]
    if eta == etas[-1]:
        new_etas += [eta * f for f in EXTENSION_FACTORS]
    out = grid.copy()
    if not new_etas:
        return out
    start = min(grid.cumulative_losses)
    alphas = grid.alphas
    for e in sorted(new_etas):
        for p in ([(e,)] if not alphas else [(e, a) for a in alphas]):
            if p not in out.points:
                out.points.append(p)
                out.cumulative_losses.append(start)
    return out


def alpha_grid() -> list[float]:
    return list(ALPHA_GRID)


def static_grids(name: str) -> Grid:
    small = [10.0**-k for k in range(9)]
    if name == "slovak-small":
        return Grid(small)
    if name == "slovak-large":
        pts = [1.0] + [m * 10.0**-k for k in range(1, 9) for m in (1.0, 2.5, 5.0)]
        return Grid(sorted(pts))
    if name == "slovak-fs":
        return Grid([(e, a) for e in small for a in (0.01, 0.05, 0.1, 0.2, 0.3, 0.4)])
    raise ValueError(f"unknown grid {name!r}")


class MetaRule:
    """Runs one rule per grid point and emits the weights of the best-so-far member.

    ``factory(point)`` builds a fresh member rule. With ``adaptive=True`` the
    eta range grows whenever the selected eta is an endpoint. Selection (and
    extension) is refreshed only after rounds that end a block of
    ``block_size`` rounds, so block-operational members keep one selection per
    block.
    """

    def __init__(self, factory: Callable[[tuple], object], grid: Grid | Sequence,
                 loss: LossSpec | str = "square", adaptive: bool = False, block_size: int = 1):
        self.factory = factory
        self.grid = grid.copy() if isinstance(grid, Grid) else Grid(grid)
        if not len(self.grid):
            raise ValueError("empty grid")
        self.loss = loss if isinstance(loss, LossSpec) else LossSpec(loss)
        self.adaptive = adaptive
        self.block_size = int(block_size)
        self.members = [factory(p) for p in self.grid.points]
        self.selected = 0
        self.history: list[tuple[float, ...]] = []
        self._pending: tuple[int, list[np.ndarray]] | None = None

    @property
    def n(self):
        return self.members[0].n

    @property
    def selected_point(self) -> tuple[float, ...]:
        return self.grid.points[self.selected]

    def copy(self) -> "MetaRule":
        return copy.deepcopy(self)

    def predict(self, rnd: ForecastRound) -> np.ndarray:
        hidden = rnd.hidden()
        weights = [m.predict(hidden) for m in self.members]
        self._pending = (rnd.t, weights)
        self.history.append(self.selected_point)
        return weights[self.selected].copy()

    def update(self, rnd: ForecastRound, next_active=None) -> None:
        if self._pending is None or self._pending[0] != rnd.t:
            raise StateError(f"update for round {rnd.t} without a prediction for it")
        if not rnd.revealed:
            raise StateError(f"observation of round {rnd.t} not revealed")
        mask = rnd.active
        for k, (member, w) in enumerate(zip(self.members, self._pending[1])):
            yhat = float(np.dot(w[mask], rnd.forecasts[mask]))
            self.grid.cumulative_losses[k] += float(self.loss.value(yhat, rnd.observation))
            member.update(rnd, next_active)
        self._pending = None
        if rnd.t % self.block_size == 0:
            if self.adaptive:
                self._extend()
            self.selected = meta_select_index(self.grid)

    def step(self, rnd: ForecastRound, next_active=None) -> np.ndarray:
        w = self.predict(rnd.hidden())
        if rnd.revealed:
            self.update(rnd, next_active)
        return w

    def _extend(self) -> None:
        best = meta_select(self.grid)
        grown = extend_grid(self.grid, best)
        for p in grown.points[len(self.grid):]:
            self.members.append(self.factory(p))
        self.grid = grown


def meta_step(meta: MetaRule, rnd: ForecastRound, next_active=None):
    new = meta.copy()
    w = new.step(rnd, next_active)
    return w, new
