"""Scores and robustness statistics for backtest runs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from expertagg.core import LossSpec
from expertagg.dataset import Dataset
from expertagg.oracles import expert_scores, score

QUANTILE_LEVELS = (50, 75, 90)


class UndefinedScoreError(ValueError):
    """The score has no data to average over."""


def rmse_rule(residuals) -> float:
    r = np.asarray(residuals, dtype=float)
    if r.size == 0:
        raise UndefinedScoreError("no residuals")
    return float(np.sqrt(np.mean(r**2)))


def rmse_convex(data: Dataset, q, spec="square") -> float:
    """Score of a fixed vector, each round weighted by the mass ``q`` puts on its active set."""
    spec = spec if isinstance(spec, LossSpec) else LossSpec(spec)
    q = np.asarray(q, dtype=float)
    act = data.active
    mass = act.astype(float) @ q
    ok = mass > 0
    if not ok.any():
        raise UndefinedScoreError("q puts no mass on any active set")
    F = np.where(act, data.forecasts, 0.0)
    yhat = (F[ok] @ q) / mass[ok]
    losses = spec.value(yhat, data.observations[ok])
    return score(float((losses * mass[ok]).sum()), float(mass[ok].sum()), spec)


def activity_stats(data: Dataset, spec="square") -> list[tuple[float, float]]:
    """Per expert: (score over its active rounds or ``NaN``, fraction of rounds active)."""
    scores = expert_scores(data, spec)
    freq = data.active.sum(axis=0) / data.T
    return [(float(s), float(f)) for s, f in zip(scores, freq)]


def nearest_rank(values, pct: int) -> float:
    """``ceil(pct/100 * n)``-th smallest value."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("empty sample")
    k = max(1, -(-pct * v.size // 100))
    return float(v[k - 1])


def residual_quantiles(residuals, groups: Sequence | None = None,
                       levels: Sequence[int] = QUANTILE_LEVELS) -> dict[str, tuple[float, ...]]:
    """Nearest-rank quantiles of ``|residuals|`` per group label (first-appearance order)."""
    r = np.abs(np.asarray(residuals, dtype=float))
    if groups is None:
        groups = ["all"] * r.size
    if len(groups) != r.size:
        raise ValueError("one group label per residual")
    buckets: dict[str, list[float]] = {}
    for g, x in zip(groups, r):
        buckets.setdefault(str(g), []).append(x)
    if not buckets:
        raise ValueError("no residuals")
    return {g: tuple(nearest_rank(xs, p) for p in levels) for g, xs in buckets.items()}


@dataclass
class BacktestReport:
    rule: str
    loss: str
    predictions: np.ndarray
    residuals: np.ndarray
    weights: np.ndarray
    regrets: np.ndarray
    mean_loss: float
    rmse: float | None
    selected: list[tuple[float, ...]] | None = None
    group_quantiles: dict[str, tuple[float, ...]] = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.residuals.shape[0]

    @property
    def N(self) -> int:
        return self.weights.shape[1]


def build_report(rule_name: str, data: Dataset, weights: np.ndarray, spec="square",
                 selected=None, params=None, extras=None) -> BacktestReport:
    spec = spec if isinstance(spec, LossSpec) else LossSpec(spec)
    act = data.active
    F = np.where(act, data.forecasts, 0.0)
    preds = (weights * F).sum(axis=1)
    residuals = preds - data.observations
    losses = spec.value(preds, data.observations)
    expert_l = np.where(act, spec.value(F, data.observations[:, None]), 0.0)
    regrets = np.where(act, losses[:, None] - expert_l, 0.0).sum(axis=0)
    return BacktestReport(
        rule=rule_name,
        loss=spec.kind,
        predictions=preds,
        residuals=residuals,
        weights=np.asarray(weights, dtype=float),
        regrets=regrets,
        mean_loss=float(losses.mean()),
        rmse=rmse_rule(residuals) if spec.is_square else None,
        selected=selected,
        group_quantiles=residual_quantiles(residuals, data.groups),
        params=dict(params or {}),
        extras=dict(extras or {}),
    )
