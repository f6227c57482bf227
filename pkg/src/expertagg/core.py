"""Domain types, losses and the convex-combination prediction.

A round carries the forecasts of all ``N`` experts as one float vector in
which inactive experts hold ``NaN``; the active set is the non-NaN mask.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

WEIGHT_TOL = 1e-9

LOSS_KINDS = ("square", "absolute", "absolute-percentage")


class DomainError(ValueError):
    """Loss evaluated outside its domain."""


class ContractError(ValueError):
    """A caller-side precondition was violated."""


class StateError(RuntimeError):
    """Operation invoked in the wrong phase (e.g. update before the observation)."""


@dataclass(frozen=True)
class LossSpec:
    kind: str = "square"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")

    def value(self, prediction, observation):
        x = np.asarray(prediction, dtype=float)
        y = np.asarray(observation, dtype=float)
        if self.kind == "square":
            return (x - y) ** 2
        if self.kind == "absolute":
            return np.abs(x - y)
        if np.any(y <= 0):
            raise DomainError("absolute-percentage loss requires a strictly positive observation")
        return np.abs(x - y) / y

    def derivative(self, prediction, observation):
        """Derivative in the prediction; 0 at a perfect absolute/percentage prediction."""
        x = np.asarray(prediction, dtype=float)
        y = np.asarray(observation, dtype=float)
        if self.kind == "square":
            return 2.0 * (x - y)
        if self.kind == "absolute":
            return np.sign(x - y)
        if np.any(y <= 0):
            raise DomainError("absolute-percentage loss requires a strictly positive observation")
        return np.sign(x - y) / y

    @property
    def is_square(self) -> bool:
        return self.kind == "square"


@dataclass(frozen=True)
class Bounds:
    """``B`` bounds observations/forecasts, ``L`` losses, ``G`` subgradients (sup-norm)."""

    B: float
    L: float
    G: float

    def __post_init__(self):
        if not (self.B > 0 and self.L > 0 and self.G > 0):
            raise ValueError("bounds must be strictly positive")

    @classmethod
    def for_square_loss(cls, B: float) -> "Bounds":
        return cls(B=B, L=B**2, G=2.0 * B**2)


@dataclass(frozen=True)
class ForecastRound:
    t: int
    forecasts: np.ndarray
    observation: float | None = None

    def __post_init__(self):
        f = np.asarray(self.forecasts, dtype=float)
        if f.ndim != 1:
            raise ValueError("forecasts must be a 1-d vector over all experts")
        f.setflags(write=False)
        object.__setattr__(self, "forecasts", f)

    @classmethod
    def from_mapping(cls, t: int, n: int, forecasts: Mapping[int, float],
                     observation: float | None = None) -> "ForecastRound":
        f = np.full(n, np.nan)
        for j, v in forecasts.items():
            f[j] = v
        return cls(t, f, observation)

    @property
    def n_experts(self) -> int:
        return self.forecasts.shape[0]

    @property
    def active(self) -> np.ndarray:
        return ~np.isnan(self.forecasts)

    @property
    def members(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.active))

    @property
    def revealed(self) -> bool:
        return self.observation is not None

    def hidden(self) -> "ForecastRound":
        """Copy of the round with the observation withheld."""
        return replace(self, observation=None)


def active_mask(active, n: int) -> np.ndarray:
    """Boolean mask of length ``n`` from a mask, a ``ForecastRound`` or an iterable of indices."""
    if isinstance(active, ForecastRound):
        return active.active
    arr = np.asarray(active)
    if arr.dtype == bool:
        if arr.shape != (n,):
            raise ValueError(f"active mask must have length {n}")
        return arr.copy()
    mask = np.zeros(n, dtype=bool)
    idx = arr.astype(int).ravel() if arr.ndim else np.fromiter(active, dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError("expert index out of range")
    mask[idx] = True
    return mask


def normalize_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ContractError("weights must be finite and non-negative")
    s = w.sum()
    if s <= 0:
        raise ContractError("weights must have positive total mass")
    return w / s


def log_normalize(log_w: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax of ``log_w`` restricted to ``mask``; zero elsewhere.

    Falls back to uniform on the mask when every entry is ``-inf``.
    """
    out = np.zeros(log_w.shape[0])
    if not mask.any():
        raise ContractError("empty active set")
    lw = log_w[mask]
    top = lw.max()
    if not np.isfinite(top):
        out[mask] = 1.0 / mask.sum()
        return out
    e = np.exp(lw - top)
    out[mask] = e / e.sum()
    return out


def loss_eval(spec: LossSpec | str, prediction: float, observation: float) -> float:
    spec = _spec(spec)
    return float(spec.value(prediction, observation))


def aggregate_prediction(w, rnd: ForecastRound) -> float:
    w = np.asarray(w, dtype=float)
    mask = rnd.active
    if not mask.any():
        raise ContractError("empty active set")
    if w[~mask].sum() > WEIGHT_TOL:
        raise ContractError("weight vector has mass outside the active set")
    return float(np.dot(w[mask], rnd.forecasts[mask]))


def expert_losses(spec: LossSpec | str, rnd: ForecastRound) -> np.ndarray:
    """``l_t(delta_j)`` for active experts, ``NaN`` for inactive ones."""
    spec = _spec(spec)
    if not rnd.revealed:
        raise StateError(f"observation of round {rnd.t} not revealed")
    out = np.full(rnd.n_experts, np.nan)
    mask = rnd.active
    out[mask] = spec.value(rnd.forecasts[mask], rnd.observation)
    return out


def loss_subgradient(spec: LossSpec | str, w, rnd: ForecastRound) -> np.ndarray:
    spec = _spec(spec)
    if not rnd.revealed:
        raise StateError(f"observation of round {rnd.t} not revealed")
    yhat = aggregate_prediction(w, rnd)
    slope = float(spec.derivative(yhat, rnd.observation))
    g = np.zeros(rnd.n_experts)
    mask = rnd.active
    g[mask] = slope * rnd.forecasts[mask]
    return g


def condition(q, active) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    mask = active_mask(active, q.shape[0])
    mass = q[mask].sum()
    out = np.zeros_like(q)
    if mass <= 0:
        return out
    out[mask] = q[mask] / mass
    return out


def _spec(spec: LossSpec | str) -> LossSpec:
    return spec if isinstance(spec, LossSpec) else LossSpec(spec)
