"""Block-forecasting versions of the base rules.

Weights for a whole block of ``block_size`` consecutive rounds are fixed
once the last observation of the previous block is known. Each operational
rule runs its base rule on every revealed observation and only reads the
base rule's state at block boundaries (after round ``k * block_size``).
Inside a block the frozen state is re-conditioned on each round's active
set (EWA, specialist) or moved by share updates only (fixed-share).

Block membership is read from ``ForecastRound.t``, so rounds must carry
their 1-based position in the stream.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from expertagg.core import ContractError, ForecastRound, LossSpec, StateError, active_mask, log_normalize
from expertagg.rules import EWA, FixedShare, RuleState, Specialist, share_update


@dataclass(frozen=True)
class ExpertGroups:
    """Partition of the experts into named groups."""

    groups: Mapping[str, Sequence[int]]

    def __post_init__(self):
        seen: list[int] = []
        for name, members in self.groups.items():
            if len(members) == 0:
                raise ValueError(f"group {name!r} is empty")
            seen.extend(int(j) for j in members)
        if sorted(seen) != list(range(len(seen))):
            raise ValueError("groups must partition the experts 0..N-1")

    @classmethod
    def single(cls, n_experts: int) -> "ExpertGroups":
        return cls({"all": list(range(n_experts))})

    @classmethod
    def from_sizes(cls, sizes: Sequence[int]) -> "ExpertGroups":
        groups, start = {}, 0
        for k, size in enumerate(sizes):
            groups[f"g{k}"] = list(range(start, start + size))
            start += size
        return cls(groups)

    @property
    def n_experts(self) -> int:
        return sum(len(m) for m in self.groups.values())


def make_prior(mode: str, groups: ExpertGroups) -> np.ndarray:
    """Initial weights: ``uniform`` (1/N each) or ``fair`` (1/k per group, split inside)."""
    n = groups.n_experts
    if mode == "uniform":
        return np.full(n, 1.0 / n)
    if mode == "fair":
        prior = np.zeros(n)
        k = len(groups.groups)
        for members in groups.groups.values():
            prior[list(members)] = 1.0 / (k * len(members))
        return prior
    raise ValueError(f"unknown prior mode {mode!r}")


@dataclass
class OperationalConfig:
    base_kind: str
    eta: float
    alpha: float | None = None
    block_size: int = 48
    prior: np.ndarray | None = None
    gradient: bool = False
    loss: LossSpec = field(default_factory=LossSpec)

    def __post_init__(self):
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")


class OperationalRule:
    """Shared plumbing: drive the base rule, snapshot it at block ends."""

    kind = ""

    def __init__(self, base: RuleState, block_size: int = 48):
        if block_size < 1:
            raise ValueError("block_size must be >= 1")
        self.base = base
        self.block_size = int(block_size)
        self.n = base.n
        self._pending: int | None = None

    @property
    def eta(self):
        return self.base.eta

    @property
    def alpha(self):
        return self.base.alpha

    @property
    def params(self):
        return self.base.params

    @property
    def gradient(self):
        return self.base.gradient

    @property
    def t(self):
        return self.base.t

    def copy(self):
        return copy.deepcopy(self)

    def is_boundary(self, t: int) -> bool:
        return t % self.block_size == 0

    def predict(self, rnd: ForecastRound) -> np.ndarray:
        self.base.predict(rnd.hidden())
        w = self._weights(rnd.active)
        self._pending = rnd.t
        return w

    def update(self, rnd: ForecastRound, next_active=None) -> None:
        if self._pending != rnd.t:
            raise StateError(f"update for round {rnd.t} without a prediction for it")
        self.base.update(rnd, next_active)
        next_mask = rnd.active if next_active is None else active_mask(next_active, self.n)
        if self.is_boundary(rnd.t):
            self._sync()
        else:
            self._inside_block(rnd.active, next_mask)
        self._pending = None

    def step(self, rnd: ForecastRound, next_active=None) -> np.ndarray:
        w = self.predict(rnd.hidden())
        if rnd.revealed:
            self.update(rnd, next_active)
        return w

    def _inside_block(self, mask, next_mask) -> None:
        pass

    def __repr__(self):
        return f"{type(self).__name__}(block={self.block_size}, base={self.base!r})"


class OperationalEWA(OperationalRule):
    """EWA weights computed from regrets frozen at the last block boundary."""

    kind = "ewa"

    def __init__(self, base: EWA, block_size: int = 48):
        super().__init__(base, block_size)
        self.frozen_regrets = base.regrets.copy()

    def _weights(self, mask):
        return self.base.weights_from(self.frozen_regrets, mask)

    def _sync(self):
        self.frozen_regrets = self.base.regrets.copy()


class OperationalSpecialist(OperationalRule):
    """Specialist weight vector frozen at block boundaries, conditioned per round."""

    kind = "specialist"

    def __init__(self, base: Specialist, block_size: int = 48):
        super().__init__(base, block_size)
        self.frozen_log_weights = base.log_weights.copy()

    def _weights(self, mask):
        return log_normalize(self.frozen_log_weights, mask)

    def _sync(self):
        self.frozen_log_weights = self.base.log_weights.copy()


class OperationalFixedShare(OperationalRule):
    """Fixed-share resynchronized at block ends, share updates only in between."""

    kind = "fixed-share"

    def __init__(self, base: FixedShare, block_size: int = 48):
        super().__init__(base, block_size)
        self.log_weights: np.ndarray | None = None

    def _weights(self, mask):
        if self.log_weights is None:
            w = np.where(mask, self.base.prior, 0.0)
            self.log_weights = _log(w / w.sum())
        return log_normalize(self.log_weights, mask)

    def _sync(self):
        self.log_weights = self.base.log_weights.copy()

    def _inside_block(self, mask, next_mask):
        w, total = share_update(np.exp(self.log_weights), mask, next_mask, self.base.alpha)
        self.log_weights = _log(w / total)


def _log(w):
    with np.errstate(divide="ignore"):
        return np.log(w)


def make_operational(cfg: OperationalConfig, n_experts: int) -> OperationalRule:
    kw = dict(loss=cfg.loss, prior=cfg.prior, gradient=cfg.gradient)
    if cfg.base_kind == "ewa":
        return OperationalEWA(EWA(n_experts, cfg.eta, **kw), cfg.block_size)
    if cfg.base_kind == "specialist":
        return OperationalSpecialist(Specialist(n_experts, cfg.eta, **kw), cfg.block_size)
    if cfg.base_kind == "fixed-share":
        if cfg.alpha is None:
            raise ValueError("fixed-share needs alpha")
        return OperationalFixedShare(FixedShare(n_experts, cfg.eta, cfg.alpha, **kw), cfg.block_size)
    raise ValueError(f"unknown base kind {cfg.base_kind!r}")


def _op_step(cfg: OperationalConfig, state, kind, rnd, next_active=None):
    if cfg.base_kind != kind:
        raise ContractError(f"config is for {cfg.base_kind}, not {kind}")
    new = make_operational(cfg, rnd.n_experts) if state is None else state.copy()
    w = new.step(rnd, next_active)
    return w, new


def operational_ewa_step(cfg: OperationalConfig, state: OperationalEWA | None, rnd: ForecastRound):
    return _op_step(cfg, state, "ewa", rnd)


def operational_specialist_step(cfg: OperationalConfig, state: OperationalSpecialist | None,
                                rnd: ForecastRound):
    return _op_step(cfg, state, "specialist", rnd)


def operational_fixed_share_step(cfg: OperationalConfig, state: OperationalFixedShare | None,
                                 rnd: ForecastRound, next_active=None):
    return _op_step(cfg, state, "fixed-share", rnd, next_active)


def weight_divergence(base_history, operational_history) -> float:
    """Largest sup-norm gap between two weight trajectories."""
    a = np.asarray(base_history, dtype=float)
    b = np.asarray(operational_history, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"trajectories differ in shape: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)))


def envelope_exponent(block_size: int, eta: float, loss_range: float) -> float:
    """``c`` such that operational/base EWA weight ratios lie in ``[e^-c, e^c]``.

    The frozen and live regrets differ by at most ``block_size - 1``
    instantaneous regrets, each in ``[-loss_range, loss_range]``; numerator
    and normalizer each contribute one factor. ``loss_range`` is ``B**2`` for
    the square loss.
    """
    return 2.0 * (block_size - 1) * eta * loss_range


def divergence_envelope(block_size: int, eta: float, loss_range: float) -> float:
    """Upper bound on ``weight_divergence`` between EWA and its operational version."""
    return math.expm1(envelope_exponent(block_size, eta, loss_range))


def regret_gap_bound(block_size: int, eta: float, B: float, horizon: int) -> float:
    """Bound on the extra regret of operational EWA over EWA (square loss)."""
    c = envelope_exponent(block_size, eta, B**2)
    return 2.0 * B**2 * max(math.expm1(c), -math.expm1(-c)) * horizon
