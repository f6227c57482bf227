"""Sequential aggregation rules for specialized experts.

Every rule follows the same prequential protocol::

    w = rule.predict(rnd.hidden())     # weights for round t, no observation
    rule.update(rnd, next_active)      # observation of round t revealed

``next_active`` is only consulted by the fixed-share rule, whose share
update redistributes mass onto the active set of the following round.
Internally all weights live in log space.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from expertagg.core import (
    Bounds,
    ContractError,
    ForecastRound,
    LossSpec,
    StateError,
    active_mask,
    condition,
    expert_losses,
    log_normalize,
    loss_subgradient,
    normalize_weights,
)

RULE_KINDS = ("ewa", "specialist", "fixed-share")


class RuleState:
    """Common bookkeeping of the three base rules.

    Subclasses implement ``_weights(mask)`` and ``_absorb(losses, rule_loss,
    mask, next_mask)`` where ``losses`` holds the (pseudo-)losses of the
    active experts and ``rule_loss`` the (pseudo-)loss of the emitted vector.
    """

    kind: str = ""

    def __init__(self, n_experts: int, eta: float, loss: LossSpec | str = "square",
                 prior=None, gradient: bool = False):
        if n_experts < 1:
            raise ValueError("need at least one expert")
        if not eta > 0:
            raise ValueError("eta must be > 0")
        self.n = int(n_experts)
        self.eta = float(eta)
        self.loss = loss if isinstance(loss, LossSpec) else LossSpec(loss)
        if prior is None:
            prior = np.full(self.n, 1.0 / self.n)
        prior = normalize_weights(prior)
        if prior.shape != (self.n,):
            raise ValueError("prior must have one entry per expert")
        self.prior = prior
        self.gradient = bool(gradient)
        self.t = 0
        self._pending: tuple[int, np.ndarray] | None = None

    @property
    def alpha(self) -> float | None:
        return None

    @property
    def params(self) -> tuple[float, ...]:
        return (self.eta,)

    def copy(self) -> "RuleState":
        return copy.deepcopy(self)

    def gradientize(self) -> "RuleState":
        s = self.copy()
        s.gradient = True
        return s

    def predict(self, rnd: ForecastRound) -> np.ndarray:
        mask = rnd.active
        if not mask.any():
            raise ContractError(f"round {rnd.t}: empty active set")
        if rnd.t <= self.t:
            raise StateError(f"round {rnd.t} is not after round {self.t}")
        w = self._weights(mask)
        self._pending = (rnd.t, w)
        return w.copy()

    def update(self, rnd: ForecastRound, next_active=None) -> None:
        if self._pending is None or self._pending[0] != rnd.t:
            raise StateError(f"update for round {rnd.t} without a prediction for it")
        if not rnd.revealed:
            raise StateError(f"observation of round {rnd.t} not revealed")
        w = self._pending[1]
        mask = rnd.active
        if self.gradient:
            g = loss_subgradient(self.loss, w, rnd)
            losses = g[mask]
            rule_loss = float(np.dot(w, g))
        else:
            losses = expert_losses(self.loss, rnd)[mask]
            yhat = float(np.dot(w[mask], rnd.forecasts[mask]))
            rule_loss = float(self.loss.value(yhat, rnd.observation))
        next_mask = mask if next_active is None else active_mask(next_active, self.n)
        if not next_mask.any():
            raise ContractError(f"round {rnd.t}: empty next active set")
        self._absorb(losses, rule_loss, mask, next_mask)
        self.t = rnd.t
        self._pending = None

    def step(self, rnd: ForecastRound, next_active=None) -> np.ndarray:
        """Predict round ``rnd`` then, if its observation is present, update."""
        w = self.predict(rnd.hidden())
        if rnd.revealed:
            self.update(rnd, next_active)
        return w

    def _weights(self, mask: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _absorb(self, losses, rule_loss, mask, next_mask) -> None:
        raise NotImplementedError

    def __repr__(self):
        grad = "grad" if self.gradient else "plain"
        return f"{type(self).__name__}(n={self.n}, params={self.params}, {grad}, t={self.t})"


class EWA(RuleState):
    """Exponentially weighted average of the regrets, restricted to the active set."""

    kind = "ewa"

    def __init__(self, n_experts, eta, loss="square", prior=None, gradient=False):
        super().__init__(n_experts, eta, loss, prior, gradient)
        self.regrets = np.zeros(self.n)
        self._log_prior = np.log(self.prior)

    def weights_from(self, regrets: np.ndarray, mask: np.ndarray) -> np.ndarray:
        return log_normalize(self._log_prior + self.eta * regrets, mask)

    def _weights(self, mask):
        return self.weights_from(self.regrets, mask)

    def _absorb(self, losses, rule_loss, mask, next_mask):
        self.regrets[mask] += rule_loss - losses


class Specialist(RuleState):
    """Specialist rule: multiplicative update that preserves the mass of the active set."""

    kind = "specialist"

    def __init__(self, n_experts, eta, loss="square", prior=None, gradient=False):
        super().__init__(n_experts, eta, loss, prior, gradient)
        self.log_weights = np.log(self.prior)

    def _weights(self, mask):
        return log_normalize(self.log_weights, mask)

    def _absorb(self, losses, rule_loss, mask, next_mask):
        old = self.log_weights[mask]
        if not np.isfinite(old).any():
            return
        new = old - self.eta * losses
        self.log_weights[mask] = new + logsumexp(old) - logsumexp(new)
        self.log_weights -= logsumexp(self.log_weights)


class FixedShare(RuleState):
    """Fixed-share rule for specialized experts.

    ``log_weights`` stores the normalized share-updated vector and
    ``log_mass`` the log of its unnormalized total, so that
    ``exp(log_weights + log_mass)`` is the raw weight vector.
    """

    kind = "fixed-share"

    def __init__(self, n_experts, eta, alpha, loss="square", prior=None, gradient=False):
        super().__init__(n_experts, eta, loss, prior, gradient)
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        self._alpha = float(alpha)
        self.log_weights: np.ndarray | None = None
        self.log_mass = 0.0

    @property
    def alpha(self) -> float:
        return self._alpha

    @property
    def params(self):
        return (self.eta, self._alpha)

    def start(self, mask: np.ndarray) -> None:
        """Initial vector: the prior conditioned on the first active set, total mass 1."""
        w = condition(self.prior, mask)
        with np.errstate(divide="ignore"):
            self.log_weights = np.log(w)
        self.log_mass = 0.0

    def _weights(self, mask):
        if self.log_weights is None:
            self.start(mask)
        return log_normalize(self.log_weights, mask)

    def _absorb(self, losses, rule_loss, mask, next_mask):
        log_v = np.full(self.n, -np.inf)
        log_v[mask] = self.log_weights[mask] - self.eta * losses
        top = log_v[mask].max()
        if not np.isfinite(top):
            self.start(next_mask)
            return
        v = np.exp(log_v - top)
        w, total = share_update(v, mask, next_mask, self._alpha)
        with np.errstate(divide="ignore"):
            self.log_weights = np.log(w / total)
        self.log_mass += top + math.log(total)

    def raw_weights(self) -> np.ndarray:
        return np.exp(self.log_weights + self.log_mass)


def share_update(v: np.ndarray, mask: np.ndarray, next_mask: np.ndarray,
                 alpha: float) -> tuple[np.ndarray, float]:
    """Redistribute ``v`` (supported on ``mask``) onto ``next_mask``.

    Returns the new vector and its total mass, which equals the mass of ``v``
    on ``mask``.
    """
    v = np.where(mask, v, 0.0)
    both = mask & next_mask
    leaving = float(v[mask & ~next_mask].sum())
    staying = float(v[both].sum())
    size = int(next_mask.sum())
    w = np.zeros_like(v)
    w[next_mask] = (leaving + alpha * staying) / size
    w[both] += (1.0 - alpha) * v[both]
    return w, leaving + staying


def make_rule(kind: str, n_experts: int, eta: float, alpha: float | None = None,
              loss="square", prior=None, gradient: bool = False) -> RuleState:
    if kind == "ewa":
        return EWA(n_experts, eta, loss, prior, gradient)
    if kind == "specialist":
        return Specialist(n_experts, eta, loss, prior, gradient)
    if kind == "fixed-share":
        if alpha is None:
            raise ValueError("fixed-share needs alpha")
        return FixedShare(n_experts, eta, alpha, loss, prior, gradient)
    raise ValueError(f"unknown rule kind {kind!r}; expected one of {RULE_KINDS}")


def _checked_step(state: RuleState, kind: str, rnd: ForecastRound, next_active=None):
    if state.kind != kind:
        raise ContractError(f"expected a {kind} state, got {state.kind}")
    new = state.copy()
    w = new.step(rnd, next_active)
    return w, new


def ewa_step(state: EWA, rnd: ForecastRound):
    return _checked_step(state, "ewa", rnd)


def specialist_step(state: Specialist, rnd: ForecastRound):
    return _checked_step(state, "specialist", rnd)


def fixed_share_step(state: FixedShare, rnd: ForecastRound, next_active):
    return _checked_step(state, "fixed-share", rnd, next_active)


def gradientize(state: RuleState) -> RuleState:
    return state.gradientize()


def run_rule(rule, rounds: Sequence[ForecastRound]) -> np.ndarray:
    """Stream ``rounds`` through ``rule``; returns the ``T x N`` weight trajectory.

    Works for any object with ``predict``/``update`` (base, operational or meta rules).
    """
    out = np.zeros((len(rounds), rounds[0].n_experts)) if rounds else np.zeros((0, 0))
    for i, rnd in enumerate(rounds):
        out[i] = rule.predict(rnd.hidden())
        if rnd.revealed:
            nxt = rounds[i + 1].active if i + 1 < len(rounds) else None
            rule.update(rnd, nxt)
    return out


# -- regrets -----------------------------------------------------------------

def _rule_loss(spec: LossSpec, w, rnd: ForecastRound) -> float:
    mask = rnd.active
    return float(spec.value(np.dot(np.asarray(w)[mask], rnd.forecasts[mask]), rnd.observation))


def regret_vs_expert(history: Iterable[tuple[np.ndarray, ForecastRound]], j: int,
                     spec: LossSpec | str = "square") -> float:
    spec = spec if isinstance(spec, LossSpec) else LossSpec(spec)
    total = 0.0
    for w, rnd in history:
        if rnd.active[j]:
            total += _rule_loss(spec, w, rnd) - float(spec.value(rnd.forecasts[j], rnd.observation))
    return total


def regret_vs_convex(history: Iterable[tuple[np.ndarray, ForecastRound]], q,
                     spec: LossSpec | str = "square") -> float:
    spec = spec if isinstance(spec, LossSpec) else LossSpec(spec)
    q = np.asarray(q, dtype=float)
    total = 0.0
    for w, rnd in history:
        mass = float(q[rnd.active].sum())
        if mass <= 0:
            continue
        total += (_rule_loss(spec, w, rnd) - _rule_loss(spec, condition(q, rnd.active), rnd)) * mass
    return total


def regret_vs_compound(history: Iterable[tuple[np.ndarray, ForecastRound]],
                       assignment: Sequence[int], spec: LossSpec | str = "square") -> float:
    """Regret against a legal sequence of experts (one per round)."""
    spec = spec if isinstance(spec, LossSpec) else LossSpec(spec)
    total = 0.0
    for (w, rnd), j in zip(history, assignment):
        if not rnd.active[j]:
            raise ContractError(f"round {rnd.t}: expert {j} is not active")
        total += _rule_loss(spec, w, rnd) - float(spec.value(rnd.forecasts[j], rnd.observation))
    return total


@dataclass
class RegretLedger:
    """Running per-expert regrets, plus linearized (pseudo-loss) regrets.

    ``linearized_regret(q)`` upper bounds ``regret_vs_convex`` for square and
    other convex losses.
    """

    n_experts: int
    loss: LossSpec = field(default_factory=LossSpec)
    regrets: np.ndarray = field(init=False)
    pseudo_regrets: np.ndarray = field(init=False)

    def __post_init__(self):
        self.regrets = np.zeros(self.n_experts)
        self.pseudo_regrets = np.zeros(self.n_experts)

    def record(self, w, rnd: ForecastRound) -> None:
        mask = rnd.active
        w = np.asarray(w, dtype=float)
        lp = _rule_loss(self.loss, w, rnd)
        self.regrets[mask] += lp - expert_losses(self.loss, rnd)[mask]
        g = loss_subgradient(self.loss, w, rnd)
        self.pseudo_regrets[mask] += float(np.dot(w, g)) - g[mask]

    def linearized_regret(self, q) -> float:
        return float(np.dot(np.asarray(q, dtype=float), self.pseudo_regrets))


# -- theory ------------------------------------------------------------------

def theoretical_optimal_eta(rule_kind: str, n_experts: int, horizon: int, bounds: Bounds) -> float:
    """Learning rate minimizing the worst-case regret bound of ``rule_kind``."""
    if n_experts < 2:
        raise ValueError("need N >= 2 (ln N vanishes otherwise)")
    if horizon < 1:
        raise ValueError("need T >= 1")
    log_n = math.log(n_experts)
    L, G, T = bounds.L, bounds.G, horizon
    if rule_kind == "ewa":
        return math.sqrt(2 * log_n / (L**2 * T))
    if rule_kind == "specialist":
        return math.sqrt(8 * log_n / (L**2 * T))
    if rule_kind == "ewa-gradient":
        return math.sqrt(log_n / (2 * G**2 * T))
    if rule_kind == "specialist-gradient":
        return math.sqrt(2 * log_n / (G**2 * T))
    raise ValueError(f"no closed-form learning rate for {rule_kind!r}")


def regret_bound(rule_kind: str, n_experts: int, horizon: int, eta: float, L: float) -> float:
    """Worst-case regret bound against fixed experts for ``ewa`` / ``specialist``."""
    if rule_kind == "ewa":
        return math.log(n_experts) / eta + eta * L**2 * horizon / 2
    if rule_kind == "specialist":
        return math.log(n_experts) / eta + eta * L**2 * horizon / 8
    raise ValueError(f"no fixed-expert bound for {rule_kind!r}")


def fixed_share_bound(n_experts: int, horizon: int, m: int, eta: float, alpha: float, L: float) -> float:
    """Regret bound of fixed-share against compound experts with at most ``m`` switches."""
    log_prior = 0.0
    for p, k in ((alpha, m), (1.0 - alpha, horizon - m - 1)):
        if k > 0:
            if p <= 0:
                return math.inf
            log_prior += k * math.log(p)
    return ((m + 1) * math.log(n_experts) - log_prior) / eta + eta * L**2 * horizon / 8
