"""Hindsight benchmarks computed with full knowledge of a dataset.

Scores are RMSE for the square loss and the mean loss otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from expertagg.core import LossSpec
from expertagg.dataset import Dataset


class InfeasibleError(ValueError):
    """No legal compound expert exists within the switch budget."""


@dataclass(frozen=True)
class CompoundExpert:
    assignment: tuple[int, ...]
    cumulative_loss: float

    @property
    def size(self) -> int:
        a = self.assignment
        return sum(1 for s in range(1, len(a)) if a[s] != a[s - 1])


def _spec(spec) -> LossSpec:
    return spec if isinstance(spec, LossSpec) else LossSpec(spec)


def score(total_loss: float, weight: float, spec: LossSpec) -> float:
    """RMSE (square loss) or mean loss from a weighted loss sum."""
    mean = total_loss / weight
    return float(np.sqrt(mean)) if spec.is_square else float(mean)


def loss_matrix(data: Dataset, spec) -> np.ndarray:
    """``T x N`` expert losses, ``inf`` where an expert is inactive."""
    spec = _spec(spec)
    out = np.full(data.forecasts.shape, np.inf)
    act = data.active
    ys = np.broadcast_to(data.observations[:, None], out.shape)
    out[act] = spec.value(data.forecasts[act], ys[act])
    return out


def uniform_rule(data: Dataset, spec="square") -> float:
    spec = _spec(spec)
    act = data.active
    yhat = np.where(act, data.forecasts, 0.0).sum(axis=1) / act.sum(axis=1)
    return score(float(spec.value(yhat, data.observations).sum()), data.T, spec)


def expert_scores(data: Dataset, spec="square") -> np.ndarray:
    """Per-expert score over its active rounds; ``NaN`` for never-active experts."""
    spec = _spec(spec)
    L = loss_matrix(data, spec)
    act = data.active
    out = np.full(data.N, np.nan)
    for j in range(data.N):
        col = L[act[:, j], j]
        if col.size:
            # 1-d sum, same summation order as ``rmse_convex`` on a Dirac vector
            out[j] = score(float(col.sum()), float(col.size), spec)
    return out


def best_single_expert(data: Dataset, spec="square") -> tuple[int, float]:
    s = expert_scores(data, spec)
    if np.all(np.isnan(s)):
        raise ValueError("no expert is ever active")
    j = int(np.nanargmin(s))
    return j, float(s[j])


# -- best constant convex vector --------------------------------------------

def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    n = v.shape[0]
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, n + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


class _ConvexObjective:
    """Weighted mean loss of a fixed vector ``q`` conditioned on each round's active set."""

    def __init__(self, data: Dataset, spec: LossSpec):
        self.spec = spec
        self.M = data.active.astype(float)
        self.F = np.where(data.active, data.forecasts, 0.0)
        self.y = data.observations

    def value(self, q) -> float:
        a = self.M @ q
        ok = a > 0
        if not ok.any():
            return np.inf
        yhat = (self.F[ok] @ q) / a[ok]
        return float((a[ok] * self.spec.value(yhat, self.y[ok])).sum() / a[ok].sum())

    def value_and_grad(self, q):
        a = self.M @ q
        ok = a > 0
        if not ok.any():
            return np.inf, np.zeros_like(q)
        M, F, y, aa = self.M[ok], self.F[ok], self.y[ok], a[ok]
        yhat = (F @ q) / aa
        loss = self.spec.value(yhat, y)
        slope = self.spec.derivative(yhat, y)
        A = aa.sum()
        J = float((aa * loss).sum() / A)
        dS = M.T @ loss + (M * F).T @ slope - M.T @ (slope * yhat)
        dA = M.sum(axis=0)
        return J, (dS - J * dA) / A


def best_convex_vector(data: Dataset, spec="square", budget: int = 2000,
                       seed: int = 0) -> tuple[np.ndarray, float]:
    """Approximate best constant convex vector.

    Multi-start projected gradient descent with backtracking (starts: every
    vertex, the uniform vector, random Dirichlet draws), then random
    perturbations of the incumbent. Only improvements are accepted, so the
    result never scores worse than any start.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    spec = _spec(spec)
    obj = _ConvexObjective(data, spec)
    rng = np.random.default_rng(seed)
    N = data.N
    starts = [np.eye(N)[j] for j in range(N)] + [np.full(N, 1.0 / N)]
    starts += list(rng.dirichlet(np.ones(N), size=min(8, N)))

    def descend(q, iters):
        J, g = obj.value_and_grad(q)
        step = 1.0
        for _ in range(iters):
            while step > 1e-14:
                cand = project_simplex(q - step * g)
                Jc = obj.value(cand)
                if Jc < J:
                    q = cand
                    J, g = obj.value_and_grad(q)
                    step *= 2.0
                    break
                step *= 0.5
            else:
                break
        return q, J

    per_start = max(1, budget // (4 * len(starts)))
    runs = [descend(q, per_start) for q in starts]
    # starting values themselves remain candidates
    runs += [(q, obj.value(q)) for q in starts]
    best_q, best_J = min(runs, key=lambda r: r[1])
    best_q, best_J = descend(best_q, max(1, budget // 2))
    scale = 0.5
    for _ in range(max(1, budget // 4)):
        cand = (1.0 - scale) * best_q + scale * rng.dirichlet(np.ones(N))
        Jc = obj.value(cand)
        if Jc < best_J:
            best_q, best_J = cand, Jc
        else:
            scale = max(scale * 0.9, 1e-6)
    best_q = best_q / best_q.sum()
    return best_q, score(best_J, 1.0, spec)


# -- compound experts --------------------------------------------------------

def best_compound_expert(data: Dataset, spec="square", m: int = 0) -> tuple[CompoundExpert, float]:
    """Exact best sequence of experts with at most ``m`` switches.

    Backward dynamic program over (round, expert, switches left) using the
    smallest and second-smallest value per row, O(T N m). Among optimal
    sequences the lexicographically smallest one is returned.
    """
    spec = _spec(spec)
    T, N = data.T, data.N
    if m < 0:
        raise ValueError("m must be >= 0")
    L = loss_matrix(data, spec)
    m = min(m, T - 1)
    if m == T - 1:
        path = [int(np.argmin(L[t])) for t in range(T)]
        return _compound(L, path, spec)
    V = np.empty((T, m + 1, N))
    V[T - 1] = L[T - 1]
    for t in range(T - 2, -1, -1):
        nxt = V[t + 1]
        best = np.full((m + 1, N), np.inf)
        best[:] = nxt
        if m > 0:
            prev = nxt[:-1]
            order = np.argsort(prev, axis=1, kind="stable")
            lo = np.take_along_axis(prev, order[:, :1], axis=1)
            lo2 = np.take_along_axis(prev, order[:, 1:2], axis=1) if N > 1 else np.full_like(lo, np.inf)
            switch = np.where(np.arange(N)[None, :] == order[:, :1], lo2, lo)
            best[1:] = np.minimum(best[1:], switch)
        V[t] = L[t] + best
    j = int(np.argmin(V[0, m]))
    if not np.isfinite(V[0, m, j]):
        raise InfeasibleError(f"no legal compound expert with at most {m} switches")
    path, k = [j], m
    for t in range(1, T):
        cand = np.full(N, np.inf)
        if k > 0:
            cand[:] = V[t, k - 1]
        cand[j] = V[t, k, j]
        nj = int(np.argmin(cand))
        if nj != j:
            k -= 1
        j = nj
        path.append(j)
    return _compound(L, path, spec)


def _compound(L: np.ndarray, path: list[int], spec: LossSpec) -> tuple[CompoundExpert, float]:
    total = float(sum(L[t, j] for t, j in enumerate(path)))
    return CompoundExpert(tuple(path), total), score(total, L.shape[0], spec)


def prescient(data: Dataset, spec="square") -> tuple[CompoundExpert, float]:
    return best_compound_expert(data, spec, data.T - 1)


# -- partition oracles ---------------------------------------------------------

def active_set_partition(data: Dataset) -> dict[tuple[int, ...], np.ndarray]:
    """Rounds grouped by the value of their active set, in order of first appearance."""
    parts: dict[tuple[int, ...], list[int]] = {}
    for t, row in enumerate(data.active):
        parts.setdefault(tuple(np.flatnonzero(row).tolist()), []).append(t)
    return {k: np.asarray(v) for k, v in parts.items()}


def partition_oracles(data: Dataset, spec="square", budget: int = 2000,
                      seed: int = 0) -> tuple[int, float, float]:
    """Best expert / best convex vector chosen separately on each active-set element.

    Element sums are pooled and normalized by the full ``T``.
    """
    spec = _spec(spec)
    parts = active_set_partition(data)
    L = loss_matrix(data, spec)
    expert_total = convex_total = 0.0
    for members, idx in parts.items():
        cols = list(members)
        expert_total += float(L[np.ix_(idx, cols)].sum(axis=0).min())
        sub = Dataset(data.observations[idx], data.forecasts[np.ix_(idx, cols)], data.bound)
        q, s = best_convex_vector(sub, spec, budget, seed)
        mean = s**2 if spec.is_square else s
        convex_total += min(mean * len(idx), float(L[np.ix_(idx, cols)].sum(axis=0).min()))
    return len(parts), score(expert_total, data.T, spec), score(convex_total, data.T, spec)
