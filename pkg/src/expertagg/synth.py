"""Seeded synthetic forecast/observation streams with sleeping experts and regime shifts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from expertagg.dataset import Dataset

ACTIVITY_MODELS = ("always-on", "periodic", "random")


@dataclass
class SynthSpec:
    """Generator settings.

    Activity: ``always-on``; ``periodic`` (each expert in ``sleepers`` is
    inactive on rounds where ``t % sleep_period == j % sleep_period``);
    ``random`` (each sleeper is inactive independently with ``sleep_rate``).
    Experts not listed in ``sleepers`` are always active.

    Skill: per regime and expert, an additive bias and a noise scale, both in
    units of ``bound``. When not given, regime ``r`` makes expert ``r % N``
    unbiased and precise while the others carry alternating-sign biases.
    """

    n_experts: int = 4
    horizon: int = 1000
    bound: float = 1.0
    activity: str = "always-on"
    sleepers: Sequence[int] = ()
    sleep_period: int = 2
    sleep_rate: float = 0.3
    regime_shifts: Sequence[int] = ()
    biases: np.ndarray | None = None
    noise: np.ndarray | None = None
    period: int = 24
    seed: int = 0
    expert_names: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if self.n_experts < 1 or self.horizon < 1 or not self.bound > 0:
            raise ValueError("need N >= 1, T >= 1 and bound > 0")
        if self.activity not in ACTIVITY_MODELS:
            raise ValueError(f"unknown activity model {self.activity!r}")
        sleepers = set(int(j) for j in self.sleepers)
        if any(j < 0 or j >= self.n_experts for j in sleepers):
            raise ValueError("sleeper index out of range")
        if self.activity != "always-on" and len(sleepers) == self.n_experts:
            raise ValueError("at least one expert must never sleep, or an active set could be empty")
        if not 0.0 <= self.sleep_rate <= 1.0:
            raise ValueError("sleep_rate must lie in [0, 1]")
        if self.sleep_period < 1 or self.period < 1:
            raise ValueError("periods must be >= 1")
        shifts = list(self.regime_shifts)
        if shifts != sorted(set(shifts)) or any(s <= 1 or s > self.horizon for s in shifts):
            raise ValueError("regime shifts must be increasing rounds in (1, T]")
        n_regimes = len(shifts) + 1
        for name, arr in (("biases", self.biases), ("noise", self.noise)):
            if arr is not None and np.shape(arr) != (n_regimes, self.n_experts):
                raise ValueError(f"{name} must have shape (regimes, N) = ({n_regimes}, {self.n_experts})")

    @property
    def n_regimes(self) -> int:
        return len(self.regime_shifts) + 1


def default_skills(n_experts: int, n_regimes: int) -> tuple[np.ndarray, np.ndarray]:
    biases = np.zeros((n_regimes, n_experts))
    noise = np.full((n_regimes, n_experts), 0.08)
    for r in range(n_regimes):
        good = r % n_experts
        sign = 1.0
        for j in range(n_experts):
            if j == good:
                noise[r, j] = 0.03
                continue
            biases[r, j] = sign * 0.12
            sign = -sign
    return biases, noise


def synth_generate(spec: SynthSpec) -> Dataset:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    T, N, B = spec.horizon, spec.n_experts, spec.bound
    t = np.arange(1, T + 1)
    y = 0.5 + 0.25 * np.sin(2 * np.pi * t / spec.period) + 0.05 * rng.standard_normal(T)
    y = B * np.clip(y, 0.05, 0.95)

    regime = np.searchsorted(np.asarray(spec.regime_shifts, dtype=int), t, side="right")
    biases, noise = default_skills(N, spec.n_regimes)
    if spec.biases is not None:
        biases = np.asarray(spec.biases, dtype=float)
    if spec.noise is not None:
        noise = np.asarray(spec.noise, dtype=float)
    eps = rng.standard_normal((T, N))
    F = y[:, None] + B * (biases[regime] + noise[regime] * eps)
    F = np.clip(F, 0.0, B)

    active = np.ones((T, N), dtype=bool)
    sleepers = sorted(set(int(j) for j in spec.sleepers))
    if spec.activity == "periodic":
        for j in sleepers:
            active[:, j] = (t % spec.sleep_period) != (j % spec.sleep_period)
    elif spec.activity == "random":
        draws = rng.random((T, N))
        for j in sleepers:
            active[:, j] = draws[:, j] >= spec.sleep_rate
    F[~active] = np.nan

    groups = [str((k - 1) % spec.period) for k in t]
    return Dataset(y, F, B, list(spec.expert_names), [str(k) for k in t], groups)
