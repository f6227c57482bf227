"""Backtest orchestration: configuration, prequential runs and report files."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, fields
from typing import Any

import numpy as np

from expertagg.core import LossSpec
from expertagg.dataset import Dataset, load_dataset
from expertagg.evaluation import BacktestReport, build_report, residual_quantiles
from expertagg.operational import ExpertGroups, OperationalConfig, make_operational, make_prior
from expertagg.oracles import (
    active_set_partition,
    best_compound_expert,
    best_convex_vector,
    best_single_expert,
    loss_matrix,
    partition_oracles,
    uniform_rule,
)
from expertagg.rules import RULE_KINDS, make_rule
from expertagg.tuning import Grid, MetaRule, alpha_grid, static_grids

ORACLES = ("uniform", "best-expert", "best-convex", "best-compound", "prescient", "partition")
FORMATS = ("structured-text", "tabular")


class ConfigError(ValueError):
    pass


class BacktestError(RuntimeError):
    """Failure inside a run, tagged with the round being processed."""


@dataclass(frozen=True)
class RuleName:
    """Parsed rule identifier ``[meta:][op-]<kind>[-grad]``."""

    kind: str
    gradient: bool = False
    operational: bool = False
    meta: bool = False

    @classmethod
    def parse(cls, text: str) -> "RuleName":
        s = text.strip().lower()
        meta = s.startswith("meta:")
        if meta:
            s = s[len("meta:"):]
        op = s.startswith("op-")
        if op:
            s = s[len("op-"):]
        grad = s.endswith("-grad")
        if grad:
            s = s[: -len("-grad")]
        if s not in RULE_KINDS:
            raise ConfigError(f"unknown rule {text!r}")
        return cls(s, grad, op, meta)

    def __str__(self):
        return ("meta:" if self.meta else "") + ("op-" if self.operational else "") + self.kind + (
            "-grad" if self.gradient else "")


@dataclass
class RunConfig:
    data: str | None = None
    loss: str = "square"
    rule: str = "ewa"
    eta: float | None = None
    alpha: float | None = None
    block_size: int = 48
    prior: str = "uniform"
    groups: str | None = None
    grid: str | None = None
    adaptive_grid: bool = False
    seed: int = 0
    report: str | None = None
    format: str = "structured-text"
    bound: float | None = None
    m: int | None = None
    budget: int = 2000

    @property
    def is_oracle(self) -> bool:
        return self.rule in ORACLES

    def validate(self) -> None:
        LossSpec(self.loss)
        if self.format not in FORMATS:
            raise ConfigError(f"unknown format {self.format!r}")
        if self.block_size < 1:
            raise ConfigError("block_size must be >= 1")
        if self.prior not in ("uniform", "fair"):
            raise ConfigError(f"unknown prior {self.prior!r}")
        if self.is_oracle:
            if self.eta is not None or self.alpha is not None:
                raise ConfigError(f"oracle {self.rule} takes no eta/alpha")
            if self.rule == "best-compound" and self.m is None:
                raise ConfigError("best-compound needs m")
            return
        name = RuleName.parse(self.rule)
        if name.meta:
            if self.eta is not None:
                raise ConfigError("meta rules take a grid, not eta")
            if self.grid is None and not self.adaptive_grid:
                raise ConfigError("meta rules need grid or adaptive_grid")
            if self.alpha is not None and name.kind != "fixed-share":
                raise ConfigError("alpha only applies to fixed-share")
        else:
            if self.eta is None:
                raise ConfigError(f"{self.rule} needs eta")
            if self.grid is not None or self.adaptive_grid:
                raise ConfigError("grid options only apply to meta rules")
            if (self.alpha is not None) != (name.kind == "fixed-share"):
                raise ConfigError("alpha is required by fixed-share and only by it")
        if self.m is not None:
            raise ConfigError("m only applies to best-compound")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value: Any):
    if value is None:
        return None
    kind = str(_FIELD_TYPES[key])
    if isinstance(value, str):
        value = value.strip()
    if "bool" in kind:
        if isinstance(value, bool):
            return value
        low = str(value).lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if "int" in kind:
            return int(value)
        if "float" in kind:
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r}") from None
    return str(value)


def parse_config_text(text: str) -> dict[str, Any]:
    """``key = value`` lines; ``#`` starts a comment; keys use ``-`` or ``_``."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def make_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    values = dict(file_values or {})
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = _coerce(k, v)
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# -- rule construction -------------------------------------------------------

def _groups(cfg: RunConfig, n: int) -> ExpertGroups:
    if not cfg.groups:
        return ExpertGroups.single(n)
    sizes = [int(s) for s in cfg.groups.split(",")]
    g = ExpertGroups.from_sizes(sizes)
    if g.n_experts != n:
        raise ConfigError(f"group sizes {sizes} do not add up to N={n}")
    return g


def _grid(cfg: RunConfig, name: RuleName) -> Grid:
    fs = name.kind == "fixed-share"
    if cfg.alpha is not None:
        alphas = [cfg.alpha]
    else:
        alphas = alpha_grid()
    if cfg.grid is None:
        etas = [1.0]
    elif cfg.grid.replace("_", "-") in ("slovak-small", "slovak-large", "slovak-fs"):
        g = static_grids(cfg.grid.replace("_", "-"))
        if fs and len(g.points[0]) == 1:
            return Grid([(p[0], a) for p in g.points for a in alphas])
        if not fs and len(g.points[0]) == 2:
            raise ConfigError(f"grid {cfg.grid} is for fixed-share rules")
        return g
    else:
        try:
            etas = [float(s) for s in cfg.grid.split(",")]
        except ValueError:
            raise ConfigError(f"cannot parse grid {cfg.grid!r}") from None
    if fs:
        return Grid([(e, a) for e in etas for a in alphas])
    return Grid(etas)


def build_rule(cfg: RunConfig, n: int):
    """Rule object for a validated non-oracle config."""
    name = RuleName.parse(cfg.rule)
    prior = make_prior(cfg.prior, _groups(cfg, n))
    loss = LossSpec(cfg.loss)

    def member(point):
        eta = point[0]
        alpha = point[1] if len(point) > 1 else None
        if name.operational:
            oc = OperationalConfig(name.kind, eta, alpha, cfg.block_size, prior, name.gradient, loss)
            return make_operational(oc, n)
        return make_rule(name.kind, n, eta, alpha, loss, prior, name.gradient)

    if not name.meta:
        return member((cfg.eta,) if cfg.alpha is None else (cfg.eta, cfg.alpha))
    block = cfg.block_size if name.operational else 1
    return MetaRule(member, _grid(cfg, name), loss, adaptive=cfg.adaptive_grid, block_size=block)


# -- runs --------------------------------------------------------------------

def run_on_dataset(cfg: RunConfig, data: Dataset) -> BacktestReport:
    cfg.validate()
    if cfg.is_oracle:
        return _oracle_report(cfg, data)
    rule = build_rule(cfg, data.N)
    rounds = data.rounds()
    weights = np.zeros((data.T, data.N))
    for i, rnd in enumerate(rounds):
        try:
            weights[i] = rule.predict(rnd.hidden())
            rule.update(rnd, rounds[i + 1].active if i + 1 < len(rounds) else None)
        except (ValueError, RuntimeError) as exc:
            raise BacktestError(f"round {rnd.t}: {exc}") from exc
    selected = list(rule.history) if isinstance(rule, MetaRule) else None
    params = {"rule": cfg.rule, "eta": cfg.eta, "alpha": cfg.alpha, "prior": cfg.prior,
              "block_size": cfg.block_size if RuleName.parse(cfg.rule).operational else None,
              "grid": cfg.grid, "adaptive_grid": cfg.adaptive_grid}
    extras = {}
    if isinstance(rule, MetaRule):
        extras["final_grid_size"] = len(rule.grid)
    return build_report(cfg.rule, data, weights, cfg.loss, selected, params, extras)


def run_backtest(cfg: RunConfig) -> BacktestReport:
    if cfg.data is None:
        raise ConfigError("no data path configured")
    return run_on_dataset(cfg, load_dataset(cfg.data, cfg.bound))


def _oracle_report(cfg: RunConfig, data: Dataset) -> BacktestReport:
    spec = LossSpec(cfg.loss)
    T, N = data.T, data.N
    act = data.active
    weights = np.zeros((T, N))
    extras: dict[str, Any] = {}
    if cfg.rule == "uniform":
        weights = act / act.sum(axis=1, keepdims=True)
        value = uniform_rule(data, spec)
    elif cfg.rule == "best-expert":
        j, value = best_single_expert(data, spec)
        weights[act[:, j], j] = 1.0
        extras["expert"] = j
    elif cfg.rule == "best-convex":
        q, value = best_convex_vector(data, spec, cfg.budget, cfg.seed)
        mass = act.astype(float) @ q
        ok = mass > 0
        weights[ok] = np.where(act[ok], q, 0.0) / mass[ok, None]
        extras["q"] = q.tolist()
    elif cfg.rule in ("best-compound", "prescient"):
        m = T - 1 if cfg.rule == "prescient" else cfg.m
        ce, value = best_compound_expert(data, spec, m)
        weights[np.arange(T), list(ce.assignment)] = 1.0
        extras["switches"] = ce.size
        extras["cumulative_loss"] = ce.cumulative_loss
    else:
        K, value, convex_value = partition_oracles(data, spec, cfg.budget, cfg.seed)
        extras.update(K=K, best_convex=convex_value)
        L = loss_matrix(data, spec)
        for members, idx in active_set_partition(data).items():
            cols = list(members)
            j = cols[int(np.argmin(L[np.ix_(idx, cols)].sum(axis=0)))]
            weights[idx, j] = 1.0
    report = build_report(cfg.rule, data, weights, spec, None, {"rule": cfg.rule}, extras)
    defined = weights.sum(axis=1) > 0
    report.residuals = np.where(defined, report.residuals, np.nan)
    report.predictions = np.where(defined, report.predictions, np.nan)
    groups = None if data.groups is None else [g for g, d in zip(data.groups, defined) if d]
    report.group_quantiles = residual_quantiles(report.residuals[defined], groups)
    if spec.is_square:
        report.rmse = value
    report.mean_loss = value**2 if spec.is_square else value
    return report


# -- report files --------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def report_to_text(report: BacktestReport) -> str:
    """Structured text (JSON) with all scalar metrics and parameter trajectories."""
    doc = {
        "rule": report.rule,
        "loss": report.loss,
        "T": report.T,
        "N": report.N,
        "rmse": report.rmse,
        "mean_loss": report.mean_loss,
        "metric": "rmse" if report.rmse is not None else f"mean {report.loss} loss",
        "regrets": report.regrets,
        "params": report.params,
        "selected": report.selected,
        "group_quantiles": {g: dict(zip(("q50", "q75", "q90"), q)) for g, q in report.group_quantiles.items()},
        "extras": report.extras,
    }
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def _g12(x) -> str:
    x = float(x)
    return "" if math.isnan(x) else format(x, ".12g")


def report_to_table(report: BacktestReport) -> str:
    """CSV with columns ``t, w0..w{N-1}, residual, eta, alpha``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"w{j}" for j in range(report.N)] + ["residual", "eta", "alpha"])
    for t in range(report.T):
        eta = alpha = ""
        if report.selected is not None:
            point = report.selected[t]
            eta = _g12(point[0])
            alpha = _g12(point[1]) if len(point) > 1 else ""
        else:
            if report.params.get("eta") is not None:
                eta = _g12(report.params["eta"])
            if report.params.get("alpha") is not None:
                alpha = _g12(report.params["alpha"])
        w.writerow([t + 1] + [_g12(v) for v in report.weights[t]] + [_g12(report.residuals[t]), eta, alpha])
    return buf.getvalue()


def emit_report(report: BacktestReport, path: str | os.PathLike, fmt: str = "structured-text") -> None:
    if fmt == "structured-text":
        text = report_to_text(report)
    elif fmt == "tabular":
        text = report_to_table(report)
    else:
        raise ConfigError(f"unknown format {fmt!r}")
    with open(path, "w", newline="") as fh:
        fh.write(text)


def read_table(path_or_text: str) -> dict[str, np.ndarray]:
    """Parse a tabular report back into columns (empty cells become ``NaN``)."""
    text = path_or_text
    if "\n" not in path_or_text and os.path.exists(path_or_text):
        with open(path_or_text) as fh:
            text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    cols = {}
    for k, name in enumerate(header):
        cols[name] = np.array([float(r[k]) if r[k] else np.nan for r in body])
    return cols
