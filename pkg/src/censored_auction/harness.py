"""Error metrics, experiment configuration and the scenario runner.

A config file is plain ``key = value`` lines with ``#`` comments::

    scenario = core
    model = models/uniform2.txt
    epsilon = 0.1
    gamma = 0.1
    delta = 0.1
    budget = 20000
    seeds = 0..9
    out = runs/core

Paths are resolved relative to the config file.  Every output is a CSV with
a header row and carries no timestamps, so equal configs and seeds give
byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import baseline_km, common, kaplan, linear
from .dists import BidModel, cdf_eval, load_model, p_gamma
from .oracle import (
    WINNER_AND_PRICE,
    AuctionOracle,
    IndependentParticipation,
    Trace,
    batch_key,
    read_trace,
    simulate_rounds,
    write_trace,
)

__all__ = [
    "SCENARIOS",
    "ErrorReport",
    "ExperimentConfig",
    "ConfigError",
    "SeedResult",
    "ExperimentResult",
    "sup_error",
    "parse_config",
    "load_config",
    "run_experiment",
    "winning_bid_mean",
    "marginal_bid_mean",
    "write_estimates",
    "write_diagnostics",
    "write_summary_csv",
    "with_overrides",
]

SCENARIOS = ("core", "subsets", "km-baseline", "linear", "common")
GRID_POINTS = 1000
KM_ROUNDS = 100_000


@dataclass
class ErrorReport:
    """Accuracy of one bidder's estimate above ``p_gamma``."""

    bidder: int
    sup_error: float
    p_gamma: float
    lattice_points: np.ndarray
    signed_errors: np.ndarray
    rounds: int
    tolerance: float | None = None

    @property
    def passed(self) -> bool | None:
        return None if self.tolerance is None else bool(self.sup_error <= self.tolerance)


def sup_error(
    est,
    model: BidModel,
    gamma: float,
    tolerance: float | None = None,
    max_cdf_fn: Callable[[float], float] | None = None,
    grid: int = GRID_POINTS,
) -> ErrorReport:
    """max over ``grid`` points of ``[p_gamma, 1]`` of ``|est(p) - F_i(p)|``.

    ``est`` is any estimate with ``bidder``, ``points`` and a vectorized call.
    ``max_cdf_fn`` overrides the max-bid law that defines ``p_gamma``.
    """
    i = est.bidder
    pg = p_gamma(model, gamma, max_cdf_fn)
    xs = np.linspace(pg, 1.0, grid)
    err = float(np.max(np.abs(est(xs) - cdf_eval(model, i, xs))))
    pts = np.asarray(est.points, dtype=float)
    signed = est(pts) - cdf_eval(model, i, pts) if len(pts) else np.empty(0)
    return ErrorReport(i, err, pg, pts, np.asarray(signed), int(getattr(est, "rounds", 0)), tolerance)


def winning_bid_mean(model: BidModel, rounds: int, seed: int) -> float:
    """Monte-Carlo mean of the winning bid with reserve 0."""
    oracle = AuctionOracle(model, seed, info_mode=WINNER_AND_PRICE)
    return float(np.mean(oracle.batch(0.0, rounds, "winning-bid-mean").winning_bid))


def marginal_bid_mean(model: BidModel, i: int, rounds: int, seed: int) -> float:
    """Monte-Carlo mean of bidder ``i``'s own bid."""
    *_, bids = simulate_rounds(model, batch_key(seed, "marginal-bid-mean", 0), 0, rounds, 0.0, with_bids=True)
    return float(np.mean(bids[:, i - 1]))


class ConfigError(ValueError):
    def __init__(self, source: str, lineno: int | None, detail: str):
        self.lineno = lineno
        where = source if lineno is None else f"{source}:{lineno}"
        super().__init__(f"{where}: {detail}")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    seeds: tuple[int, ...]
    out: Path
    model: Path | None = None
    epsilon: float = 0.1
    gamma: float = 0.1
    delta: float = 0.1
    lipschitz: float | None = None
    budget: int | None = None
    tolerance: float | None = None
    min_pass: int | None = None
    participation: float = 0.5
    rounds: int | None = None
    dim: int = 3
    bidders: int = 3
    rho: float = 1e-6
    holdout: int = 10_000
    w: tuple[float, ...] = ()
    m_regression: int | None = None
    offset_tolerance: float = 0.05
    trace: bool = False

    @property
    def required_passes(self) -> int:
        return len(self.seeds) if self.min_pass is None else self.min_pass

    @property
    def tol(self) -> float:
        return self.epsilon if self.tolerance is None else self.tolerance


def _parse_seeds(text: str) -> tuple[int, ...]:
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("seeds must be non-empty")
    if any(s < 0 or s >= 2**64 for s in seeds):
        raise ValueError("seeds must be unsigned 64-bit integers")
    return tuple(seeds)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


_FIELDS: dict[str, Callable[[str], object]] = {
    "scenario": str,
    "seeds": _parse_seeds,
    "out": str,
    "model": str,
    "epsilon": float,
    "gamma": float,
    "delta": float,
    "lipschitz": float,
    "budget": int,
    "tolerance": float,
    "min_pass": int,
    "participation": float,
    "rounds": int,
    "dim": int,
    "bidders": int,
    "rho": float,
    "holdout": int,
    "w": _floats,
    "m_regression": int,
    "offset_tolerance": float,
    "trace": _bool,
}


def parse_config(text: str, source: str = "<config>", base: Path | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines; errors carry the offending line number."""
    base = Path(".") if base is None else base
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(source, lineno, f"expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(source, lineno, f"unknown key {key!r}")
        if key in values:
            raise ConfigError(source, lineno, f"duplicate key {key!r}")
        try:
            values[key] = _FIELDS[key](value)
        except ValueError as exc:
            raise ConfigError(source, lineno, f"bad value for {key}: {exc}") from None
        lines[key] = lineno
    for key in ("scenario", "seeds", "out"):
        if key not in values:
            raise ConfigError(source, None, f"missing required key {key!r}")
    if values["scenario"] not in SCENARIOS:
        raise ConfigError(
            source, lines["scenario"], f"unknown scenario {values['scenario']!r}; expected one of {', '.join(SCENARIOS)}"
        )
    values["out"] = base / str(values["out"])
    if "model" in values:
        path = base / str(values["model"])
        if not path.is_file():
            raise ConfigError(source, lines["model"], f"model file {path} does not exist")
        values["model"] = path
    elif values["scenario"] in ("core", "subsets", "km-baseline", "common"):
        raise ConfigError(source, None, f"scenario {values['scenario']} needs a model file")
    for key in ("epsilon", "gamma", "delta"):
        if key in values and not 0 < values[key] < 1:
            raise ConfigError(source, lines[key], f"{key} must lie in (0, 1)")
    if "participation" in values and not 0 < values["participation"] <= 1:
        raise ConfigError(source, lines["participation"], "participation must lie in (0, 1]")
    if values.get("min_pass") is not None and not 0 <= values["min_pass"] <= len(values["seeds"]):
        raise ConfigError(source, lines["min_pass"], "min_pass must lie in 0..len(seeds)")
    return ExperimentConfig(**values)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path), path.parent)


@dataclass
class SeedResult:
    """Outcome of one seed: named metrics per bidder (0 = run-wide) or an error."""

    seed: int
    metrics: list[tuple[int, str, float, bool | None]] = field(default_factory=list)
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(ok is not False for *_, ok in self.metrics)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    seeds: list[SeedResult]
    reports: dict[int, list[ErrorReport]] = field(default_factory=dict)

    @property
    def passes(self) -> int:
        return sum(r.passed for r in self.seeds)

    @property
    def passed(self) -> bool:
        return self.passes >= self.config.required_passes


def _fmt(v: float) -> str:
    return repr(float(v))


def write_estimates(estimates, path: str | Path, model: BidModel | None = None) -> None:
    """``bidder,lattice_point,estimate[,true_cdf]`` for lattice points l_2..l_k."""
    head = "bidder,lattice_point,estimate" + (",true_cdf" if model is not None else "")
    lines = [head]
    for est in estimates:
        for p, v in zip(est.points, est.values):
            row = [str(est.bidder), _fmt(p), _fmt(v)]
            if model is not None:
                row.append(_fmt(cdf_eval(model, est.bidder, p)))
            lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_diagnostics(estimates, path: str | Path) -> None:
    """Per-interval ``r`` estimates and the Inside value that accepted each endpoint."""
    lines = ["bidder,interval,lo,hi,r,inside_at_lo"]
    for est in estimates:
        pts, inside = est.lattice.points, est.lattice.inside_values
        for t, r in enumerate(est.r):
            tau = t + 1
            lines.append(
                ",".join([str(est.bidder), str(tau + 1), _fmt(pts[tau]), _fmt(pts[tau + 1]), _fmt(r), _fmt(inside[tau])])
            )
    Path(path).write_text("\n".join(lines) + "\n")


def _params(cfg: ExperimentConfig, model: BidModel) -> kaplan.EstimatorParams:
    lipschitz = model.lipschitz if cfg.lipschitz is None else cfg.lipschitz
    return kaplan.derive_params(cfg.epsilon, cfg.gamma, cfg.delta, lipschitz, model.n, cfg.budget)


def _record_reports(res: SeedResult, reports: list[ErrorReport], oracle_rounds: int) -> None:
    for rep in reports:
        res.metrics.append((rep.bidder, "sup_error", rep.sup_error, rep.passed))
    res.metrics.append((0, "rounds", float(oracle_rounds), None))


def _run_core(cfg, seed, out, res, reports):
    model = load_model(cfg.model)
    trace = Trace(n=model.n) if cfg.trace else None
    oracle = AuctionOracle(model, seed, trace=trace)
    ests = kaplan.estimate_all(_params(cfg, model), oracle)
    reps = [sup_error(e, model, cfg.gamma, cfg.tol) for e in ests]
    if oracle.rounds_used != ests[0].rounds:
        raise RuntimeError(f"oracle audited {oracle.rounds_used} rounds, estimator reported {ests[0].rounds}")
    write_estimates(ests, out / f"estimate_seed{seed}.csv", model)
    write_diagnostics(ests, out / f"diagnostics_seed{seed}.csv")
    if trace is not None:
        write_trace(trace, out / f"trace_seed{seed}.csv")
    _record_reports(res, reps, oracle.rounds_used)
    res.metrics.append((0, "lattice_size", float(ests[0].lattice.k), None))
    reports.extend(reps)


def _run_subsets(cfg, seed, out, res, reports):
    model = load_model(cfg.model)
    part = IndependentParticipation(cfg.participation)
    params = _params(cfg, model)
    ests, reps = [], []
    raw = delivered = 0
    for i in range(1, model.n + 1):
        oracle = AuctionOracle(model, seed, participation=part)
        est = kaplan.kaplan_subsets(i, params, oracle)
        ests.append(est)
        law = lambda x, i=i: part.max_cdf_given(model, i, x)  # noqa: E731
        reps.append(sup_error(est, model, cfg.gamma, cfg.tol, max_cdf_fn=law))
        raw += oracle.rounds_used
        delivered += oracle.rounds_delivered
    write_estimates(ests, out / f"estimate_seed{seed}.csv", model)
    write_diagnostics(ests, out / f"diagnostics_seed{seed}.csv")
    _record_reports(res, reps, raw)
    res.metrics.append((0, "raw_per_retained", raw / delivered, None))
    reports.extend(reps)


def _run_km(cfg, seed, out, res, reports):
    model = load_model(cfg.model)
    trace = Trace(n=model.n)
    oracle = AuctionOracle(model, seed, info_mode=WINNER_AND_PRICE, trace=trace)
    oracle.batch(0.0, cfg.rounds or KM_ROUNDS, "km")
    path = out / f"trace_seed{seed}.csv"
    write_trace(trace, path)
    sample = baseline_km.FullInfoSample.from_trace(read_trace(path, model.n))
    lines = ["bidder,lattice_point,estimate,true_cdf"]
    reps = []
    for i in range(1, model.n + 1):
        est = baseline_km.km_estimate(sample, i)
        rep = sup_error(est, model, cfg.gamma, cfg.tol)
        rep.rounds = len(trace)
        reps.append(rep)
        for p in est.points:
            lines.append(",".join([str(i), _fmt(p), _fmt(est(p)), _fmt(cdf_eval(model, i, p))]))
    (out / f"km_seed{seed}.csv").write_text("\n".join(lines) + "\n")
    _record_reports(res, reps, oracle.rounds_used)
    reports.extend(reps)


def _run_linear(cfg, seed, out, res, reports):
    world = linear.random_linear_world(np.random.default_rng(seed), cfg.bidders, cfg.dim)
    m = linear.sample_bound(cfg.epsilon, cfg.delta, cfg.dim, cfg.bidders) if cfg.rounds is None else cfg.rounds
    cs = linear.collect(world, m, cfg.epsilon, seed)
    fit = linear.solve_feasibility(cs, cfg.rho)
    quality = linear.evaluate_fit(world, fit.weights, cfg.epsilon, cfg.holdout, seed)
    linear.write_weights(fit.weights, out / f"weights_seed{seed}.csv")
    linear.write_weights(world.weights, out / f"true_weights_seed{seed}.csv")
    res.metrics += [
        (0, "rounds", float(m), None),
        (0, "min_slack", fit.min_slack, bool(fit.min_slack >= cfg.rho)),
        (0, "mispredict_rate", quality.mispredict_rate, bool(quality.mispredict_rate <= cfg.tol)),
        (0, "value_error_mass", quality.value_error_mass, bool(quality.value_error_mass >= 1 - cfg.tol)),
    ]


def _run_common(cfg, seed, out, res, reports):
    model = load_model(cfg.model)
    if not cfg.w:
        raise ValueError("common scenario needs w")
    world = common.CommonValueWorld(np.array(cfg.w), model, linear.ItemBox(len(cfg.w)))
    m = cfg.m_regression or common.default_regression_size(world.d, cfg.offset_tolerance, cfg.delta)
    fit, ests = common.learn_common_model(_params(cfg, model), world, m, seed)
    acc = common.offset_accuracy(fit, world, cfg.offset_tolerance, cfg.holdout, seed)
    reps = [sup_error(e, model, cfg.gamma, cfg.tol) for e in ests]
    common.write_common_w(fit, out / f"common_w_seed{seed}.csv")
    write_estimates(ests, out / f"estimate_seed{seed}.csv", model)
    _record_reports(res, reps, ests[0].rounds)
    res.metrics.append((0, "offset_accuracy", acc, bool(acc >= 1 - cfg.offset_tolerance)))
    reports.extend(reps)


_RUNNERS = {
    "core": _run_core,
    "subsets": _run_subsets,
    "km-baseline": _run_km,
    "linear": _run_linear,
    "common": _run_common,
}


def run_experiment(cfg: ExperimentConfig, write_summary: bool = True) -> ExperimentResult:
    """Run every seed of ``cfg``; a failing seed is recorded, never fatal."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    result = ExperimentResult(cfg, [])
    for seed in cfg.seeds:
        res = SeedResult(seed)
        reps: list[ErrorReport] = []
        try:
            _RUNNERS[cfg.scenario](cfg, seed, out, res, reps)
        except (kaplan.EstimationError, linear.Infeasible, RuntimeError, ValueError) as exc:
            res.error = f"{type(exc).__name__}: {exc}"
        result.seeds.append(res)
        result.reports[seed] = reps
    if write_summary:
        write_summary_csv(result, out / "summary.csv")
    return result


def write_summary_csv(result: ExperimentResult, path: str | Path) -> None:
    lines = ["seed,bidder,metric,value,passed"]
    for res in result.seeds:
        if res.error is not None:
            lines.append(f"{res.seed},0,error,{_csv_text(res.error)},False")
            continue
        for bidder, name, value, ok in res.metrics:
            lines.append(f"{res.seed},{bidder},{name},{_fmt(value)},{'' if ok is None else ok}")
    lines.append(f"all,0,seeds_passed,{result.passes},{result.passed}")
    Path(path).write_text("\n".join(lines) + "\n")


def _csv_text(text: str) -> str:
    return '"' + text.replace('"', "'").replace("\n", " ") + '"'


def with_overrides(cfg: ExperimentConfig, seed: int | None = None, out=None, budget: int | None = None) -> ExperimentConfig:
    """Copy of ``cfg`` with command-line overrides applied."""
    changes: dict[str, object] = {}
    if seed is not None:
        changes["seeds"] = (int(seed),)
        if cfg.min_pass is not None:
            changes["min_pass"] = min(cfg.min_pass, 1)
    if out is not None:
        changes["out"] = Path(out)
    if budget is not None:
        changes["budget"] = int(budget)
    return replace(cfg, **changes)
