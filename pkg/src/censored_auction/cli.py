"""Command-line entry point: ``censored-auction <command> ...``.

Exit status is 0 on success (or when enough seeds pass), 1 when a run falls
short of its pass requirement, and 2 on invalid input.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import baseline_km, harness
from .dists import cdf_eval, load_model
from .oracle import WINNER_AND_PRICE, WINNER_ONLY, AuctionOracle, Trace, read_trace, write_trace

_SCENARIO_OF = {
    "estimate": ("core", "subsets"),
    "km": ("km-baseline",),
    "linear": ("linear",),
    "common": ("common",),
}


def _add_common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="experiment config file")
    p.add_argument("--seed", type=int, help="run this single seed instead of the configured list")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--budget", type=int, help="batch size T (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="censored-auction", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check model and config files")
    p.add_argument("models", nargs="*", help="model files")
    p.add_argument("--config", help="experiment config file")

    p = sub.add_parser("simulate", help="record auction rounds to a trace CSV")
    p.add_argument("--config", help="config whose model to use")
    p.add_argument("--model", help="model file (instead of --config)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--rounds", type=int, default=1000)
    p.add_argument("--reserve", type=float, default=0.0)
    p.add_argument("--info-mode", choices=(WINNER_ONLY, WINNER_AND_PRICE), default=WINNER_ONLY)

    for name, text in (
        ("estimate", "recover bidder CDFs from winner-only probes (core or subsets)"),
        ("linear", "learn linear valuations from winner identities"),
        ("common", "learn the common value vector, then the private CDFs"),
    ):
        _add_common(sub.add_parser(name, help=text))

    p = sub.add_parser("km", help="Kaplan-Meier baseline from full-information rounds")
    _add_common(p, config_required=False)
    p.add_argument("--trace", help="existing winner-and-price trace to estimate from")
    p.add_argument("--model", help="model file giving the bidder count for --trace")

    p = sub.add_parser("report", help="summarize a finished run directory")
    p.add_argument("--out", required=True, help="run directory containing summary.csv")
    return parser


def _cmd_validate(args) -> int:
    if not args.models and not args.config:
        print("nothing to validate; pass model files or --config", file=sys.stderr)
        return 2
    for path in args.models:
        model = load_model(path)
        print(f"{path}: ok ({model.n} bidders, L={model.lipschitz})")
    if args.config:
        cfg = harness.load_config(args.config)
        if cfg.model is not None:
            load_model(cfg.model)
        print(f"{args.config}: ok ({cfg.scenario}, {len(cfg.seeds)} seeds)")
    return 0


def _cmd_simulate(args) -> int:
    if bool(args.config) == bool(args.model):
        print("pass exactly one of --config or --model", file=sys.stderr)
        return 2
    path = args.model or harness.load_config(args.config).model
    model = load_model(path)
    trace = Trace(n=model.n)
    AuctionOracle(model, args.seed, info_mode=args.info_mode, trace=trace).batch(args.reserve, args.rounds, "simulate")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(trace, out / f"trace_seed{args.seed}.csv")
    print(f"wrote {len(trace)} rounds to {out / f'trace_seed{args.seed}.csv'}")
    return 0


def _cmd_km_trace(args) -> int:
    if not args.model or not args.out:
        print("--trace needs --model and --out", file=sys.stderr)
        return 2
    model = load_model(args.model)
    sample = baseline_km.FullInfoSample.from_trace(read_trace(args.trace, model.n))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(1, model.n + 1):
        est = baseline_km.km_estimate(sample, i)
        baseline_km.write_km_csv(est, out / f"km_bidder{i}.csv", truth=lambda x, i=i: cdf_eval(model, i, x))
    print(f"wrote Kaplan-Meier estimates for {model.n} bidders to {out}")
    return 0


def _cmd_run(args) -> int:
    if args.command == "km" and args.trace:
        return _cmd_km_trace(args)
    if not args.config:
        print(f"{args.command} needs --config", file=sys.stderr)
        return 2
    cfg = harness.load_config(args.config)
    allowed = _SCENARIO_OF[args.command]
    if cfg.scenario not in allowed:
        print(f"{args.config}: scenario {cfg.scenario!r} cannot run under '{args.command}'", file=sys.stderr)
        return 2
    cfg = harness.with_overrides(cfg, seed=args.seed, out=args.out, budget=args.budget)
    result = harness.run_experiment(cfg)
    for res in result.seeds:
        print(_seed_line(res))
    verdict = "PASS" if result.passed else "FAIL"
    print(f"{verdict}: {result.passes}/{len(result.seeds)} seeds passed (need {cfg.required_passes}); summary in {cfg.out / 'summary.csv'}")
    return 0 if result.passed else 1


def _seed_line(res: harness.SeedResult) -> str:
    if res.error is not None:
        return f"seed {res.seed}: error {res.error}"
    shown = ", ".join(
        f"{name}{'' if bidder == 0 else f'[{bidder}]'}={value:.4g}" for bidder, name, value, _ in res.metrics
    )
    return f"seed {res.seed}: {'pass' if res.passed else 'fail'} ({shown})"


def _cmd_report(args) -> int:
    path = Path(args.out) / "summary.csv"
    if not path.is_file():
        print(f"{path} not found", file=sys.stderr)
        return 2
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    seeds: dict[str, list[dict]] = {}
    overall = None
    for row in rows:
        if row["seed"] == "all":
            overall = row
        else:
            seeds.setdefault(row["seed"], []).append(row)
    for seed, items in seeds.items():
        failed = [r for r in items if r["passed"] == "False"]
        status = "pass" if not failed else "fail: " + ", ".join(f"{r['metric']}={r['value']}" for r in failed)
        print(f"seed {seed}: {status}")
    if overall is None:
        return 2
    print(f"{'PASS' if overall['passed'] == 'True' else 'FAIL'}: {overall['value']} seeds passed")
    return 0 if overall["passed"] == "True" else 1


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"validate": _cmd_validate, "simulate": _cmd_simulate, "report": _cmd_report}
    try:
        return handlers.get(args.command, _cmd_run)(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
