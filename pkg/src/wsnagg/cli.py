"""Command-line entry point.

    wsnagg run     --config scenario.txt --seed 1 --runs 20 --out results/
    wsnagg compare --config scenario.txt --runs 10 --compromised-fraction 0.2

``run`` writes one directory per seed (``nodes.csv``, ``accuracy.csv``,
``summary.txt``) and an ``aggregate.csv`` with the mean and sample std of
every summary scalar.  ``compare`` runs each seed twice, security off and
on, and writes ``overhead.csv``.  Exit status: 0 ok, 2 bad config or
arguments, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .config import apply_overrides, format_config, parse_config
from .metrics import Metrics, overhead_report, write_csv, write_summary, write_table, atomic_write
from .simulator import ConfigError, ScenarioConfig, run as run_scenario

log = logging.getLogger("wsnagg")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
OUT_ENV = "WSNAGG_OUT"


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1]")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _seed_list(text: str) -> List[int]:
    try:
        return [int(s) for s in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file (key = value lines); defaults apply if omitted")
    common.add_argument("--seed", type=int, help="first seed (overrides rng_seed in the file)")
    common.add_argument("--runs", type=_positive_int, default=1,
                        help="number of consecutive seeds starting at --seed")
    common.add_argument("--seeds", type=_seed_list, help="explicit seed list, e.g. 3,7,11 (overrides --runs)")
    common.add_argument("--compromised-fraction", type=_fraction, dest="compromised_fraction")
    common.add_argument("--loss", type=_fraction, dest="radio_loss_prob", help="radio loss probability")
    common.add_argument("--out", default=os.environ.get(OUT_ENV, "wsnagg_out"),
                        help=f"output directory (default ${OUT_ENV} or ./wsnagg_out)")
    common.add_argument("--trace", action="store_true", help="also write the event trace as JSON lines")
    common.add_argument("--jobs", type=_positive_int, default=1, help="seeds simulated in parallel")
    common.add_argument("-q", "--quiet", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="wsnagg", description="Secure max-aggregation WSN simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", parents=[common], help="simulate one or more seeds")
    p_run.add_argument("--security", choices=("on", "off"), help="override the security switch")
    sub.add_parser("compare", parents=[common], help="paired security off/on runs")
    return parser


def load_config(args) -> ScenarioConfig:
    cfg = parse_config(args.config) if args.config else ScenarioConfig()
    overrides: Dict[str, object] = {}
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    if args.compromised_fraction is not None:
        overrides["compromised_fraction"] = args.compromised_fraction
    if args.radio_loss_prob is not None:
        overrides["radio_loss_prob"] = args.radio_loss_prob
    if getattr(args, "security", None) is not None:
        overrides["security"] = args.security == "on"
    cfg = apply_overrides(cfg, overrides)
    cfg.validate()
    return cfg


def seeds_for(args, cfg: ScenarioConfig) -> List[int]:
    if args.seeds:
        return list(args.seeds)
    return [cfg.rng_seed + k for k in range(args.runs)]


def _simulate(job):
    cfg, directory, trace = job
    metrics, events = run_scenario(cfg, record_trace=trace)
    directory.mkdir(parents=True, exist_ok=True)
    write_csv(metrics, directory / "nodes.csv", directory / "accuracy.csv")
    write_summary(metrics, directory / "summary.txt")
    if trace:
        events.write_jsonl(directory / "trace.jsonl")
    return metrics


def simulate_all(cfgs: Sequence[ScenarioConfig], dirs: Sequence[Path], trace: bool,
                 jobs: int) -> List[Metrics]:
    work = [(c, d, trace) for c, d in zip(cfgs, dirs)]
    if jobs <= 1 or len(work) <= 1:
        results = []
        for job in work:
            results.append(_simulate(job))
            log.info("seed %d done", job[0].rng_seed)
        return results
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_simulate, work))


def aggregate_rows(metrics: Sequence[Metrics]) -> List[Dict[str, object]]:
    """Mean and sample std (nan for a single run) of each summary scalar."""
    scalars = [m.scalars() for m in metrics]
    rows = []
    for key in scalars[0]:
        if key == "seed":
            continue
        values = [float(s[key]) for s in scalars]
        finite = [v for v in values if not math.isnan(v)]
        mean = statistics.fmean(finite) if finite else math.nan
        std = statistics.stdev(finite) if len(finite) > 1 else math.nan
        rows.append({"metric": key, "mean": mean, "std": std, "n": len(finite)})
    return rows


def _seed_dir(root: Path, seed: int) -> Path:
    return root / f"seed_{seed:04d}"


def _echo_config(cfg: ScenarioConfig, out: Path, seeds: Sequence[int]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    text = format_config(cfg) + "# seeds = " + ",".join(map(str, seeds)) + "\n"
    atomic_write(out / "config.txt", lambda fh: fh.write(text))


def cmd_run(args) -> int:
    cfg = load_config(args)
    seeds = seeds_for(args, cfg)
    out = Path(args.out)
    _echo_config(cfg, out, seeds)
    cfgs = [cfg.with_seed(s) for s in seeds]
    metrics = simulate_all(cfgs, [_seed_dir(out, s) for s in seeds], args.trace, args.jobs)
    rows = aggregate_rows(metrics)
    write_table(rows, out / "aggregate.csv")
    if not args.quiet:
        shown = ("mean_energy_j", "delivery_ratio", "detection_rate", "fp_rate", "fn_rate",
                 "final_frac_within_tol")
        for r in rows:
            if r["metric"] in shown:
                print(f"{r['metric']:>24} = {r['mean']:.6g} +- {r['std']:.3g}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = load_config(args)
    seeds = seeds_for(args, cfg)
    out = Path(args.out)
    _echo_config(cfg, out, seeds)
    results = {}
    for label, on in (("baseline", False), ("secure", True)):
        variant = replace(cfg, protocol=replace(cfg.protocol, security=on))
        cfgs = [variant.with_seed(s) for s in seeds]
        results[label] = simulate_all(cfgs, [_seed_dir(out / label, s) for s in seeds],
                                      args.trace, args.jobs)
    rows = []
    for s, sec, base in zip(seeds, results["secure"], results["baseline"]):
        o = overhead_report(sec, base)
        rows.append({"seed": s, "energy_overhead_pct": o.energy_overhead_pct,
                     "delivery_ratio_delta": o.delivery_ratio_delta,
                     "secure_mean_energy_j": o.secure_mean_energy_j,
                     "baseline_mean_energy_j": o.baseline_mean_energy_j,
                     "secure_delivery_ratio": sec.delivery_ratio,
                     "baseline_delivery_ratio": base.delivery_ratio,
                     "detection_rate": sec.detection_rate, "fp_rate": sec.fp_rate})
    mean_row: Dict[str, object] = {"seed": "mean"}
    for key in rows[0]:
        if key != "seed":
            mean_row[key] = statistics.fmean(float(r[key]) for r in rows)
    write_table(rows + [mean_row], out / "overhead.csv")
    if not args.quiet:
        print(f"energy overhead     {mean_row['energy_overhead_pct']:.2f} % (mean over {len(rows)} seeds)")
        print(f"delivery ratio diff {mean_row['delivery_ratio_delta']:+.5f}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr)
    handler = cmd_run if args.command == "run" else cmd_compare
    try:
        return handler(args)
    except FileNotFoundError as exc:
        if args.config and exc.filename == args.config:
            print(f"error: config file not found: {args.config}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
