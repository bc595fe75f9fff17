"""Command line entry point.

Subcommands::

    graphsvgd run CONFIG [--out DIR] [--seed N] [--trials N]
    graphsvgd gradcheck MODEL [--seed N]
    graphsvgd audit CONFIG [--seed N]
    graphsvgd ksd-null N SEED

``run`` writes ``results.csv`` (one row per trial, algorithm, particle count
and recorded iteration), ``summary.csv`` (trial means and standard errors),
``manifest.json`` and, for sensor runs with ``dump_particles``, one JSON file
of final particles per run under ``particles/``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import platform
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, load_config
from .diagnostics import ksd_squared, rows_to_csv
from .experiments import audit_experiment, builtin_models, run_experiment, summarize
from .kernel import KernelSpec, coordinate_kernels
from .model import GaussianMrfParams, check_gradients, gaussian_model

__all__ = ["cli_main", "ksd_null", "main"]

SUMMARY_FIELDS = ("setting", "algorithm", "kernel_variant", "n", "iteration", "metric",
                  "mean", "stderr", "trials")


def _versions():
    return {"graphsvgd": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _summary_csv(summary):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in summary:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if overrides:
        cfg = replace(cfg, **overrides)
    out = Path(args.out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)

    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    start = time.perf_counter()
    result = run_experiment(cfg)
    wall = time.perf_counter() - start

    (out / "results.csv").write_text(rows_to_csv(result.rows, result.extra_fields))
    (out / "summary.csv").write_text(_summary_csv(summarize(result.rows)))
    if result.dumps:
        dump_dir = out / "particles"
        dump_dir.mkdir(exist_ok=True)
        for d in result.dumps:
            name = f"trial{d['trial']}_{d['algorithm']}-{d['kernel_variant']}_n{d['n']}.json"
            (dump_dir / name).write_text(json.dumps(d))
    manifest = {
        "config": cfg.to_dict(),
        "versions": _versions(),
        "started_at": started,
        "wall_seconds": wall,
        "rows_written": len(result.rows),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"wrote {len(result.rows)} rows to {out / 'results.csv'} in {wall:.1f} s")
    return 0


def _cmd_gradcheck(args) -> int:
    models = builtin_models(args.seed)
    names = sorted(models) if args.model == "all" else [args.model]
    unknown = [n for n in names if n not in models]
    if unknown:
        print(f"unknown model {unknown[0]!r}; choose from {', '.join(sorted(models))} or all",
              file=sys.stderr)
        return 2
    ok = True
    for name in names:
        report = check_gradients(models[name], trials=5, tol=args.tol,
                                 rng=np.random.default_rng(args.seed))
        print(f"{name}: {report}")
        ok &= report.passed
    return 0 if ok else 1


def _cmd_audit(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    ok = True
    for setting, algorithm, report in audit_experiment(cfg):
        print(f"{setting} {algorithm}: {report.summary()}")
        ok &= report.passed
    return 0 if ok else 1


def ksd_null(n: int, seed: int, sigmas: float = 3.0) -> dict:
    """U-statistic KSD of ``n`` exact ``N(0, 1)`` draws under global and local kernels.

    Under the null the estimate should sit within ``sigmas`` empirical
    standard errors of zero.  In one dimension both kernels use the same
    single coordinate.
    """
    model = gaussian_model(GaussianMrfParams(np.eye(1), np.zeros(1)), "standard-normal")
    x = np.random.default_rng(seed).standard_normal((n, 1))
    out = {}
    for variant in ("global", "local"):
        est = ksd_squared(x, model, coordinate_kernels(KernelSpec(variant), model, x), "U")
        out[variant] = {"ksd2": est.total, "stderr": est.stderr,
                        "within": bool(abs(est.total) <= sigmas * est.stderr)}
    return out


def _cmd_ksd_null(args) -> int:
    if args.n < 3:
        print("n must be at least 3", file=sys.stderr)
        return 2
    res = ksd_null(args.n, args.seed)
    for variant, r in res.items():
        verdict = "within" if r["within"] else "OUTSIDE"
        print(f"{variant}: ksd2={r['ksd2']:.3e} stderr={r['stderr']:.3e} {verdict} 3 stderr of 0")
    return 0 if all(r["within"] for r in res.values()) else 1


def _parser():
    parser = argparse.ArgumentParser(prog="graphsvgd", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("run", help="run an experiment from a TOML config")
    p.add_argument("config_file", nargs="?", help="config path (or use --config)")
    p.add_argument("--config", dest="config_flag", help="config path")
    p.add_argument("--out", help="output directory (default: the config's output)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--trials", type=int, help="override the number of trials")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("gradcheck", help="finite-difference check of a built-in model's score")
    p.add_argument("model", help="model name or 'all'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("audit", help="blanket-access audit of the config's models")
    p.add_argument("config_file", nargs="?")
    p.add_argument("--config", dest="config_flag")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("ksd-null", help="KSD of exact N(0,1) draws against zero")
    p.add_argument("n", type=int)
    p.add_argument("seed", type=int)
    p.set_defaults(func=_cmd_ksd_null)
    return parser


def cli_main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if hasattr(args, "config_flag"):
        args.config = args.config_flag or args.config_file
        if args.config is None:
            parser.print_usage(sys.stderr)
            print(f"graphsvgd {args.command}: a config file is required", file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        if "unknown experiment" in str(err):
            parser.print_usage(sys.stderr)
        return 2


def main():
    sys.exit(cli_main())
