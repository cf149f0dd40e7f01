"""Command line entry point: ``pairwise-ldp {factorize,simulate,reduce,bench}``.

Errors exit with status 1 and a single JSON line on stderr:
``{"error": "<type>", "message": "..."}``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time

import numpy as np

from .harness import (ExperimentConfig, ExperimentError, mse_report, reduction_experiment, run_trials,
                      trials_csv, write_outputs)
from .kernels import resolve_workload
from .randomizers import derive_rng, vrand_batch
from .workload import factorization_residual, write_bundle


def _factorize(args) -> int:
    F, W = resolve_workload(args.workload, args.k)
    nL, nR = F.norms()
    resid = factorization_residual(F, W)
    if args.out:
        write_bundle(args.out, F, W)
    print(f"workload {args.workload}")
    print(f"k {F.k}")
    print(f"ell {F.ell}")
    print(f"norm_L {nL!r}")
    print(f"norm_R {nR!r}")
    print(f"norm_product {nL * nR!r}")
    print(f"alpha {F.alpha!r}")
    print(f"residual {resid!r}")
    return 0


def _config(args) -> ExperimentConfig:
    with open(args.config) as fh:
        d = json.load(fh)
    if args.seed is not None:
        d["master_seed"] = args.seed
    if getattr(args, "output", None):
        d["output"] = args.output
    return ExperimentConfig.from_dict(d)


def _simulate(args) -> int:
    config = _config(args)
    try:
        result = run_trials(config, args.workers)
    except ExperimentError as exc:
        if config.trials_output:
            with open(config.trials_output, "w") as fh:
                fh.write(trials_csv(exc.rows))
        raise
    text = write_outputs(result, dump_transcript=args.dump_transcript)
    _, slopes = mse_report(result.summaries)
    if not config.output:
        sys.stdout.write(text)
    for s in result.summaries:
        print(f"budget n={s.n} epsilon={s.epsilon!r} spent={s.epsilon_spent!r}")
    for (stat, proto, k, eps), slope in slopes.items():
        print(f"slope statistic={stat} protocol={proto} k={k} epsilon={eps!r} loglog_slope={slope!r}")
    return 0


def _reduce(args) -> int:
    config = _config(args)
    rows = reduction_experiment(config, args.workers)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    if config.output:
        with open(config.output, "w") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    for row in rows:
        print(f"budget n={row['n']} epsilon={row['epsilon']!r} spent={row['epsilon_spent']!r}")
    return 0


def _bench(args) -> int:
    rng = derive_rng(args.seed or 0, "bench")
    X = rng.standard_normal((args.n, args.d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    start = time.perf_counter()
    for _ in range(args.repeat):
        vrand_batch(X, 1.0, 1.0, rng)
    elapsed = time.perf_counter() - start
    rate = args.n * args.repeat / elapsed
    print(json.dumps({"randomizer": "vrand", "d": args.d, "messages": args.n * args.repeat,
                      "seconds": elapsed, "messages_per_second": rate}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pairwise-ldp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("factorize", help="build a workload factorization and report its norms")
    p.add_argument("workload")
    p.add_argument("--k", type=int)
    p.add_argument("--out", help="write the L/R/W bundle here")
    p.set_defaults(func=_factorize)

    for name, func, help_ in (("simulate", _simulate, "run a Monte-Carlo grid and write the MSE CSV"),
                              ("reduce", _reduce, "run the quadratic-form to linear-query reduction")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, help="override master_seed")
        p.add_argument("--output", help="override the config output path")
        p.add_argument("--workers", type=int)
        if name == "simulate":
            p.add_argument("--dump-transcript", help="write per-round aggregates as matrices")
        p.set_defaults(func=func)

    p = sub.add_parser("bench", help="time the vector randomizer")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except Exception as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
