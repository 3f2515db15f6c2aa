"""Command-line entry point: build families, estimate, reconcile, run benchmarks."""

from __future__ import annotations

import argparse
import contextlib
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import bench
from .codes import CodeFamily, build_family
from .errors import ConstructionFailed, ParseError, ReconciliationError
from .estimation import (compute_syndromes, estimate_qber_mle, estimate_qber_sampling,
                         estimate_qber_single, syndrome_delta)
from .protocol import SessionParams, bob_reconcile

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONSTRUCTION = 3
EXIT_IO = 4

log = logging.getLogger("mmqkd")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _probability(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 0.5:
        raise argparse.ArgumentTypeError(f"{text} is not in (0, 0.5)")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"{text} must be at least 1")
    return v


def _float_list(text: str) -> list[float]:
    return [_probability(t) for t in text.split(",") if t]


def _int_list(text: str) -> list[int]:
    return [_positive(t) for t in text.split(",") if t]


def _add_globals(p: argparse.ArgumentParser):
    # repeated on each subcommand so the flags work on either side of it
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmqkd", description=__doc__)
    parser.add_argument("--seed", type=int, default=1, help="master seed (default 1)")
    parser.add_argument("--out", default=None, help="output file or directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("build", help="construct a code family and write it as alist files")
    b.add_argument("--n", type=_positive, default=10000)
    b.add_argument("--rate", type=float, default=0.8)
    b.add_argument("--u", type=_positive, default=5)
    b.add_argument("--wave", choices=("compact", "separated"), default="separated")
    b.add_argument("--profile", choices=("regular", "irregular"), default="irregular")
    _add_globals(b)

    e = sub.add_parser("estimate", help="estimate QBER on simulated keys")
    e.add_argument("--family", required=True, type=Path)
    e.add_argument("--qber", required=True, type=_probability)
    e.add_argument("--trials", type=_positive, default=10)
    e.add_argument("--method", choices=("multi", "single", "sampling"), default="multi")
    e.add_argument("--sample-rate", type=float, default=0.5)
    _add_globals(e)

    r = sub.add_parser("reconcile", help="run one reconciliation session on a simulated key")
    r.add_argument("--family", required=True, type=Path)
    r.add_argument("--qber", required=True, type=_probability)
    r.add_argument("--schedule", choices=("flooding", "shuffled", "layered"), default="flooding")
    r.add_argument("--max-iter", type=_positive, default=100)
    r.add_argument("--mode", choices=("random-one", "all"), default="all")
    r.add_argument("--exchange", choices=("member", "joint"), default="member")
    _add_globals(r)

    k = sub.add_parser("bench", help="run a named experiment and write CSV")
    k.add_argument("experiment", choices=bench.EXPERIMENTS)
    k.add_argument("--n", type=_positive, default=10000)
    k.add_argument("--rate", type=float, default=0.8)
    k.add_argument("--u", type=_positive, default=5)
    k.add_argument("--qber-list", type=_float_list, default=None,
                   help="comma-separated error rates")
    k.add_argument("--trials", type=_positive, default=100)
    k.add_argument("--max-iterations", type=_positive, default=100)
    k.add_argument("--schedule-list", default="flooding,shuffled,layered")
    k.add_argument("--error-model", choices=bench.ERROR_MODELS, default="exact_count")
    k.add_argument("--k-iters", type=_positive, default=5)
    k.add_argument("--u-list", type=_int_list, default=[1, 2, 3, 4, 5])
    k.add_argument("--wave", choices=("compact", "separated"), default="separated")
    k.add_argument("--profile", choices=("regular", "irregular"), default=None,
                   help="column profile (default: regular for est_accuracy, else irregular)")
    k.add_argument("--mode", choices=("random-one", "all"), default="all")
    k.add_argument("--exchange", choices=("member", "joint"), default="member")
    k.add_argument("--family", type=Path, default=None, help="use a saved family directory")
    k.add_argument("--timing", action="store_true", help="record wall-clock seconds")
    k.add_argument("--workers", type=_positive, default=1)
    _add_globals(k)
    return parser


# default parameter points per experiment
DEFAULT_QBERS = {
    "est_accuracy": [0.0068, 0.0166, 0.0267],
    "iterations_vs_qber": [0.02, 0.022, 0.025, 0.0275, 0.03],
    "iterations_vs_u": [0.0246],
    "wave_effect": [0.02, 0.022, 0.024, 0.026],
    "success_rate": [0.0275],
    "corrections_per_iter": [0.0267],
    "ber_after_k": [0.0202],
}


def _load_family(path: Path) -> CodeFamily:
    try:
        return CodeFamily.load(path)
    except FileNotFoundError as exc:
        raise OSError(str(exc)) from exc


def _simulate_pair(n, qber, seed, trial):
    ss = bench.child_seed(seed, 0, trial)
    key_ss, chan_ss, samp_ss = ss.spawn(3)
    x = bench.gen_key(n, key_ss)
    y, realized = bench.apply_bsc(x, qber, "exact_count", chan_ss)
    return x, y, realized, samp_ss


def cmd_build(args) -> int:
    fam = build_family(args.n, args.rate, args.u, args.wave, args.seed,
                       spec=None if args.profile == "regular" else
                       bench.ExperimentSpec("iterations_vs_qber", n=args.n, rate=args.rate,
                                            seed=args.seed).degree_spec())
    out = Path(args.out or "family")
    fam.save(out)
    print(f"wrote {fam.u} members ({fam.m}x{fam.n}) to {out}  family_id={fam.family_id}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    fam = _load_family(args.family)
    rows = []
    for t in range(args.trials):
        x, y, realized, samp_ss = _simulate_pair(fam.n, args.qber, args.seed, t)
        if args.method == "sampling":
            k = max(1, int(round(args.sample_rate * fam.n)))
            pos = np.random.default_rng(samp_ss).choice(fam.n, size=k, replace=False)
            rep = estimate_qber_sampling(x[pos], y[pos])
        else:
            deltas = syndrome_delta(compute_syndromes(x, fam), compute_syndromes(y, fam))
            est = estimate_qber_mle if args.method == "multi" else estimate_qber_single
            rep = est(deltas, fam)
        rows.append((t, realized, rep.estimate))
    with _output(args.out) as fh:
        fh.write("trial,qber_realized,qber_estimated\n")
        for t, r, est in rows:
            fh.write(f"{t},{r:.9g},{est:.9g}\n")
    err = np.array([est - r for _, r, est in rows])
    print(f"rmse {math.sqrt(float(np.mean(err ** 2))):.6g} over {len(rows)} trials",
          file=sys.stderr)
    return EXIT_OK


def cmd_reconcile(args) -> int:
    fam = _load_family(args.family)
    x, y, realized, _ = _simulate_pair(fam.n, args.qber, args.seed, 0)
    params = SessionParams(fam, max_iterations=args.max_iter, schedule=args.schedule,
                           convergence_mode=args.mode.replace("-", "_"), seed=args.seed,
                           exchange=args.exchange)
    out = bob_reconcile(y, compute_syndromes(x, fam), params, truth=x)
    res = out.decode_result
    lines = [f"status {out.status}",
             f"qber_realized {realized:.9g}",
             f"qber_estimated {out.estimate_report.estimate:.9g}",
             f"iterations {res.iterations_used if res else 0}",
             f"leakage_bits {out.leakage_bits}",
             f"alpha {out.alpha:.9g}",
             f"efficiency_f {out.efficiency_f:.9g}"]
    with _output(args.out) as fh:
        fh.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    spec = bench.ExperimentSpec(
        experiment=args.experiment, n=args.n, rate=args.rate, u=args.u,
        qber_list=args.qber_list or DEFAULT_QBERS[args.experiment], trials=args.trials,
        max_iterations=args.max_iterations,
        schedule_list=[s for s in args.schedule_list.split(",") if s],
        seed=args.seed, error_model=args.error_model, k_iters=args.k_iters,
        u_list=args.u_list, wave_layout=args.wave, profile=args.profile,
        convergence_mode=args.mode.replace("-", "_"), exchange=args.exchange,
        record_timing=args.timing, workers=args.workers)
    if args.family is not None:
        families = {args.wave: _load_family(args.family)}
    else:
        families = bench.build_families(spec)
    out = Path(args.out or f"{args.experiment}.csv")
    stem = out.name[:-4] if out.name.endswith(".csv") else out.name
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh, \
            open(out.with_name(stem + ".iters.csv"), "w", newline="") as ih:
        count = bench.write_csv(bench.run_experiment(spec, families), fh, ih)
    bench.write_manifest(out.with_name(stem + ".manifest.json"), spec, families)
    print(f"wrote {count} records to {out}", file=sys.stderr)
    return EXIT_OK


@contextlib.contextmanager
def _output(path):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w") as fh:
            yield fh


COMMANDS = {"build": cmd_build, "estimate": cmd_estimate, "reconcile": cmd_reconcile,
            "bench": cmd_bench}


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConstructionFailed as exc:
        print(f"construction failed: {exc}", file=sys.stderr)
        return EXIT_CONSTRUCTION
    except (OSError, ParseError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ReconciliationError) as exc:
        print(f"invalid arguments: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
