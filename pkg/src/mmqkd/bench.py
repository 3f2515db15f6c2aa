"""Seeded key and channel simulation, experiment presets and CSV output."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .codes import CodeFamily, DegreeSpec, build_base_matrix, derive_family
from .estimation import (compute_syndromes, estimate_qber_mle, estimate_qber_sampling,
                         estimate_qber_single, syndrome_delta)
from .protocol import SessionParams, bob_reconcile, discard_leakage, leakage_audit

log = logging.getLogger(__name__)

EXPERIMENTS = ("est_accuracy", "iterations_vs_qber", "iterations_vs_u", "wave_effect",
               "success_rate", "corrections_per_iter", "ber_after_k")
ERROR_MODELS = ("bernoulli", "exact_count")

SINGLE_NAMES = {"flooding": "BP", "shuffled": "SBP", "layered": "LBP"}
MULTI_NAMES = {"flooding": "MBP", "shuffled": "MSBP", "layered": "MLBP"}

CSV_HEADER = ["trial_id", "algorithm", "u", "schedule", "qber_injected", "qber_realized",
              "qber_estimated", "iterations_used", "success", "ber_final", "leakage_bits",
              "alpha", "efficiency_f", "wall_seconds"]
ITERS_HEADER = ["trial_id", "iteration", "n_c", "n_m"]

# Irregular rate-0.8 column profile (fraction of variables per degree) for
# the decoding experiments. Estimation runs default to regular column
# weight 3, where heavy columns do not inflate the single-syndrome spread.
IRREGULAR_PROFILE = {2: 0.1995, 3: 0.5138, 8: 0.1846, 21: 0.102}


def gen_key(n: int, seed) -> np.ndarray:
    """``n`` uniform bits from a PCG64 stream seeded with ``seed``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return np.random.default_rng(seed).integers(0, 2, n, dtype=np.uint8)


def apply_bsc(x, e: float, model: str = "exact_count", seed=None) -> tuple[np.ndarray, float]:
    """Flip bits of ``x``: independently with probability ``e`` (``bernoulli``)
    or at exactly ``round(e * n)`` uniformly chosen positions (``exact_count``).
    Returns the noisy copy and the realized error fraction."""
    if not 0.0 <= e <= 1.0:
        raise ValueError(f"error rate must lie in [0, 1], got {e}")
    if model not in ERROR_MODELS:
        raise ValueError(f"model must be one of {ERROR_MODELS}")
    x = np.asarray(x, dtype=np.uint8)
    n = x.shape[0]
    rng = np.random.default_rng(seed)
    if model == "bernoulli":
        flips = rng.random(n) < e
    else:
        k = int(math.floor(e * n + 0.5))
        flips = np.zeros(n, dtype=bool)
        flips[rng.choice(n, size=k, replace=False)] = True
    y = x ^ flips.astype(np.uint8)
    return y, float(np.count_nonzero(flips)) / n


def child_seed(master: int, param_index: int, trial_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), int(param_index), int(trial_index)])


@dataclass
class ExperimentSpec:
    experiment: str
    n: int = 10000
    rate: float = 0.8
    u: int = 5
    qber_list: Sequence[float] = (0.0166,)
    trials: int = 100
    max_iterations: int = 100
    schedule_list: Sequence[str] = ("flooding", "shuffled", "layered")
    seed: int = 1
    error_model: str = "exact_count"
    k_iters: int = 5
    u_list: Sequence[int] = (1, 2, 3, 4, 5)
    wave_layout: str = "separated"
    wave_list: Sequence[str] = ("compact", "separated")
    profile: str | None = None
    sample_rate: float = 0.5
    convergence_mode: str = "all"
    exchange: str = "member"
    include_single: bool = True
    threshold: float | None = None
    code_seed: int | None = None
    record_timing: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if any(not 0 < q < 0.5 for q in self.qber_list):
            raise ValueError("qber values must lie in (0, 0.5)")
        if self.error_model not in ERROR_MODELS:
            raise ValueError(f"error_model must be one of {ERROR_MODELS}")
        if self.profile is None:
            self.profile = "regular" if self.experiment == "est_accuracy" else "irregular"
        if self.profile not in ("regular", "irregular"):
            raise ValueError("profile must be 'regular' or 'irregular'")
        self.qber_list = tuple(float(q) for q in self.qber_list)
        self.schedule_list = tuple(self.schedule_list)
        self.u_list = tuple(int(v) for v in self.u_list)
        self.wave_list = tuple(self.wave_list)

    @property
    def m(self) -> int:
        return int(round(self.n * (1 - self.rate)))

    def degree_spec(self) -> DegreeSpec:
        seed = self.seed if self.code_seed is None else self.code_seed
        if self.profile == "regular":
            return DegreeSpec.regular(self.n, self.m, 3)
        return DegreeSpec.from_profile(self.n, self.m, IRREGULAR_PROFILE, seed)


@dataclass
class MetricsRecord:
    trial_id: int
    algorithm: str
    u: int
    schedule: str
    qber_injected: float
    qber_realized: float
    qber_estimated: float
    iterations_used: int
    success: bool
    ber_final: float
    n_c_list: list[int] = field(default_factory=list)
    n_m_list: list[int] = field(default_factory=list)
    leakage_bits: int = 0
    alpha: float = math.nan
    efficiency_f: float = math.nan
    wall_seconds: float = 0.0
    error_bits: int = 0
    end_to_end_ok: bool | None = None
    status: str = ""


def build_families(spec: ExperimentSpec) -> dict[str, CodeFamily]:
    """Families keyed by wave layout, all derived from one base matrix."""
    code_seed = spec.seed if spec.code_seed is None else spec.code_seed
    base = build_base_matrix(spec.degree_spec(), code_seed)
    u = max(spec.u, max(spec.u_list) if spec.experiment == "iterations_vs_u" else 1)
    layouts = spec.wave_list if spec.experiment == "wave_effect" else (spec.wave_layout,)
    return {layout: derive_family(base, u, layout, code_seed) for layout in layouts}


def _algorithms(spec: ExperimentSpec, families: dict[str, CodeFamily]):
    """``(label, family, schedule)`` for every algorithm run at each parameter point."""
    fam = families[spec.wave_layout] if spec.wave_layout in families else next(iter(families.values()))
    out = []
    if spec.experiment == "est_accuracy":
        return [("multi_syndrome", fam.restrict(spec.u), "none"),
                ("single_syndrome", fam.restrict(1), "none"),
                ("sampling", fam.restrict(1), "none")]
    if spec.experiment == "iterations_vs_u":
        for s in spec.schedule_list:
            for u in spec.u_list:
                out.append((MULTI_NAMES[s] if u > 1 else SINGLE_NAMES[s], fam.restrict(u), s))
        return out
    if spec.experiment == "wave_effect":
        for layout in spec.wave_list:
            for s in spec.schedule_list:
                out.append((f"{MULTI_NAMES[s]}:{layout}", families[layout].restrict(spec.u), s))
        return out
    for s in spec.schedule_list:
        if spec.include_single:
            out.append((SINGLE_NAMES[s], fam.restrict(1), s))
        out.append((MULTI_NAMES[s], fam.restrict(spec.u), s))
    return out


def _estimate_trial(spec, label, family, x, y, realized, rng):
    if label == "sampling":
        k = max(1, int(round(spec.sample_rate * spec.n)))
        pos = rng.choice(spec.n, size=k, replace=False)
        rep = estimate_qber_sampling(x[pos], y[pos])
    else:
        deltas = syndrome_delta(compute_syndromes(x, family), compute_syndromes(y, family))
        est = estimate_qber_mle if label == "multi_syndrome" else estimate_qber_single
        rep = est(deltas, family, spec.threshold)
    errors = int(np.count_nonzero(x != y))
    return dict(qber_estimated=rep.estimate, iterations_used=0, success=False,
                ber_final=errors / spec.n, error_bits=errors,
                leakage_bits=rep.disclosed_bits)


def _reconcile_trial(spec, family, schedule, x, y, max_iter, seed):
    params = SessionParams(family, spec.threshold, max_iter, schedule, "multi_syndrome",
                           spec.convergence_mode, seed=seed, exchange=spec.exchange)
    alice = compute_syndromes(x, family)
    out = bob_reconcile(y, alice, params, truth=x)
    res = out.decode_result
    final = res.corrected_key if res is not None else y
    errors = int(np.count_nonzero(final != x))
    ok = None
    if out.status == "Success":
        ok = bool(np.array_equal(out.corrected_key, discard_leakage(x, family)))
    return dict(qber_estimated=out.estimate_report.estimate,
                iterations_used=res.iterations_used if res is not None else 0,
                success=out.status == "Success",
                ber_final=errors / spec.n, error_bits=errors,
                n_c_list=list(res.n_c) if res is not None else [],
                n_m_list=list(res.n_m) if res is not None else [],
                leakage_bits=out.leakage_bits, alpha=out.alpha,
                efficiency_f=out.efficiency_f, end_to_end_ok=ok, status=out.status)


def _run_point(spec: ExperimentSpec, algorithms, p_index: int, qber: float, trial: int):
    """All algorithms on one (parameter point, trial) key pair."""
    ss = child_seed(spec.seed, p_index, trial)
    key_ss, chan_ss, samp_ss, conv_ss = ss.spawn(4)
    x = gen_key(spec.n, key_ss)
    y, realized = apply_bsc(x, qber, spec.error_model, chan_ss)
    max_iter = spec.k_iters if spec.experiment == "ber_after_k" else spec.max_iterations
    conv_seed = int(conv_ss.generate_state(1)[0])
    rows = []
    for label, family, schedule in algorithms:
        t0 = time.perf_counter()
        if spec.experiment == "est_accuracy":
            vals = _estimate_trial(spec, label, family, x, y, realized,
                                   np.random.default_rng(samp_ss))
        else:
            vals = _reconcile_trial(spec, family, schedule, x, y, max_iter, conv_seed)
        wall = time.perf_counter() - t0 if spec.record_timing else 0.0
        rows.append(MetricsRecord(trial_id=0, algorithm=label, u=family.u, schedule=schedule,
                                  qber_injected=qber, qber_realized=realized,
                                  wall_seconds=wall, **vals))
    return rows


def _run_point_star(args):
    return _run_point(*args)


def run_experiment(spec: ExperimentSpec, family_source: CodeFamily | dict | None = None
                   ) -> Iterator[MetricsRecord]:
    """Yield one record per (parameter point, trial, algorithm), in that order.

    ``family_source`` may be a prepared family, a dict of families keyed by
    wave layout, or None to build them from the spec. Trial ``t`` at
    parameter point ``p`` draws its key and channel from the seed
    ``(spec.seed, p, t)``, and every algorithm sees the same key pair.
    """
    if family_source is None:
        families = build_families(spec)
    elif isinstance(family_source, CodeFamily):
        families = {family_source.wave_layout: family_source}
    else:
        families = dict(family_source)
    if spec.wave_layout not in families and spec.experiment != "wave_effect":
        spec = dataclasses.replace(spec, wave_layout=next(iter(families)))
    algorithms = _algorithms(spec, families)
    for _, fam, _ in algorithms:
        if fam.n != spec.n:
            raise ValueError(f"family length {fam.n} differs from spec n={spec.n}")
        if spec.experiment != "est_accuracy":
            leakage_audit(fam)
    jobs = [(spec, algorithms, p, q, t)
            for p, q in enumerate(spec.qber_list) for t in range(spec.trials)]
    counter = 0
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            results = pool.map(_run_point_star, jobs, chunksize=4)
            for rows in results:
                for r in rows:
                    r.trial_id = counter
                    counter += 1
                    yield r
        return
    for job in jobs:
        for r in _run_point(*job):
            r.trial_id = counter
            counter += 1
            yield r


# output -------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return format(v, ".9g")
    return str(v)


def write_csv(records: Iterable[MetricsRecord], out, iters_out=None) -> int:
    """Write the metrics CSV (and optionally the per-iteration CSV); return row count."""
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    it_writer = None
    if iters_out is not None:
        it_writer = csv.writer(iters_out, lineterminator="\n")
        it_writer.writerow(ITERS_HEADER)
    count = 0
    for r in records:
        writer.writerow([_fmt(getattr(r, name)) for name in CSV_HEADER])
        if it_writer is not None:
            for k, (c, mis) in enumerate(zip(r.n_c_list, r.n_m_list), 1):
                it_writer.writerow([r.trial_id, k, c, mis])
        count += 1
    return count


def records_to_csv_text(records: Iterable[MetricsRecord]) -> str:
    buf = io.StringIO()
    write_csv(records, buf)
    return buf.getvalue()


def aggregate_ber(records: Sequence[MetricsRecord], n: int) -> float:
    """Error bits over all trials divided by ``trials * n``."""
    records = list(records)
    if not records:
        return math.nan
    return sum(r.error_bits for r in records) / (len(records) * n)


def write_manifest(path, spec: ExperimentSpec, families: dict[str, CodeFamily] | None = None):
    info = {"spec": dataclasses.asdict(spec),
            "prng": "numpy PCG64 via SeedSequence([seed, parameter_index, trial_index])",
            "key_reuse": "one key pair per (parameter point, trial), shared by all algorithms"}
    if families:
        info["families"] = {k: {"family_id": f.family_id, "u": f.u, "m": f.m, "n": f.n}
                            for k, f in families.items()}
    Path(path).write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


# a 4x5 code whose rows 0 and 1 both touch variables 1 and 3; flipping
# exactly those two bits leaves BP oscillating between them forever
TRAP_MEMBERS = (
    ((1, 1, 0, 1, 0), (0, 1, 1, 1, 1), (0, 0, 0, 1, 1), (0, 0, 1, 1, 0)),
    ((0, 0, 1, 0, 1), (1, 0, 1, 0, 0), (1, 1, 0, 0, 1), (0, 0, 1, 1, 0)),
    ((0, 0, 1, 1, 0), (1, 1, 0, 0, 0), (0, 0, 1, 0, 1), (0, 1, 1, 0, 0)),
)
TRAP_KEY = (1, 0, 1, 0, 1)
TRAP_ERRORS = (1, 3)
TRAP_QBER = 0.2


def cycle_trap_case(u: int = 3):
    """``(family, x, y, e)`` for the trapped-pair example with ``u`` members.

    Member 0 contains the 4-cycle through variables 1 and 3; members 1
    and 2 have no 4-cycles at all.
    """
    from .gf2 import ParityCheckMatrix

    codes = tuple(ParityCheckMatrix.from_dense(np.array(h, dtype=np.uint8))
                  for h in TRAP_MEMBERS[:u])
    independent = CodeFamily.single(codes[0]).independent_positions
    family = CodeFamily(codes, independent, "separated", 0)
    x = np.array(TRAP_KEY, dtype=np.uint8)
    y = x.copy()
    y[list(TRAP_ERRORS)] ^= 1
    return family, x, y, TRAP_QBER
