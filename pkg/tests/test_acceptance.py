"""Acceptance criteria 1-10 at full size.

Every criterion prints one ``PASS``/``FAIL`` line with the measured values
and wall time. The lines are repeated in the pytest terminal summary, and
running this file as a script prints them directly. The full suite takes
about 35 minutes on one core; criterion 6 alone runs 6000 decodes.
"""

import functools
import itertools
import sys
import time
import warnings
from collections import defaultdict

import numpy as np

from mmqkd.bench import ExperimentSpec, cycle_trap_case, records_to_csv_text, run_experiment
from mmqkd.codes import CodeFamily, read_alist, write_alist
from mmqkd.decoder import decode
from mmqkd.estimation import compute_syndromes, odd_error_prob
from mmqkd.gf2 import ParityCheckMatrix, gf2_rank, systematic_decompose
from mmqkd.protocol import InfeasibleRate, leakage_audit, reconciliation_efficiency

RESULTS = {}
SCHEDULES = (("BP", "MBP"), ("SBP", "MSBP"), ("LBP", "MLBP"))


def report(number, ok, detail, seconds=None):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    if seconds is not None:
        line += f"  [{seconds:.0f} s]"
    RESULTS[number] = line
    print(line, flush=True)
    return ok


def timed(fn):
    """Cache an experiment run and remember how long it took."""
    @functools.lru_cache(maxsize=None)
    def wrapper():
        t0 = time.perf_counter()
        records = list(fn())
        return records, time.perf_counter() - t0
    return wrapper


def group(records, *keys):
    out = defaultdict(list)
    for r in records:
        out[tuple(getattr(r, k) for k in keys)].append(r)
    return out


def iterations(recs, budget=100):
    # an aborted trial never reaches the decoder; it counts as a spent budget
    return np.array([budget if r.status == "Aborted" else r.iterations_used for r in recs],
                    dtype=float)


@timed
def est_run():
    spec = ExperimentSpec("est_accuracy", qber_list=(0.0166,), trials=2000, seed=11)
    return run_experiment(spec)


@timed
def qber_run():
    spec = ExperimentSpec("iterations_vs_qber", qber_list=(0.02, 0.025, 0.03), trials=100,
                          seed=12)
    return run_experiment(spec)


@timed
def u_run():
    spec = ExperimentSpec("iterations_vs_u", qber_list=(0.0246,), trials=100, seed=13)
    return run_experiment(spec)


@timed
def wave_run():
    spec = ExperimentSpec("wave_effect", qber_list=(0.02, 0.022, 0.024, 0.026), trials=100,
                          seed=14)
    return run_experiment(spec)


@timed
def success_run():
    spec = ExperimentSpec("success_rate", qber_list=(0.0275,), trials=1000, seed=15)
    return run_experiment(spec)


@timed
def ber_run():
    spec = ExperimentSpec("ber_after_k", qber_list=(0.0202,), trials=1000, k_iters=5,
                          schedule_list=("shuffled",), seed=16)
    return run_experiment(spec)


def rmse(recs):
    return float(np.sqrt(np.mean([(r.qber_estimated - r.qber_realized) ** 2 for r in recs])))


class TestEstimation:
    def test_c1_estimator_ordering(self):
        records, secs = est_run()
        by = group(records, "algorithm")
        multi, single, samp = (rmse(by[(k,)]) for k in
                               ("multi_syndrome", "single_syndrome", "sampling"))
        ok = multi < single < samp and secs < 300
        assert report(1, ok, f"rmse multi={multi:.5f} single={single:.5f} "
                             f"sampling={samp:.5f}", secs)

    def test_c2_estimator_consistency(self):
        records, secs = est_run()
        multi = group(records, "algorithm")[("multi_syndrome",)]
        hits = np.mean([abs(r.qber_estimated - r.qber_realized) <= 0.002 + 1e-12
                        for r in multi])
        assert report(2, hits >= 0.95, f"within 0.002 in {hits:.1%} of {len(multi)} trials")


class TestDecoding:
    def test_c3_iteration_reduction(self):
        records, secs = qber_run()
        by = group(records, "qber_injected", "algorithm")
        parts, ok = [], secs < 600
        for q in (0.02, 0.025, 0.03):
            for single, multi in SCHEDULES:
                a = iterations(by[(q, single)]).mean()
                b = iterations(by[(q, multi)]).mean()
                cut = 1 - b / a
                ok &= cut >= 0.30
                parts.append(f"{q}:{multi} {cut:.0%}")
        assert report(3, ok, "reduction " + ", ".join(parts), secs)

    def test_c4_monotone_in_u(self):
        records, secs = u_run()
        by = group(records, "algorithm", "u")
        ok, parts = True, []
        for single, multi in SCHEDULES:
            seq = [iterations(by[(single, 1)])] + [iterations(by[(multi, u)])
                                                  for u in range(2, 6)]
            for a, b in zip(seq, seq[1:]):
                diff = b - a
                se = diff.std(ddof=1) / np.sqrt(len(diff))
                ok &= diff.mean() <= se
            parts.append(multi + " " + "/".join(f"{s.mean():.1f}" for s in seq))
        assert report(4, ok, "mean iterations u=1..5: " + ", ".join(parts), secs)

    def test_c5_wave_effect(self):
        records, secs = wave_run()
        by = group(records, "qber_injected", "algorithm")
        qs = sorted({r.qber_injected for r in records})
        ok, parts = True, []
        for _, multi in SCHEDULES:
            comp = [iterations(by[(q, multi + ":compact")]).mean() for q in qs]
            sep = [iterations(by[(q, multi + ":separated")]).mean() for q in qs]
            ok &= all(s <= c for s, c in zip(sep, comp))
            ok &= any(s < c for s, c in zip(sep, comp))
            parts.append(multi + " " + "/".join(f"{s:.1f}<{c:.1f}" for s, c in zip(sep, comp)))
        assert report(5, ok, "separated vs compact: " + ", ".join(parts), secs)

    def test_c6_success_rate(self):
        records, secs = success_run()
        by = group(records, "algorithm")
        single = np.mean([np.mean([r.success for r in by[(s,)]]) for s, _ in SCHEDULES])
        multi = np.mean([np.mean([r.success for r in by[(m,)]]) for _, m in SCHEDULES])
        ok = multi >= 0.85 and single <= 0.65 and multi - single >= 0.25
        assert report(6, ok, f"success multi={multi:.1%} single={single:.1%}", secs)

    def test_c7_ber_separation(self):
        records, secs = ber_run()
        by = group(records, "algorithm")
        sbp = sum(r.error_bits for r in by[("SBP",)]) / (len(by[("SBP",)]) * 10000)
        msbp = sum(r.error_bits for r in by[("MSBP",)]) / (len(by[("MSBP",)]) * 10000)
        ratio = sbp / msbp if msbp else float("inf")
        assert report(7, ratio >= 100, f"BER SBP={sbp:.3g} MSBP={msbp:.3g} ratio={ratio:.3g}",
                      secs)

    def test_c8_cycle_trap(self):
        t0 = time.perf_counter()
        fam, x, y, e = cycle_trap_case(1)
        res = decode(y, e, fam, compute_syndromes(x, fam), "flooding", 100, record_soft=True)
        s = res.soft_history
        trapped = (not res.success and res.iterations_used == 100
                   and bool(np.all(s[:, 1] * s[:, 3] < 0)))
        fam3, x, y, e = cycle_trap_case(3)
        rescued = []
        for schedule in ("flooding", "shuffled", "layered"):
            r = decode(y, e, fam3, compute_syndromes(x, fam3), schedule, 100)
            rescued.append(r.success and r.iterations_used <= 5
                           and np.array_equal(r.corrected_key, x))
        assert report(8, trapped and all(rescued),
                      f"single trapped={trapped}, u=3 rescued={rescued}",
                      time.perf_counter() - t0)


class TestExactSuites:
    def test_c9_property_suites(self):
        t0 = time.perf_counter()
        try:
            checked = self._property_suites()
        except AssertionError as exc:
            report(9, False, f"property check failed: {exc}", time.perf_counter() - t0)
            raise
        report(9, True, f"500 recompositions, d<=12 enumeration, {checked} successful "
                        "keys equal, alist and CSV byte identity", time.perf_counter() - t0)

    def _property_suites(self):
        rng = np.random.default_rng(9)
        recompose = 0
        while recompose < 500:
            m = int(rng.integers(1, 12))
            dense = rng.integers(0, 2, (m, m + int(rng.integers(0, 12))), dtype=np.uint8)
            if gf2_rank(dense) < m:
                continue
            sf = systematic_decompose(ParityCheckMatrix.from_dense(dense))
            assert np.array_equal(sf.recompose(), dense)
            recompose += 1

        for d in range(1, 13):
            for e in np.linspace(0, 0.5, 26):
                brute = sum(e ** sum(p) * (1 - e) ** (d - sum(p))
                            for p in itertools.product((0, 1), repeat=d) if sum(p) % 2)
                assert abs(odd_error_prob(e, d) - brute) < 1e-12

        checked = 0
        for run in (qber_run, u_run, wave_run, success_run, ber_run):
            for r in run()[0]:
                if r.success:
                    assert r.end_to_end_ok is True, f"key mismatch in {r.algorithm}"
                    checked += 1

        for _ in range(200):
            dense = rng.integers(0, 2, (int(rng.integers(1, 9)), int(rng.integers(1, 12))),
                                 dtype=np.uint8)
            text = write_alist(ParityCheckMatrix.from_dense(dense))
            assert write_alist(read_alist(text)) == text

        spec = ExperimentSpec("iterations_vs_qber", qber_list=(0.025,), trials=5, seed=3)
        assert records_to_csv_text(run_experiment(spec)) == \
            records_to_csv_text(run_experiment(spec))
        return checked

    def test_c10_efficiency_arithmetic(self):
        f = reconciliation_efficiency(2000, 10000, 0.02, 1.0)
        rng = np.random.default_rng(10)
        while True:
            dense = rng.integers(0, 2, (6, 14), dtype=np.uint8)
            if gf2_rank(dense) == 6:
                break
        H = ParityCheckMatrix.from_dense(dense)
        single = leakage_audit(CodeFamily.single(H))
        dup = leakage_audit(CodeFamily((H, H, H), CodeFamily.single(H).independent_positions))
        ok = abs(f - 1.4140) <= 5e-4 and single == (6, 1.0) and dup == (6, 1.0)
        assert report(10, ok, f"f={f:.5f} alpha single={single[1]} duplicate={dup[1]}")


if __name__ == "__main__":
    warnings.simplefilter("ignore", InfeasibleRate)
    for cls in (TestEstimation, TestDecoding, TestExactSuites):
        obj = cls()
        for name in sorted(n for n in dir(cls) if n.startswith("test_")):
            try:
                getattr(obj, name)()
            except AssertionError:
                pass
    sys.exit(0 if all("PASS" in line for line in RESULTS.values()) else 1)
