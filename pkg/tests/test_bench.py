import csv
import io
import json

import numpy as np
import pytest

from mmqkd import bench
from mmqkd.bench import (CSV_HEADER, ExperimentSpec, aggregate_ber, apply_bsc, gen_key,
                         records_to_csv_text, run_experiment, write_csv)
from mmqkd.codes import DegreeSpec, build_base_matrix, derive_family


@pytest.fixture(scope="module")
def small_families():
    spec = DegreeSpec.from_profile(1000, 200, {2: 0.3, 3: 0.5, 8: 0.2}, seed=2)
    base = build_base_matrix(spec, seed=2)
    return {layout: derive_family(base, 3, layout, seed=2)
            for layout in ("compact", "separated")}


def small_spec(experiment, **kw):
    args = dict(n=1000, u=3, qber_list=(0.02,), trials=3, max_iterations=30, seed=5)
    args.update(kw)
    return ExperimentSpec(experiment, **args)


class TestKeysAndChannel:
    def test_gen_key_deterministic(self):
        assert np.array_equal(gen_key(100, 3), gen_key(100, 3))

    def test_gen_key_seeds_differ(self):
        assert (gen_key(64, 1) != gen_key(64, 2)).any()

    def test_gen_key_balance(self):
        assert abs(int(gen_key(10000, 7).sum()) - 5000) <= 250

    def test_gen_key_length(self):
        with pytest.raises(ValueError):
            gen_key(0, 1)

    @pytest.mark.parametrize("model", ["bernoulli", "exact_count"])
    def test_zero_rate(self, model):
        x = gen_key(500, 1)
        y, r = apply_bsc(x, 0.0, model, 2)
        assert np.array_equal(x, y) and r == 0

    @pytest.mark.parametrize("model", ["bernoulli", "exact_count"])
    def test_full_rate(self, model):
        x = gen_key(500, 1)
        y, r = apply_bsc(x, 1.0, model, 2)
        assert np.array_equal(y, 1 - x) and r == 1

    def test_exact_count(self):
        x = gen_key(10000, 1)
        y, r = apply_bsc(x, 0.0166, "exact_count", 3)
        assert int((x != y).sum()) == 166 and r == 166 / 10000

    def test_bernoulli_rate(self):
        x = gen_key(100000, 1)
        _, r = apply_bsc(x, 0.03, "bernoulli", 4)
        assert abs(r - 0.03) < 5 * np.sqrt(0.03 * 0.97 / 100000)

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            apply_bsc(gen_key(10, 1), 1.5)


class TestSpec:
    def test_invariants(self):
        with pytest.raises(ValueError):
            ExperimentSpec("success_rate", trials=0)
        with pytest.raises(ValueError):
            ExperimentSpec("success_rate", qber_list=(0.5,))
        with pytest.raises(ValueError):
            ExperimentSpec("nonsense")


class TestRunExperiment:
    def test_cardinality(self, small_families):
        spec = small_spec("success_rate", schedule_list=("flooding",), include_single=False)
        recs = list(run_experiment(spec, small_families))
        assert len(recs) == 3
        assert [r.trial_id for r in recs] == [0, 1, 2]

    def test_count_all_algorithms(self, small_families):
        spec = small_spec("iterations_vs_qber", qber_list=(0.01, 0.02))
        recs = list(run_experiment(spec, small_families))
        assert len(recs) == 3 * 2 * 6
        assert {r.algorithm for r in recs} == {"BP", "SBP", "LBP", "MBP", "MSBP", "MLBP"}

    def test_csv_deterministic(self, small_families):
        spec = small_spec("iterations_vs_qber")
        a = records_to_csv_text(run_experiment(spec, small_families))
        b = records_to_csv_text(run_experiment(spec, small_families))
        assert a == b

    def test_csv_format(self, small_families):
        spec = small_spec("iterations_vs_qber", schedule_list=("layered",))
        text = records_to_csv_text(run_experiment(spec, small_families))
        rows = list(csv.reader(io.StringIO(text)))
        assert text.splitlines()[0] == ",".join(CSV_HEADER)
        for row in rows[1:]:
            assert row[CSV_HEADER.index("success")] in ("0", "1")
            assert len(row) == len(CSV_HEADER)

    def test_key_reuse_across_algorithms(self, small_families):
        spec = small_spec("iterations_vs_qber")
        recs = list(run_experiment(spec, small_families))
        by_trial = {}
        for r in recs:
            by_trial.setdefault(r.trial_id // 6, set()).add(r.qber_realized)
        assert all(len(v) == 1 for v in by_trial.values())

    def test_adding_points_keeps_trials(self, small_families):
        one = list(run_experiment(small_spec("iterations_vs_qber", qber_list=(0.02,)),
                                  small_families))
        two = list(run_experiment(small_spec("iterations_vs_qber", qber_list=(0.02, 0.01)),
                                  small_families))
        key = lambda r: (r.algorithm, r.qber_realized, r.iterations_used, r.success)
        assert [key(r) for r in one] == [key(r) for r in two[:len(one)]]

    def test_exact_count_realized(self, small_families):
        spec = small_spec("iterations_vs_qber", qber_list=(0.0166, 0.02))
        for r in run_experiment(spec, small_families):
            assert r.qber_realized == round(r.qber_injected * 1000) / 1000

    def test_success_implies_zero_ber(self, small_families):
        spec = small_spec("iterations_vs_qber", qber_list=(0.015, 0.03), trials=4)
        for r in run_experiment(spec, small_families):
            assert 0 <= r.ber_final <= 1
            if r.success:
                assert r.ber_final == 0 and r.end_to_end_ok

    def test_conservation(self, small_families):
        spec = small_spec("corrections_per_iter", qber_list=(0.02,), trials=5)
        for r in run_experiment(spec, small_families):
            if r.success:
                initial = round(r.qber_realized * 1000)
                assert sum(r.n_c_list) - sum(r.n_m_list) == initial

    def test_aggregate_ber_two_paths(self, small_families):
        spec = small_spec("ber_after_k", qber_list=(0.025,), trials=6, k_iters=3,
                          schedule_list=("shuffled",))
        recs = list(run_experiment(spec, small_families))
        for alg in ("SBP", "MSBP"):
            sub = [r for r in recs if r.algorithm == alg]
            assert all(r.iterations_used <= 3 for r in sub)
            from_rates = float(np.mean([r.ber_final for r in sub]))
            assert aggregate_ber(sub, 1000) == pytest.approx(from_rates, rel=1e-12)

    def test_est_accuracy_methods(self, small_families):
        spec = small_spec("est_accuracy", trials=4)
        recs = list(run_experiment(spec, small_families))
        assert [r.algorithm for r in recs[:3]] == ["multi_syndrome", "single_syndrome",
                                                   "sampling"]
        assert all(r.iterations_used == 0 for r in recs)
        assert recs[2].leakage_bits == 500

    def test_iterations_vs_u(self, small_families):
        spec = small_spec("iterations_vs_u", u_list=(1, 2, 3), schedule_list=("flooding",))
        recs = list(run_experiment(spec, small_families))
        assert [r.u for r in recs[:3]] == [1, 2, 3]

    def test_wave_effect_labels(self, small_families):
        spec = small_spec("wave_effect", schedule_list=("flooding",))
        recs = list(run_experiment(spec, small_families))
        assert {r.algorithm for r in recs} == {"MBP:compact", "MBP:separated"}

    def test_iters_file(self, small_families):
        spec = small_spec("corrections_per_iter", trials=2, schedule_list=("flooding",))
        out, it = io.StringIO(), io.StringIO()
        n = write_csv(run_experiment(spec, small_families), out, it)
        assert n == 4
        lines = it.getvalue().splitlines()
        assert lines[0] == "trial_id,iteration,n_c,n_m"

    def test_manifest(self, tmp_path, small_families):
        spec = small_spec("success_rate")
        bench.write_manifest(tmp_path / "m.json", spec, small_families)
        info = json.loads((tmp_path / "m.json").read_text())
        assert info["spec"]["seed"] == 5 and "key_reuse" in info

    def test_partial_results_flushed(self, small_families):
        def broken():
            yield from run_experiment(small_spec("success_rate", trials=2), small_families)
            raise RuntimeError("worker died")

        out = io.StringIO()
        with pytest.raises(RuntimeError):
            write_csv(broken(), out)
        assert len(out.getvalue().splitlines()) == 1 + 2 * 6
