import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bwkm.baselines import lloyd_full
from bwkm.bench import (ExperimentConfig, MethodParams, format_summary, relative_error,
                        run_experiment, run_method, summarize, synthesize_mixture)
from bwkm.lloyd import DistanceLedger, WeightedSet, weighted_error
from bwkm.oracles import brute_force_optimum, exact_error, exact_error_fsum, full_lloyd_step
from bwkm.records import (COLUMNS, IterationRow, TrialRecord, dumps_csv, dumps_jsonl,
                          loads_jsonl, read_records, write_records)
from bwkm.seeding import make_rng


class TestRelativeError:
    def test_example(self):
        out = relative_error({"A": 2.0, "B": 2.2})
        assert out["A"] == 0 and out["B"] == pytest.approx(0.1)

    def test_all_equal(self):
        assert set(relative_error({"a": 3.0, "b": 3.0}).values()) == {0.0}

    @given(st.lists(st.floats(0.1, 1e6), min_size=1, max_size=6), st.floats(1e-3, 1e3))
    def test_scale_invariant(self, errs, lam):
        e = {str(i): v for i, v in enumerate(errs)}
        a = relative_error(e)
        b = relative_error({k: v * lam for k, v in e.items()})
        for k in e:
            assert a[k] == pytest.approx(b[k], rel=1e-9, abs=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            relative_error({"a": 0.0, "b": 1.0})


class TestBruteForce:
    def test_three_points(self):
        labels, opt = brute_force_optimum(np.array([[0.0], [1.0], [10.0]]), 2)
        assert opt == pytest.approx(0.5)
        assert labels[0] == labels[1] != labels[2]

    def test_n_equals_k(self):
        assert brute_force_optimum(np.random.default_rng(0).normal(size=(3, 2)), 3)[1] == 0.0

    def test_guard(self):
        with pytest.raises(ValueError, match="guard"):
            brute_force_optimum(np.zeros((30, 1)), 3)

    def test_matches_enumeration_oracle(self):
        # independent enumeration of every labelling with explicit means
        rng = np.random.default_rng(1)
        for _ in range(10):
            X = rng.normal(size=(6, 2))
            best = math.inf
            for lab in itertools.product(range(2), repeat=6):
                lab = np.array(lab)
                e = sum(math.fsum(((X[lab == k] - X[lab == k].mean(0)) ** 2).ravel())
                        for k in range(2) if np.any(lab == k))
                best = min(best, e)
            assert brute_force_optimum(X, 2)[1] == pytest.approx(best, abs=1e-12)

    def test_eight_points_against_restarts(self):
        X = np.random.default_rng(2).normal(size=(8, 2))
        _, opt = brute_force_optimum(X, 2)
        best = min(lloyd_full(X, 2, "kmpp", eps=0.0, rng=make_rng(3, r))[1].final_error
                   for r in range(200))
        assert best == pytest.approx(opt, abs=1e-9)


class TestExactError:
    def test_centers_at_points(self):
        X = np.random.default_rng(3).normal(size=(10, 3))
        assert exact_error(X, X) == 0.0

    def test_line(self):
        assert exact_error([[0.0], [1.0], [9.0], [10.0]], [[0.5], [9.5]]) == pytest.approx(1.0)

    def test_agrees_with_weighted_singletons(self):
        X = np.random.default_rng(4).normal(size=(500, 4))
        C = X[:7]
        assert exact_error(X, C) == pytest.approx(weighted_error(WeightedSet.unit(X), C),
                                                  rel=1e-12)
        assert exact_error_fsum(X, C) == pytest.approx(exact_error(X, C), rel=1e-12)

    def test_no_ledger(self):
        led = DistanceLedger()
        X = np.random.default_rng(5).normal(size=(20, 2))
        exact_error(X, X[:2])
        full_lloyd_step(X, X[:2])
        assert led.count == 0


class TestMixture:
    def test_zero_separation_single_blob(self):
        X, labels, means = synthesize_mixture(300, 2, 3, 0.0, make_rng(0))
        assert np.allclose(means, means[0])

    def test_pairwise_separation_and_balance(self):
        X, labels, means = synthesize_mixture(1003, 3, 5, 7.0, make_rng(1))
        D = np.linalg.norm(means[:, None] - means[None], axis=-1)
        assert D[~np.eye(5, dtype=bool)].min() >= 7.0 - 1e-9
        counts = np.bincount(labels)
        assert counts.max() - counts.min() <= 1

    def test_component_means_clt(self):
        n, K = 5000, 4
        X, labels, means = synthesize_mixture(n, 2, K, 20.0, make_rng(2))
        for k in range(K):
            dev = np.abs(X[labels == k].mean(axis=0) - means[k])
            assert np.all(dev <= 5 / math.sqrt(n / K))

    def test_separated_pair_error_and_bwkm(self):
        X, labels, means = synthesize_mixture(1000, 2, 2, 50.0, make_rng(3))
        within = float(((X - means[labels]) ** 2).sum())
        _, rec = lloyd_full(X, 2, "kmpp", rng=make_rng(4))
        assert rec.final_error == pytest.approx(within, rel=0.01)
        _, brec = run_method("bwkm", X, 2, 4)
        assert (brec.final_error - rec.final_error) / rec.final_error <= 0.01

    def test_reproducible(self):
        a = synthesize_mixture(100, 2, 3, 5.0, make_rng(9))[0]
        b = synthesize_mixture(100, 2, 3, 5.0, make_rng(9))[0]
        np.testing.assert_array_equal(a, b)

    def test_bad_args(self):
        with pytest.raises(ValueError):
            synthesize_mixture(2, 2, 3, 1.0, make_rng(0))


def _record():
    rec = TrialRecord("bwkm", "toy", 3, 7, budget=100, stop_reason="empty_boundary",
                      wall_ms=12.5)
    rec.rows = [IterationRow(0, 40, 1.25, None, 8, 3),
                IterationRow(1, 64, 0.1 + 0.2, 0.3000000000000001, 11, 0)]
    return rec


class TestRecords:
    def test_jsonl_round_trip(self):
        rec = _record()
        back = loads_jsonl(dumps_jsonl([rec]))
        assert back == [rec]
        assert back[0].rows[1].weighted_error == 0.1 + 0.2

    def test_columns(self):
        text = dumps_csv([_record()])
        assert text.splitlines()[0].split(",") == list(COLUMNS)

    def test_timing_off_by_default(self):
        assert '"wall_ms": null' in dumps_jsonl([_record()])
        assert '"wall_ms": 12.5' in dumps_jsonl([_record()], include_timing=True)

    def test_write_and_read(self, tmp_path):
        j, c = write_records([_record()], tmp_path / "out.jsonl")
        assert j.exists() and c.exists()
        assert read_records(j) == [_record()]

    def test_validate(self):
        rec = _record()
        rec.rows[1].distances = 40
        with pytest.raises(ValueError, match="increasing"):
            rec.validate()

    def test_unknown_schema(self):
        with pytest.raises(ValueError, match="schema"):
            loads_jsonl('{"schema": "other"}\n')


class TestExperiment:
    def _data(self):
        return {"mix": synthesize_mixture(600, 2, 3, 10.0, make_rng(5))[0]}

    def test_cardinality_and_budget(self):
        cfg = ExperimentConfig(ks=(3,), repetitions=2,
                               methods=("lloyd-forgy", "lloyd-kmpp", "minibatch-50", "bwkm"))
        recs = run_experiment(cfg, self._data())
        assert len(recs) == 8
        assert sum(r.method == "bwkm" for r in recs) == 2
        for seed in (0, 1):
            group = [r for r in recs if r.seed == seed]
            bw = next(r for r in group if r.method == "bwkm")
            assert bw.budget == min(r.distances for r in group if r.method != "bwkm")
            assert bw.distances <= bw.budget

    def test_byte_identical(self, tmp_path):
        out = []
        for i in range(2):
            cfg = ExperimentConfig(ks=(2, 3), repetitions=2, seed=4,
                                   methods=("lloyd-kmpp", "bwkm"),
                                   output=str(tmp_path / f"run{i}.jsonl"))
            run_experiment(cfg, self._data())
            out.append((tmp_path / f"run{i}.jsonl").read_bytes())
        assert out[0] == out[1]

    def test_parallel_matches_serial(self):
        base = dict(ks=(3,), repetitions=3, methods=("lloyd-kmpp", "bwkm"))
        a = run_experiment(ExperimentConfig(**base), self._data())
        b = run_experiment(ExperimentConfig(jobs=2, **base), self._data())
        assert dumps_jsonl(a) == dumps_jsonl(b)

    def test_summary_best_is_zero(self):
        cfg = ExperimentConfig(ks=(2, 3), repetitions=3,
                               methods=("lloyd-forgy", "lloyd-kmpp", "bwkm"))
        rows = summarize(run_experiment(cfg, self._data()))
        assert len(rows) == 6
        for k in (2, 3):
            group = [r for r in rows if r.k == k]
            assert min(r.rel_error_of_mean for r in group) == 0.0
        assert "relE_mean" in format_summary(rows)

    def test_fixed_policy(self):
        cfg = ExperimentConfig(ks=(3,), repetitions=1, methods=("bwkm",),
                               budget_policy="fixed", budget=5000)
        (rec,) = run_experiment(cfg, self._data())
        assert rec.budget == 5000 and rec.distances <= 5000

    @pytest.mark.parametrize("kw", [dict(repetitions=0), dict(budget_policy="x"),
                                    dict(methods=("nope",)), dict(ks=()),
                                    dict(budget_policy="fixed")])
    def test_bad_config(self, kw):
        with pytest.raises(ValueError):
            ExperimentConfig(**kw)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            run_method("nope", np.zeros((3, 1)), 1, 0)

    def test_method_params_budget_merge(self):
        cfg = MethodParams(stop=("budget:500", "boundary")).bwkm_config(3, 0, False, 800)
        assert cfg.stop.budget == 500
