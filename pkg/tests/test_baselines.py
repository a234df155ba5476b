import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bwkm.baselines import (coreset_epsilon, grid_partition, grid_rpkm, kmpp_init, lloyd_full,
                            minibatch)
from bwkm.lloyd import DistanceLedger, WeightedSet, weighted_error
from bwkm.oracles import brute_force_optimum, exact_error, nearest_labels
from bwkm.seeding import forgy, make_rng

LINE = np.array([[0.0], [1.0], [9.0], [10.0]])


class TestLloydFull:
    def test_line_converges_to_pairs(self):
        for s in range(10):
            C, rec = lloyd_full(LINE, 2, "kmpp", rng=make_rng(s))
            assert rec.final_error == pytest.approx(1.0)
            np.testing.assert_allclose(np.sort(C.ravel()), [0.5, 9.5])

    def test_k_equals_n(self):
        X = np.random.default_rng(0).normal(size=(6, 2))
        for seeder in ("forgy", "kmpp"):
            _, rec = lloyd_full(X, 6, seeder, rng=make_rng(1))
            assert rec.final_error == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("seeder", ["forgy", "kmpp", "kmc2"])
    def test_monotone_and_ledger(self, seeder):
        X = np.random.default_rng(1).normal(size=(300, 2))
        led = DistanceLedger()
        _, rec = lloyd_full(X, 5, seeder, eps=0.0, rng=make_rng(2), ledger=led, test_mode=True)
        errs = [r.exact_error for r in rec.rows]
        assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))
        assert rec.distances == led.count
        rec.validate()
        passes = len(rec.rows)
        seed_cost = {"forgy": 0, "kmpp": 300 * 4, "kmc2": 200 * (1 + 2 + 3 + 4)}[seeder]
        assert led.count == seed_cost + passes * 300 * 5

    def test_unknown_seeder(self):
        with pytest.raises(ValueError):
            lloyd_full(LINE, 2, "random")

    def test_matches_brute_force_with_restarts(self):
        rng = np.random.default_rng(3)
        for inst in range(20):
            n = int(rng.integers(3, 9))
            K = int(rng.integers(1, 4))
            X = rng.normal(size=(n, 2))
            _, opt = brute_force_optimum(X, K)
            best = min(lloyd_full(X, K, "kmpp", eps=0.0, rng=make_rng(inst, r))[1].final_error
                       for r in range(50))
            assert best == pytest.approx(opt, abs=1e-9)


class TestKmppInit:
    def test_record(self):
        X = np.random.default_rng(4).normal(size=(100, 2))
        led = DistanceLedger()
        C, rec = kmpp_init(X, 4, make_rng(0), led)
        assert rec.stop_reason == "seeded" and led.count == 300
        assert rec.final_error == pytest.approx(exact_error(X, C))


class TestMinibatch:
    def test_full_batch_one_step_is_cluster_mean(self):
        X = np.random.default_rng(5).normal(size=(80, 2))
        C0 = forgy(X, 3, make_rng(7))
        C, _ = minibatch(X, 3, 80, 1, make_rng(7))
        lab = nearest_labels(X, C0)
        expected = np.array([X[lab == k].mean(axis=0) for k in range(3)])
        np.testing.assert_allclose(C, expected, rtol=0, atol=1e-12)

    def test_fresh_center_jumps_to_sample(self):
        X = np.random.default_rng(6).normal(size=(30, 2))
        rng = make_rng(8)
        C, rec = minibatch(X, 2, 1, 1, rng)
        # the single sample must coincide with the center it moved
        rng2 = make_rng(8)
        forgy(X, 2, rng2)
        sample = X[rng2.choice(30, size=1, replace=False)][0]
        assert np.any(np.all(C == sample, axis=1))

    def test_ledger_per_iteration(self):
        X = np.random.default_rng(7).normal(size=(200, 2))
        led = DistanceLedger(10)
        _, rec = minibatch(X, 4, 25, 6, make_rng(0), led)
        assert led.count == 10 + 6 * 25 * 4
        assert [r.distances for r in rec.rows] == [t * 100 for t in range(1, 7)]

    def test_budget_stops_early(self):
        X = np.random.default_rng(8).normal(size=(200, 2))
        _, rec = minibatch(X, 4, 25, None, make_rng(0), budget=1000)
        assert rec.distances <= 1000 and rec.stop_reason == "distance_budget"

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 5), st.integers(1, 40))
    def test_centers_stay_in_hull_box(self, seed, K, b):
        X = np.random.default_rng(seed).normal(size=(60, 2)) * 5
        C, _ = minibatch(X, K, b, 5, make_rng(seed))
        assert np.all(C >= X.min(axis=0) - 1e-9) and np.all(C <= X.max(axis=0) + 1e-9)

    def test_bad_batch(self):
        with pytest.raises(ValueError):
            minibatch(LINE, 2, 5, 1)


class TestGrid:
    def test_line_level_two(self):
        X = np.random.default_rng(9).uniform(size=(100, 1))
        assert grid_partition(X, 2).n_cells <= 4

    def test_levels_nest(self):
        X = np.random.default_rng(10).normal(size=(400, 2))
        prev = grid_partition(X, 1).labels(400)
        for level in range(2, 6):
            cur = grid_partition(X, level).labels(400)
            for c in np.unique(cur):
                assert np.unique(prev[cur == c]).size == 1
            prev = cur

    def test_fine_grid_is_exact(self):
        X = np.random.default_rng(11).normal(size=(40, 2))
        state = grid_partition(X, 30)
        assert state.n_cells == 40
        C = X[:3]
        assert weighted_error(WeightedSet.from_partition(state), C) == pytest.approx(
            exact_error(X, C), rel=1e-12)

    def test_guard(self):
        with pytest.raises(ValueError, match="guard"):
            grid_partition(np.zeros((3, 10)), 7)

    def test_rpkm_singleton_stop(self):
        X = np.random.default_rng(12).normal(size=(30, 1))
        C, rec = grid_rpkm(X, 2, 40, make_rng(0))
        assert rec.stop_reason == "singleton_cells"
        rec.validate()

    def test_coreset_inequality_small(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            X = rng.normal(size=(int(rng.integers(3, 9)), 2))
            _, opt = brute_force_optimum(X, 2)
            diag = float(np.linalg.norm(X.max(0) - X.min(0)))
            for level in (1, 2, 3):
                ws = WeightedSet.from_partition(grid_partition(X, level))
                eps = coreset_epsilon(level, len(X), diag, opt)
                for _ in range(10):
                    C = rng.uniform(X.min(0), X.max(0), size=(2, 2))
                    e = exact_error(X, C)
                    assert abs(weighted_error(ws, C) - e) <= eps * e + 1e-12

    def test_coreset_epsilon_formula(self):
        assert coreset_epsilon(1, 4, 2.0, 8.0) == pytest.approx((1 + (1 / 8) * 0.75) * 4 * 4 / 8)
        assert coreset_epsilon(2, 4, 2.0, 0.0) == float("inf")
