import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surge_al.active_learning import (
    ALConfig,
    PoolExhausted,
    PoolState,
    acquire_top_variance,
    al_loop,
    iteration_seed,
    partition,
    random_baseline_loop,
    run_campaign,
    sample_candidates,
    top_k_by_variance,
)
from surge_al.ensemble import predict_pooled_batch, train_ensemble
from surge_al.nnet import Architecture, TrainConfig
from surge_al.pump_data import GeneratorConfig, generate_synthetic, samples_to_arrays

SMALL = dict(arch=Architecture(5, (8, 8)), train_config=TrainConfig(epochs=3, batch_size=16),
             n_members=2)


@pytest.fixture(scope="module")
def data():
    return samples_to_arrays(generate_synthetic(GeneratorConfig(n_samples=300, seed=7)))


class TestPartition:
    def test_sizes(self):
        s = partition(1000, 0.2, 50, seed=0)
        assert (s.test_idx.size, s.train_idx.size, s.pool_idx.size) == (200, 50, 750)

    def test_deterministic(self):
        a, b = partition(500, 0.3, 20, 4), partition(500, 0.3, 20, 4)
        for f in ("train_idx", "pool_idx", "test_idx"):
            assert np.array_equal(getattr(a, f), getattr(b, f))
        c = partition(500, 0.3, 20, 5)
        assert not np.array_equal(a.test_idx, c.test_idx)

    @settings(max_examples=100)
    @given(n=st.integers(10, 2000), tf=st.floats(0.05, 0.9), init=st.integers(1, 50),
           seed=st.integers(0, 2**31))
    def test_disjoint_cover(self, n, tf, init, seed):
        n_test = round(tf * n)
        if n_test < 1 or init >= n - n_test:
            with pytest.raises(ValueError):
                partition(n, tf, init, seed)
            return
        s = partition(n, tf, init, seed)
        allidx = np.concatenate([s.train_idx, s.pool_idx, s.test_idx])
        assert np.array_equal(np.sort(allidx), np.arange(n))
        assert s.train_idx.size == init and s.test_idx.size == n_test

    def test_infeasible(self):
        with pytest.raises(ValueError):
            partition(10, 0.5, 5, 0)
        with pytest.raises(ValueError):
            partition(10, 1.0, 1, 0)

    def test_move_to_train(self):
        s = PoolState(np.array([0, 1]), np.array([2, 3, 4]), np.array([5]))
        s.move_to_train([4, 2])
        assert list(s.train_idx) == [0, 1, 4, 2] and list(s.pool_idx) == [3]
        with pytest.raises(ValueError):
            s.move_to_train([5])
        with pytest.raises(ValueError):
            s.move_to_train([3, 3])


class TestCandidates:
    def test_count_and_distinct(self, rng):
        c = sample_candidates(np.arange(1000), 5, 50, rng)
        assert c.size == 250 and np.unique(c).size == 250
        assert np.all(np.isin(c, np.arange(1000)))

    def test_clamped_to_pool(self, rng):
        c = sample_candidates(np.arange(100, 130), 5, 50, rng)
        assert np.array_equal(np.sort(c), np.arange(100, 130))

    def test_empty_pool(self, rng):
        with pytest.raises(PoolExhausted):
            sample_candidates(np.array([], dtype=int), 5, 50, rng)

    def test_uniform(self, rng):
        counts = np.zeros(100)
        for _ in range(10_000):
            counts[sample_candidates(np.arange(100), 1, 10, rng)] += 1
        # each index is drawn with probability 0.1 per call
        expected = 1000.0
        sigma = np.sqrt(10_000 * 0.1 * 0.9)
        assert np.all(np.abs(counts - expected) < 4 * sigma)
        assert abs(counts.sum() - 100_000) == 0


class TestTopK:
    def test_two_points(self):
        assert list(top_k_by_variance([0, 1], [0.1, 0.9], 1)) == [1]

    def test_ties_prefer_lower_index(self):
        assert list(top_k_by_variance([7, 3, 5], [1.0, 1.0, 1.0], 2)) == [3, 5]

    def test_matches_sort_oracle(self, rng):
        cands = rng.permutation(500)[:200]
        var = rng.random(200)
        got = top_k_by_variance(cands, var, 50)
        oracle = [c for _, c in sorted(zip(-var, cands))][:50]
        assert list(got) == oracle

    def test_k_larger_than_candidates(self):
        assert list(top_k_by_variance([4, 2], [0.5, 0.7], 10)) == [2, 4]

    def test_acquire_equals_full_sort(self, rng):
        X = rng.normal(size=(120, 5))
        ens = train_ensemble(X[:30], rng.normal(size=30), TrainConfig(epochs=2), 3,
                             Architecture(5, (8,)))
        cands = rng.permutation(120)[:60]
        got = acquire_top_variance(ens, X, cands, 10)
        _, var = predict_pooled_batch(ens, X)
        order = sorted(cands, key=lambda i: (-var[i], i))
        assert list(got) == order[:10]
        assert np.all(var[got].min() >= np.delete(var[cands], np.isin(cands, got).nonzero()[0]))

    def test_iteration_seed(self):
        assert iteration_seed(3, 1) == iteration_seed(3, 1)
        assert iteration_seed(3, 1) != iteration_seed(3, 2)
        assert 0 <= iteration_seed(3, 1) < 2**31


class TestLoop:
    def test_zero_iterations(self, data):
        curve, _ = al_loop(*data, ALConfig(initial_train_size=20, batch_k=10, iterations=0, **SMALL))
        assert len(curve.records) == 1
        r = curve.records[0]
        assert r.iteration == 0 and r.train_size == 20 and r.selected_idx == []

    def test_bookkeeping(self, data):
        seen = []
        cfg = ALConfig(initial_train_size=20, batch_k=10, iterations=4, seed=1, **SMALL)
        curve, _ = al_loop(*data, cfg, observer=lambda r, s: seen.append(s))
        assert [r.train_size for r in curve.records] == [20 + 10 * i for i in range(5)]
        assert all(len(r.selected_idx) == 10 for r in curve.records[1:])
        assert len(seen) == 5
        for prev, cur in zip(seen, seen[1:]):
            assert np.array_equal(prev.test_idx, cur.test_idx)
            assert set(prev.train_idx) < set(cur.train_idx)
        assert curve.stop_reason == "completed"

    def test_deterministic(self, data):
        cfg = ALConfig(initial_train_size=20, batch_k=10, iterations=2, seed=3, **SMALL)
        for strat in ("top_variance", "random"):
            a, ea = run_campaign(*data, cfg, strat)
            b, eb = run_campaign(*data, cfg, strat)
            assert a.records == b.records
            assert np.array_equal(ea.members[1].theta, eb.members[1].theta)

    def test_strategies_share_initial_record(self, data):
        cfg = ALConfig(initial_train_size=20, batch_k=10, iterations=2, seed=2, **SMALL)
        a, _ = al_loop(*data, cfg)
        b, _ = random_baseline_loop(*data, cfg)
        assert a.records[0] == b.records[0]
        assert a.records[1].selected_idx != b.records[1].selected_idx

    def test_budget_caps_last_batch(self, data):
        cfg = ALConfig(initial_train_size=20, batch_k=10, total_budget=45, seed=0, **SMALL)
        curve, _ = al_loop(*data, cfg)
        assert [r.train_size for r in curve.records] == [20, 30, 40, 45]

    def test_pool_exhaustion_stops_early(self):
        X, y = samples_to_arrays(generate_synthetic(GeneratorConfig(n_samples=100, seed=1)))
        cfg = ALConfig(initial_train_size=20, batch_k=25, total_budget=200, **SMALL)
        curve, _ = al_loop(X, y, cfg)
        assert [r.train_size for r in curve.records] == [20, 45, 70, 80]
        assert curve.stop_reason == "pool exhausted"
        assert curve.final_state.pool_idx.size == 0
        assert np.isnan(curve.records[-1].mean_pool_variance)

    def test_infeasible_iterations(self, data):
        cfg = ALConfig(initial_train_size=20, batch_k=100, iterations=5, **SMALL)
        with pytest.raises(ValueError, match="iterations"):
            al_loop(*data, cfg)

    def test_unknown_strategy(self, data):
        with pytest.raises(ValueError):
            run_campaign(*data, ALConfig(**SMALL), "greedy")

    @pytest.mark.parametrize("kw", [{"batch_k": 0}, {"candidate_multiplier": 0},
                                    {"initial_train_size": 1}, {"iterations": -1},
                                    {"n_members": 0}, {"test_fraction": 1.0},
                                    {"total_budget": 10, "initial_train_size": 20}])
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            ALConfig(**kw)

    def test_cold_start_option(self, data):
        cfg = ALConfig(initial_train_size=20, batch_k=10, iterations=1, warm_start=False, **SMALL)
        curve, _ = al_loop(*data, cfg)
        assert len(curve.records) == 2


@pytest.mark.slow
def test_homoscedastic_control_bands_overlap():
    """Without noise structure neither strategy should separate from the other."""
    X, y = samples_to_arrays(generate_synthetic(
        GeneratorConfig(n_samples=1500, seed=11, noise_scale=0.02, heteroscedastic=False)))
    curves = {"top_variance": [], "random": []}
    for seed in range(1, 6):
        cfg = ALConfig(initial_train_size=30, batch_k=30, iterations=6, seed=seed, n_members=3,
                       arch=Architecture(5, (32, 32)), train_config=TrainConfig(epochs=60))
        for strat in curves:
            curve, _ = run_campaign(X, y, cfg, strat)
            curves[strat].append([r.test_rmse for r in curve.records])
    a = np.array(curves["top_variance"])
    b = np.array(curves["random"])
    gap = np.abs(a.mean(0) - b.mean(0))
    assert np.all(gap <= a.std(0, ddof=1) + b.std(0, ddof=1))
