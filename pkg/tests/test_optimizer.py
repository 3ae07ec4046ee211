import csv

import numpy as np
import pytest

from rdsep.optimizer import (OptimizationAborted, SearchConfig, derive_seed,
                             line_search, probe_rng,
                             random_directions_minimize, sample_search_vector,
                             scale_schedule, start_rng, verify_optimal_sigma)
from rdsep.testfunctions import rastrigin, sphere


def small_config(**overrides):
    defaults = dict(iterations=60, probes=4, starting_scale=2.0,
                    end_scale=0.0, subspace_dim=8, seed=123)
    defaults.update(overrides)
    return SearchConfig(**defaults)


class TestSearchConfig:
    def test_defaults_match_standard_setup(self):
        cfg = SearchConfig()
        assert cfg.iterations == 1000
        assert cfg.probes == 8
        assert cfg.starting_scale == 4.0
        assert cfg.end_scale == 0.0
        assert cfg.subspace_dim == 8
        assert cfg.line_search_exponents == (-8, 8)

    @pytest.mark.parametrize("kwargs", [
        dict(iterations=0),
        dict(probes=0),
        dict(starting_scale=-1.0),
        dict(end_scale=5.0),  # exceeds starting_scale
        dict(subspace_dim=0),
        dict(line_search_exponents=(1, 8)),  # must contain 0
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            SearchConfig(**kwargs)


class TestScaleSchedule:
    def test_boundary_start(self):
        cfg = SearchConfig(iterations=1000, starting_scale=4.0, end_scale=0.0)
        assert scale_schedule(0, cfg) == 4.0

    def test_boundary_end(self):
        cfg = SearchConfig(iterations=1000, starting_scale=4.0, end_scale=0.0)
        assert scale_schedule(1000, cfg) == 0.0

    def test_midpoint_quadratic(self):
        # end + (start - end) * (1 - 500/1000)^2 = 4 * 0.25
        cfg = SearchConfig(iterations=1000, starting_scale=4.0, end_scale=0.0)
        assert scale_schedule(500, cfg) == pytest.approx(1.0)

    def test_nonzero_end_scale(self):
        cfg = SearchConfig(iterations=100, starting_scale=3.0, end_scale=1.0)
        assert scale_schedule(0, cfg) == 3.0
        assert scale_schedule(100, cfg) == 1.0
        assert scale_schedule(50, cfg) == pytest.approx(1.0 + 2.0 * 0.25)

    def test_out_of_range_iteration(self):
        cfg = SearchConfig(iterations=10)
        with pytest.raises(ValueError):
            scale_schedule(11, cfg)
        with pytest.raises(ValueError):
            scale_schedule(-1, cfg)


class TestSampleSearchVector:
    def test_zero_scale_gives_zero_vector(self):
        v = sample_search_vector(16, small_config(), 0.0, probe_rng(1, 0, 0))
        assert np.all(v == 0.0)

    def test_exact_sparsity(self):
        cfg = small_config(subspace_dim=8)
        for m in range(20):
            v = sample_search_vector(32, cfg, 1.0, probe_rng(5, m, 0))
            assert np.count_nonzero(v) == 8

    def test_sparsity_clamped_to_dimension(self):
        cfg = small_config(subspace_dim=8)
        v = sample_search_vector(3, cfg, 1.0, probe_rng(5, 0, 0))
        assert np.count_nonzero(v) == 3

    def test_nonzero_entry_std_matches_scale(self):
        # Monte-Carlo estimate of the Gaussian parameter
        cfg = small_config(subspace_dim=8)
        rng = probe_rng(9, 0, 0)
        values = []
        while len(values) < 100_000:
            v = sample_search_vector(32, cfg, 4.0, rng)
            values.extend(v[v != 0.0])
        std = np.std(values)
        assert abs(std - 4.0) / 4.0 < 0.02

    def test_indices_cover_all_positions(self):
        cfg = small_config(subspace_dim=4)
        hit = np.zeros(16, dtype=bool)
        for m in range(200):
            v = sample_search_vector(16, cfg, 1.0, probe_rng(2, m, 0))
            hit |= v != 0.0
        assert hit.all()


class TestLineSearch:
    def test_quadratic_minimum_at_four_v(self):
        # f minimized exactly at x + 4v: best exponent is 2
        v = np.array([1.0, -2.0, 0.5])
        x = np.array([0.3, 0.1, -0.2])
        target = x + 4.0 * v

        def f(p):
            return float(np.sum((p - target) ** 2))

        # brute-force oracle over all 17 exponents
        oracle = min(range(-8, 9), key=lambda k: (f(x + 2.0 ** k * v), abs(k), k))
        assert oracle == 2
        k_best, f_best = line_search(f, x, v)
        assert k_best == 2
        assert f_best == pytest.approx(f(x + 4.0 * v))

    def test_monotone_increasing_direction_prefers_small_steps(self):
        x = np.zeros(2)
        v = np.array([1.0, 0.0])

        def f(p):
            return float(p[0])  # strictly increasing along +v

        k_best, _ = line_search(f, x, v)
        assert k_best <= 0

    def test_evaluates_all_seventeen_candidates(self):
        calls = []

        def f(p):
            calls.append(p.copy())
            return float(np.sum(p ** 2))

        line_search(f, np.ones(3), np.ones(3) * 0.1)
        assert len(calls) == 17

    def test_tie_breaks_toward_small_then_negative_exponent(self):
        def f(p):
            return 0.0  # all candidates tie

        k_best, _ = line_search(f, np.zeros(1), np.ones(1))
        assert k_best == 0

        def g(p):
            # k = -1 and k = +1 tie strictly below everything else
            step = p[0]
            if step in (0.5, 2.0):
                return -1.0
            return 1.0

        k_best, _ = line_search(g, np.zeros(1), np.ones(1))
        assert k_best == -1


class TestRandomDirectionsMinimize:
    def test_constant_objective_never_updates(self):
        res = random_directions_minimize(lambda x: 1.0, np.ones(4), small_config())
        assert np.array_equal(res.x, np.ones(4))
        assert res.trace.n_accepted == 0
        assert res.fun == 1.0

    def test_final_value_never_exceeds_start(self):
        cfg = small_config(iterations=40)
        x0 = start_rng(7).uniform(-4, 4, 8)
        res = random_directions_minimize(sphere, x0, cfg)
        assert res.fun <= sphere(x0)

    def test_trace_is_monotone_non_increasing(self):
        for seed in range(5):
            cfg = small_config(seed=seed, iterations=80)
            x0 = start_rng(seed).uniform(-4, 4, 6)
            res = random_directions_minimize(rastrigin if seed % 2 else sphere,
                                             x0, cfg)
            fb = res.trace.f_best
            assert all(fb[i + 1] <= fb[i] for i in range(len(fb) - 1))

    def test_bit_identical_reruns(self):
        cfg = small_config(iterations=50)
        x0 = np.array([1.0, -2.0, 0.5, 3.0])
        r1 = random_directions_minimize(sphere, x0, cfg)
        r2 = random_directions_minimize(sphere, x0, cfg)
        assert np.array_equal(r1.x, r2.x)
        assert r1.fun == r2.fun
        assert r1.trace.f_best == r2.trace.f_best
        assert r1.trace.k_best == r2.trace.k_best

    def test_worker_count_does_not_change_result(self):
        cfg = small_config(iterations=40)
        x0 = np.array([2.0, -1.0, 0.7, 1.5, -0.4, 0.9])
        serial = random_directions_minimize(sphere, x0, cfg, workers=1)
        threaded = random_directions_minimize(sphere, x0, cfg, workers=4)
        assert np.array_equal(serial.x, threaded.x)
        assert serial.trace.f_best == threaded.trace.f_best

    def test_evaluation_budget(self):
        counter = {"n": 0}

        def counted(x):
            counter["n"] += 1
            return sphere(x)

        cfg = small_config(iterations=70)
        res = random_directions_minimize(counted, np.full(8, 2.0), cfg)
        trace = res.trace
        expected_search = cfg.iterations * cfg.probes + 17 * trace.n_accepted
        assert trace.search_evaluations == expected_search
        # plus the single baseline evaluation of the starting point
        assert counter["n"] == expected_search + 1

    def test_non_finite_probe_values_never_accepted(self):
        def nasty(x):
            s = float(np.sum(x ** 2))
            return float("nan") if s < 1.0 else s

        res = random_directions_minimize(nasty, np.full(4, 1.0),
                                         small_config(iterations=50))
        assert np.isfinite(res.fun)
        assert 1.0 <= res.fun <= 4.0
        fb = res.trace.f_best
        assert all(fb[i + 1] <= fb[i] for i in range(len(fb) - 1))

    def test_objective_exception_attaches_partial_trace(self):
        calls = {"n": 0}

        def flaky(x):
            calls["n"] += 1
            if calls["n"] > 30:
                raise RuntimeError("sensor unplugged")
            return float(np.sum(x ** 2))

        with pytest.raises(OptimizationAborted) as info:
            random_directions_minimize(flaky, np.ones(4), small_config())
        assert info.value.trace.n_iterations >= 1

    def test_trace_csv_round_trip(self, tmp_path):
        res = random_directions_minimize(sphere, np.ones(4), small_config(iterations=30))
        path = tmp_path / "trace.csv"
        res.trace.write_csv(path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 30
        assert rows[0]["iteration"] == "0"
        assert set(rows[0]) == {"iteration", "scale", "f_best", "accepted", "k_best"}
        f_values = [float(r["f_best"]) for r in rows]
        assert f_values == pytest.approx(res.trace.f_best)


class TestDeriveSeed:
    def test_distinct_across_index_and_tag(self):
        seeds = {derive_seed(3, "a", i) for i in range(50)}
        assert len(seeds) == 50
        assert derive_seed(3, "a", 0) != derive_seed(3, "b", 0)

    def test_stable(self):
        assert derive_seed(99, "runs", 7) == derive_seed(99, "runs", 7)


class TestVerifyOptimalSigma:
    def test_one_dimensional_argmax(self):
        rng = np.random.default_rng(42)
        grid = [0.25, 0.5, 1.0, 2.0, 4.0]
        probs = verify_optimal_sigma(1.0, 1, grid, 200_000, rng,
                                     region_radius=0.2)
        assert max(probs, key=probs.get) == 1.0

    def test_four_dimensional_argmax(self):
        # predicted optimum: distance / sqrt(N) = 2 / 2 = 1
        rng = np.random.default_rng(43)
        grid = [0.25, 0.5, 1.0, 2.0, 4.0]
        probs = verify_optimal_sigma(2.0, 4, grid, 400_000, rng,
                                     region_radius=0.7)
        assert max(probs, key=probs.get) == 1.0

    def test_degenerate_sigma_cannot_reach_region(self):
        rng = np.random.default_rng(44)
        probs = verify_optimal_sigma(1.0, 2, [0.0], 10_000, rng,
                                     region_radius=0.3)
        assert probs[0.0] == 0.0
