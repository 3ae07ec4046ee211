"""Standard global-optimization test functions and a success-rate benchmark."""

from __future__ import annotations

import numpy as np

from .optimizer import SearchConfig, derive_seed, random_directions_minimize, start_rng


def sphere(x: np.ndarray) -> float:
    """Convex baseline: squared Euclidean norm, minimum 0 at the origin."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.dot(x, x))


def rastrigin(x: np.ndarray) -> float:
    """Highly multimodal lattice of local minima; global minimum 0 at the origin."""
    x = np.asarray(x, dtype=np.float64)
    return float(10.0 * x.size + np.sum(x * x - 10.0 * np.cos(2.0 * np.pi * x)))


def ackley(x: np.ndarray) -> float:
    """Nearly flat outer region with a deep central funnel; minimum 0 at the origin."""
    x = np.asarray(x, dtype=np.float64)
    return float(
        -20.0 * np.exp(-0.2 * np.sqrt(np.mean(x * x)))
        - np.exp(np.mean(np.cos(2.0 * np.pi * x)))
        + 20.0
        + np.e
    )


# name -> (function, dimension, success threshold on the final objective value)
BENCHMARKS = {
    "sphere": (sphere, 16, 1e-4),
    "rastrigin": (rastrigin, 2, 1.0),
    "ackley": (ackley, 2, 1.0),
}


def run_optimizer_benchmark(runs: int = 50, seed: int = 0,
                            config: SearchConfig | None = None,
                            functions: dict | None = None,
                            start_halfwidth: float = 4.0) -> dict:
    """Seeded success rates of the minimizer on the standard test functions.

    Each run starts uniformly in [-start_halfwidth, start_halfwidth]^dim
    and counts as a success when the final value is below the function's
    threshold. Returns a JSON-ready report.
    """
    base = config if config is not None else SearchConfig()
    table = functions if functions is not None else BENCHMARKS
    report = {"runs": runs, "seed": seed, "config": {
        "iterations": base.iterations, "probes": base.probes,
        "starting_scale": base.starting_scale, "end_scale": base.end_scale,
        "subspace_dim": base.subspace_dim,
    }, "functions": {}}
    for name, (func, dim, threshold) in table.items():
        finals = []
        for r in range(runs):
            run_seed = derive_seed(seed, name, r)
            cfg = SearchConfig(
                iterations=base.iterations, probes=base.probes,
                starting_scale=base.starting_scale, end_scale=base.end_scale,
                subspace_dim=base.subspace_dim,
                line_search_exponents=base.line_search_exponents,
                seed=run_seed,
            )
            x0 = start_rng(run_seed).uniform(-start_halfwidth, start_halfwidth, size=dim)
            result = random_directions_minimize(func, x0, cfg)
            finals.append(result.fun)
        finals_arr = np.asarray(finals)
        report["functions"][name] = {
            "dimension": dim,
            "threshold": threshold,
            "success_rate": float(np.mean(finals_arr < threshold)),
            "median_final": float(np.median(finals_arr)),
            "best_final": float(finals_arr.min()),
            "worst_final": float(finals_arr.max()),
        }
    return report
