"""Random-directions zeroth-order minimization.

The minimizer needs only objective evaluations: each iteration draws a
batch of Gaussian search vectors on random coefficient subspaces, with a
standard deviation ("scale") that anneals from a starting value to an end
value over the run, and refines any strictly improving probe with a coarse
power-of-two line search. Updates are accepted only on strict improvement,
so the best objective value never increases.

Randomness is counter-based: probe p of iteration m draws from a stream
keyed by (seed, m, p), so results are bit-identical no matter how many
workers evaluate probes concurrently.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
from numpy.random import PCG64, Generator, SeedSequence

Objective = Callable[[np.ndarray], float]

_SEED_MASK = (1 << 64) - 1
# spawn-key namespace for start-vector draws; iteration keys are 2-tuples
_START_KEY = (1 << 31,)


class OptimizationAborted(RuntimeError):
    """Objective evaluation failed mid-run; `.trace` holds progress so far."""

    def __init__(self, message: str, trace: "OptimizationTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class SearchConfig:
    """Hyperparameters of the random-directions search.

    iterations:
        Number of search iterations T.
    probes:
        Independent search vectors drawn and evaluated per iteration.
    starting_scale / end_scale:
        Standard deviation of the search vectors at iteration 0 and at the
        final iteration; annealed quadratically in between.
    subspace_dim:
        Number of nonzero entries per search vector (clamped to the
        problem dimension).
    line_search_exponents:
        Inclusive (low, high) range of the power-of-two step exponents
        tried after a successful probe. Must contain 0, the probe itself.
    seed:
        64-bit seed; fixes the full probe stream.
    """

    iterations: int = 1000
    probes: int = 8
    starting_scale: float = 4.0
    end_scale: float = 0.0
    subspace_dim: int = 8
    line_search_exponents: tuple[int, int] = (-8, 8)
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.probes < 1:
            raise ValueError("probes must be >= 1")
        if self.starting_scale < 0 or self.end_scale < 0:
            raise ValueError("scales must be nonnegative")
        if self.end_scale > self.starting_scale:
            raise ValueError("end_scale must not exceed starting_scale")
        if self.subspace_dim < 1:
            raise ValueError("subspace_dim must be >= 1")
        lo, hi = self.line_search_exponents
        if not (lo <= 0 <= hi):
            raise ValueError("line_search_exponents must contain 0")


@dataclass
class OptimizationTrace:
    """Per-iteration record of search progress.

    `f_best` is the best objective value after each iteration and is
    non-increasing. `search_evaluations` counts probe and line-search
    objective calls (the single baseline evaluation of x0 is not included).
    """

    iteration: list[int] = field(default_factory=list)
    scale: list[float] = field(default_factory=list)
    f_best: list[float] = field(default_factory=list)
    accepted: list[bool] = field(default_factory=list)
    k_best: list[int | None] = field(default_factory=list)
    search_evaluations: int = 0

    def record(self, iteration: int, scale: float, f_best: float,
               accepted: bool, k_best: int | None) -> None:
        self.iteration.append(iteration)
        self.scale.append(scale)
        self.f_best.append(f_best)
        self.accepted.append(accepted)
        self.k_best.append(k_best)

    @property
    def n_iterations(self) -> int:
        return len(self.iteration)

    @property
    def n_accepted(self) -> int:
        return sum(self.accepted)

    def write_csv(self, path: str | Path) -> None:
        """Dump the trace as `iteration, scale, f_best, accepted, k_best`."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "scale", "f_best", "accepted", "k_best"])
            for i in range(self.n_iterations):
                k = self.k_best[i]
                writer.writerow([
                    self.iteration[i],
                    repr(self.scale[i]),
                    repr(self.f_best[i]),
                    int(self.accepted[i]),
                    "" if k is None else k,
                ])


class MinimizeResult(NamedTuple):
    x: np.ndarray
    fun: float
    trace: OptimizationTrace


def scale_schedule(m: int, config: SearchConfig) -> float:
    """Search-vector standard deviation at iteration m.

    Quadratic anneal: end + (start - end) * (1 - m/T)^2, hitting the
    endpoints exactly at m=0 and m=T.
    """
    if not 0 <= m <= config.iterations:
        raise ValueError(f"iteration index {m} outside [0, {config.iterations}]")
    rest = 1.0 - m / config.iterations
    return config.end_scale + (config.starting_scale - config.end_scale) * rest * rest


def probe_rng(seed: int, iteration: int, probe: int) -> Generator:
    """Independent RNG stream for one probe of one iteration."""
    seq = SeedSequence(entropy=seed & _SEED_MASK, spawn_key=(iteration, probe))
    return Generator(PCG64(seq))


def start_rng(seed: int) -> Generator:
    """RNG stream reserved for drawing starting vectors under this seed."""
    seq = SeedSequence(entropy=seed & _SEED_MASK, spawn_key=_START_KEY)
    return Generator(PCG64(seq))


def _hash_tag(tag: str) -> int:
    """Deterministic (process-independent) 32-bit FNV-1a hash of a label."""
    h = 2166136261
    for ch in tag.encode("utf-8"):
        h = ((h ^ ch) * 16777619) & 0xFFFFFFFF
    return h


def derive_seed(seed: int, tag: str, index: int) -> int:
    """Stable 64-bit sub-seed for run `index` of the group `tag`."""
    # high bit keeps the key clear of the (iteration, probe) key range
    digest = SeedSequence(
        entropy=seed & _SEED_MASK,
        spawn_key=(_hash_tag(tag) | 0x4000_0000, index),
    ).generate_state(1, np.uint64)[0]
    return int(digest)


def sample_search_vector(dim: int, config: SearchConfig, scale: float,
                         rng: Generator) -> np.ndarray:
    """Draw a sparse Gaussian search vector.

    Exactly min(subspace_dim, dim) entries, at uniformly chosen distinct
    indices, are independent zero-mean normal draws with the given
    standard deviation; the rest are zero.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    k = min(config.subspace_dim, dim)
    if k == dim:
        return rng.normal(0.0, scale, size=dim)
    v = np.zeros(dim)
    idx = rng.choice(dim, size=k, replace=False)
    v[idx] = rng.normal(0.0, scale, size=k)
    return v


def _cost(value: float) -> float:
    """Comparison view of an objective value: non-finite means 'never accept'."""
    value = float(value)
    return value if math.isfinite(value) else math.inf


def line_search(f: Objective, x_best: np.ndarray, v: np.ndarray,
                exponents: tuple[int, int] = (-8, 8)) -> tuple[int, float]:
    """Coarse line search along a successful search vector.

    Evaluates f(x_best + 2^k * v) for every integer k in the inclusive
    exponent range and returns the minimizing (k, value). Ties prefer
    smaller |k|, then negative k.
    """
    lo, hi = exponents
    if not lo <= 0 <= hi:
        raise ValueError("exponent range must contain 0")
    best_key = None
    best_k = 0
    best_val = math.inf
    for k in range(lo, hi + 1):
        val = _cost(f(x_best + (2.0 ** k) * v))
        key = (val, abs(k), k)
        if best_key is None or key < best_key:
            best_key = key
            best_k = k
            best_val = val
    return best_k, best_val


def random_directions_minimize(f: Objective, x0: np.ndarray,
                               config: SearchConfig,
                               workers: int = 1) -> MinimizeResult:
    """Minimize f from x0 with the random-directions search.

    Each iteration draws `probes` search vectors at the scheduled scale,
    evaluates all probe points (concurrently when workers > 1), and on
    strict improvement of the best probe refines the step with the coarse
    line search. The returned objective value never exceeds f(x0), and the
    trace's f_best column is non-increasing.

    An exception raised by f aborts the run as OptimizationAborted with
    the partial trace attached.
    """
    x_best = np.array(x0, dtype=np.float64, copy=True).ravel()
    dim = x_best.size
    if dim < 1:
        raise ValueError("x0 must be a nonempty vector")
    if not np.all(np.isfinite(x_best)):
        raise ValueError("x0 must be finite")

    trace = OptimizationTrace()

    def guarded(x: np.ndarray) -> float:
        trace.search_evaluations += 1
        return f(x)

    lo, hi = config.line_search_exponents
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        try:
            f_best = _cost(f(x_best))
        except Exception as exc:
            raise OptimizationAborted("objective failed at starting point", trace) from exc

        for m in range(config.iterations):
            scale = scale_schedule(m, config)
            vectors = [
                sample_search_vector(dim, config, scale, probe_rng(config.seed, m, p))
                for p in range(config.probes)
            ]
            points = [x_best + v for v in vectors]
            try:
                if pool is not None:
                    values = list(pool.map(guarded, points))
                else:
                    values = [guarded(x) for x in points]
            except Exception as exc:
                raise OptimizationAborted(f"objective failed in iteration {m}", trace) from exc
            costs = [_cost(val) for val in values]
            p_best = int(np.argmin(costs))

            accepted = costs[p_best] < f_best
            k_best: int | None = None
            if accepted:
                try:
                    k_best, f_new = line_search(guarded, x_best, vectors[p_best], (lo, hi))
                except Exception as exc:
                    raise OptimizationAborted(f"objective failed in line search at iteration {m}",
                                              trace) from exc
                x_best = x_best + (2.0 ** k_best) * vectors[p_best]
                f_best = f_new
            trace.record(m, scale, f_best, accepted, k_best)
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    return MinimizeResult(x_best, f_best, trace)


def verify_optimal_sigma(distance: float, subspace_dim: int,
                         sigma_grid: Sequence[float], trials: int,
                         rng: Generator,
                         region_radius: float | None = None,
                         chunk: int = 200_000) -> dict[float, float]:
    """Monte-Carlo success probability of hitting a target ball, per sigma.

    The target is a ball of `region_radius` (default 0.3 * distance)
    centered at a point `distance` away from the origin in
    `subspace_dim` dimensions; a trial succeeds when an isotropic
    zero-mean Gaussian draw with standard deviation sigma lands inside.
    The success probability is maximized near sigma = distance / sqrt(N),
    which is what callers assert.
    """
    if distance <= 0:
        raise ValueError("distance must be positive")
    if subspace_dim < 1:
        raise ValueError("subspace_dim must be >= 1")
    radius = 0.3 * distance if region_radius is None else float(region_radius)
    target = np.zeros(subspace_dim)
    target[0] = distance

    sigmas = [float(s) for s in sigma_grid]
    hits = {s: 0 for s in sigmas}
    remaining = trials
    while remaining > 0:
        n = min(chunk, remaining)
        # one batch of unit normals serves every sigma: paired estimates
        # share noise, which stabilizes the argmax comparison
        z = rng.normal(0.0, 1.0, size=(n, subspace_dim))
        for sigma in sigmas:
            delta = sigma * z - target
            dist_sq = np.einsum("ij,ij->i", delta, delta)
            hits[sigma] += int(np.count_nonzero(dist_sq <= radius * radius))
        remaining -= n
    return {s: hits[s] / trials for s in sigmas}
