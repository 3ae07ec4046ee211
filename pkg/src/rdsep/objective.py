"""Separation objective: pairwise negative KL divergence plus a power term.

The optimizer minimizes f = -mean D_KL over ordered output pairs
+ weight * |1 - power_in/power_out|. The KL term pushes the separated
outputs toward statistically different amplitude distributions; the power
term blocks the degenerate all-zero "solution". To bound evaluation cost,
the objective runs on a single short block built by leaky accumulation of
the first seconds of signal rather than on the full recording.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .signals import MultichannelSignal
from .unmixer import decode, unmix


@dataclass(frozen=True)
class ObjectiveConfig:
    """Tunables of the separation objective.

    power_weight is the Lagrange multiplier on the power-preservation
    term. histogram_range of None means the symmetric amplitude bound is
    taken from the data (max |amplitude| over the two channels compared).
    blocksize/leak/max_blocks control the leaky block accumulator.
    """

    power_weight: float = 0.1
    histogram_bins: int = 100
    histogram_range: float | None = None
    epsilon: float = 1e-6
    blocksize: int = 8000
    leak: float = 0.98
    max_blocks: int = 16

    def __post_init__(self):
        if self.power_weight < 0:
            raise ValueError("power_weight must be nonnegative")
        if self.histogram_bins < 2:
            raise ValueError("histogram_bins must be >= 2")
        if self.histogram_range is not None and self.histogram_range <= 0:
            raise ValueError("histogram_range must be positive when given")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.blocksize < 1:
            raise ValueError("blocksize must be >= 1")
        if not 0.0 < self.leak < 1.0:
            raise ValueError("leak must lie strictly between 0 and 1")
        if self.max_blocks < 1:
            raise ValueError("max_blocks must be >= 1")


def accumulate_blocks(x: MultichannelSignal, cfg: ObjectiveConfig) -> MultichannelSignal:
    """Leaky superposition of consecutive blocks into one block per channel.

    acc <- leak * acc + (1 - leak) * block, over the first
    min(available blocks, max_blocks) full blocks, independently per
    channel. Output length is exactly one blocksize.
    """
    n_blocks = min(x.n_samples // cfg.blocksize, cfg.max_blocks)
    if n_blocks < 1:
        raise ValueError(
            f"signal of {x.n_samples} samples is shorter than one block "
            f"({cfg.blocksize} samples)")
    acc = np.zeros((x.n_channels, cfg.blocksize))
    for i in range(n_blocks):
        block = x.data[:, i * cfg.blocksize:(i + 1) * cfg.blocksize]
        acc = cfg.leak * acc + (1.0 - cfg.leak) * block
    return MultichannelSignal(x.sample_rate, acc)


def _uniform_counts(y: np.ndarray, bins: int, lo: float, hi: float) -> np.ndarray:
    """np.histogram's uniform-bin fast path, inlined for the hot loop.

    Bit-identical to np.histogram(y, bins, range=(lo, hi))[0] (same index
    arithmetic and edge corrections); only the dispatch overhead is gone.
    """
    keep = (y >= lo) & (y <= hi)
    if not keep.all():
        y = y[keep]
    edges = np.linspace(lo, hi, bins + 1)
    indices = ((y - lo) / (hi - lo) * bins).astype(np.intp)
    indices[indices == bins] -= 1
    # index arithmetic can be off by one ULP around the edges
    indices[y < edges[indices]] -= 1
    indices[(y >= edges[indices + 1]) & (indices != bins - 1)] += 1
    return np.bincount(indices, minlength=bins)


def _floored_histogram(y: np.ndarray, bins: int, bound: float, epsilon: float) -> np.ndarray:
    counts = _uniform_counts(y, bins, -bound, bound)
    total = counts.sum()
    if total == 0:
        p = np.full(bins, 1.0 / bins)
    else:
        p = counts / total
    p = np.maximum(p, epsilon)
    return p / p.sum()


def kl_divergence(y1: np.ndarray, y2: np.ndarray, cfg: ObjectiveConfig) -> float:
    """D_KL(p || q) between the amplitude histograms of two channels.

    With histogram_range unset, each channel is binned over its own
    symmetric range [-max|y|, max|y|], so the divergence compares
    distribution shapes and is invariant to per-channel scaling. (A
    shared range would reward blowing one output up against the other,
    which the bounded power term cannot prevent.) A fixed histogram_range
    is used for both channels when configured. Bins are floored at
    epsilon and renormalized, so the result is always finite and
    nonnegative; a silent channel contributes zero divergence.
    """
    y1 = np.asarray(y1, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.float64)
    if y1.shape != y2.shape or y1.ndim != 1:
        raise ValueError("channels must be 1-D arrays of equal length")
    if y1.size < cfg.histogram_bins:
        raise ValueError("channels must be at least histogram_bins samples long")
    if cfg.histogram_range is not None:
        bound1 = bound2 = cfg.histogram_range
    else:
        bound1 = np.abs(y1).max()
        bound2 = np.abs(y2).max()
        if bound1 == 0.0 or bound2 == 0.0:
            return 0.0
    p = _floored_histogram(y1, cfg.histogram_bins, bound1, cfg.epsilon)
    q = _floored_histogram(y2, cfg.histogram_bins, bound2, cfg.epsilon)
    return float(np.sum(p * np.log(p / q)))


def signal_power(x: MultichannelSignal) -> float:
    """Mean squared amplitude per channel, summed over channels."""
    return float(np.mean(x.data ** 2, axis=1).sum())


def power_penalty(x_in: MultichannelSignal, y_out: MultichannelSignal) -> float:
    """|1 - power_in / power_out|; +inf when the output is silent.

    The +inf sentinel marks the degenerate all-zero output, which the
    optimizer's strict-improvement rule then never accepts.
    """
    power_out = signal_power(y_out)
    if power_out == 0.0:
        return math.inf
    return abs(1.0 - signal_power(x_in) / power_out)


class SeparationContext:
    """Prepared, immutable context turning a coefficient vector into a cost.

    Built once per optimization run from the accumulated input block; the
    resulting callable is a pure function of the vector and is safe to
    evaluate from concurrent probe workers.
    """

    def __init__(self, block: MultichannelSignal, n_sources: int, d_max: float,
                 cfg: ObjectiveConfig | None = None):
        if n_sources < 2:
            raise ValueError("need at least 2 output sources")
        self.cfg = cfg if cfg is not None else ObjectiveConfig()
        data = block.data.copy()
        data.setflags(write=False)
        self.block = MultichannelSignal(block.sample_rate, data)
        self.n_mics = block.n_channels
        self.n_sources = n_sources
        self.d_max = float(d_max)
        self.ordered_pairs = [(i, j) for i, j in permutations(range(n_sources), 2)]

    @property
    def dim(self) -> int:
        """Length of the flat coefficient vector."""
        return 2 * self.n_mics * self.n_sources

    def __call__(self, vec: np.ndarray) -> float:
        return separation_objective(vec, self)


def separation_objective(vec: np.ndarray, context: SeparationContext) -> float:
    """Cost of a flat coefficient vector on the accumulated block.

    Decodes the vector, unmixes the block, and returns
    -mean_{ordered pairs} D_KL(Y_i, Y_j) + power_weight * penalty.
    Propagates the +inf sentinel for silent output.
    """
    cfg = context.cfg
    coeffs = decode(vec, context.n_mics, context.n_sources, context.d_max)
    y = unmix(context.block, coeffs)
    penalty = power_penalty(context.block, y)
    if math.isinf(penalty):
        return math.inf
    # channel histograms are pair-independent; build each once
    hists: list[np.ndarray | None] = []
    for ch in y.data:
        bound = cfg.histogram_range if cfg.histogram_range is not None \
            else np.abs(ch).max()
        hists.append(None if bound == 0.0 else
                     _floored_histogram(ch, cfg.histogram_bins, bound, cfg.epsilon))
    kl_sum = 0.0
    for i, j in context.ordered_pairs:
        p, q = hists[i], hists[j]
        if p is not None and q is not None:
            kl_sum += float(np.sum(p * np.log(p / q)))
    kl_mean = kl_sum / len(context.ordered_pairs)
    return -kl_mean + cfg.power_weight * penalty
