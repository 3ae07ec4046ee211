"""Time-domain unmixing through attenuated fractional delays.

Separated output s is the sum over microphones m of
a[m, s] * delay(x_m, d[m, s]): a mics x sources grid of attenuation
factors and fractional sample delays. The fractional delay is an integer
delay line plus a first-order allpass, which keeps the per-sample cost
low enough for sample-level streaming.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .signals import MultichannelSignal

SPEED_OF_SOUND = 343.0


def default_max_delay(mic_positions: np.ndarray, sample_rate: int,
                      speed_of_sound: float = SPEED_OF_SOUND,
                      headroom: float = 1.5) -> float:
    """Delay-search bound from array geometry.

    headroom * (largest microphone-pair distance / c) * sample_rate;
    physical inter-microphone delays can never exceed the pair distance
    over c, so this bounds the useful search box with slack.
    """
    pos = np.asarray(mic_positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[0] < 2:
        raise ValueError("need at least two microphone positions")
    diffs = pos[:, None, :] - pos[None, :, :]
    largest = float(np.sqrt((diffs ** 2).sum(axis=2)).max())
    return headroom * largest / speed_of_sound * sample_rate


def _thiran_coeff(frac: float) -> float:
    """First-order allpass coefficient for a fractional delay in [0, 1)."""
    return (1.0 - frac) / (1.0 + frac)


def fractional_delay(x: np.ndarray, d: float, d_max: float | None = None,
                     method: str = "thiran") -> np.ndarray:
    """Delay a single channel by d samples (fractional allowed).

    The integer part shifts through a delay line; the fractional part f
    runs through a first-order allpass with coefficient (1-f)/(1+f)
    ("thiran") or a 2-tap linear interpolator ("lagrange", kept for A/B
    comparison). Output has the input's length, with the shifted-out tail
    truncated and leading zeros kept.
    """
    if method not in ("thiran", "lagrange"):
        raise ValueError(f"unknown fractional delay method: {method!r}")
    if d < 0:
        raise ValueError(f"delay must be nonnegative, got {d}")
    if d_max is not None and d > d_max:
        raise ValueError(f"delay {d} exceeds maximum {d_max}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a single channel (1-D array)")

    int_d = int(np.floor(d))
    frac = d - int_d
    shifted = np.zeros_like(x)
    if int_d < x.size:
        if int_d == 0:
            shifted[:] = x
        else:
            shifted[int_d:] = x[:-int_d]
    if frac == 0.0:
        return shifted
    if method == "thiran":
        eta = _thiran_coeff(frac)
        return lfilter([eta, 1.0], [1.0, eta], shifted)
    out = (1.0 - frac) * shifted
    out[1:] += frac * shifted[:-1]
    return out


@dataclass(frozen=True)
class UnmixingCoeffs:
    """mics x sources grid of (attenuation, delay-in-samples) pairs.

    Delays live in [0, d_max]; attenuations are unconstrained. This is
    the unmixing search space: 2 * mics * sources real numbers.
    """

    attenuation: np.ndarray
    delay: np.ndarray
    d_max: float

    def __post_init__(self):
        a = np.asarray(self.attenuation, dtype=np.float64)
        d = np.asarray(self.delay, dtype=np.float64)
        if a.ndim != 2 or a.shape != d.shape:
            raise ValueError("attenuation and delay must be equal-shape 2-D arrays")
        m, s = a.shape
        if not m >= s >= 2:
            raise ValueError(f"need mics >= sources >= 2, got {m} x {s}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(d))):
            raise ValueError("coefficients must be finite")
        if self.d_max < 0:
            raise ValueError("d_max must be nonnegative")
        if np.any(d < 0) or np.any(d > self.d_max):
            raise ValueError(f"delays must lie in [0, {self.d_max}]")
        object.__setattr__(self, "attenuation", a)
        object.__setattr__(self, "delay", d)

    @property
    def mics(self) -> int:
        return self.attenuation.shape[0]

    @property
    def sources(self) -> int:
        return self.attenuation.shape[1]


def passthrough_coeffs(mics: int, sources: int, d_max: float) -> UnmixingCoeffs:
    """Energy-preserving neutral start: every output averages all inputs."""
    return UnmixingCoeffs(
        attenuation=np.full((mics, sources), 1.0 / mics),
        delay=np.zeros((mics, sources)),
        d_max=d_max,
    )


def encode(coeffs: UnmixingCoeffs) -> np.ndarray:
    """Flatten to [a11, d11, a12, d12, ...], row-major over (mic, source)."""
    stacked = np.stack([coeffs.attenuation, coeffs.delay], axis=-1)
    return stacked.reshape(-1)


def decode(vec: np.ndarray, mics: int, sources: int, d_max: float) -> UnmixingCoeffs:
    """Rebuild coefficients from a flat vector, clamping delays into [0, d_max]."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (2 * mics * sources,):
        raise ValueError(
            f"expected vector of length {2 * mics * sources}, got shape {vec.shape}")
    grid = vec.reshape(mics, sources, 2)
    return UnmixingCoeffs(
        attenuation=grid[:, :, 0].copy(),
        delay=np.clip(grid[:, :, 1], 0.0, d_max),
        d_max=d_max,
    )


def unmix(x: MultichannelSignal, coeffs: UnmixingCoeffs,
          method: str = "thiran") -> MultichannelSignal:
    """Apply the unmixing grid to a block of microphone channels.

    Output channel s = sum over m of a[m, s] * delay(x_m, d[m, s]); same
    length as the input. Linear in x.
    """
    if coeffs.mics != x.n_channels:
        raise ValueError(
            f"coefficients expect {coeffs.mics} channels, signal has {x.n_channels}")
    out = np.zeros((coeffs.sources, x.n_samples))
    for m in range(coeffs.mics):
        for s in range(coeffs.sources):
            out[s] += coeffs.attenuation[m, s] * fractional_delay(
                x.data[m], coeffs.delay[m, s], coeffs.d_max, method=method)
    return MultichannelSignal(x.sample_rate, out)


class _PathState:
    """Delay-line and allpass memory of one (mic, source) path."""

    __slots__ = ("int_d", "eta", "buffer", "zi")

    def __init__(self, d: float):
        self.int_d = int(np.floor(d))
        frac = d - self.int_d
        self.eta = None if frac == 0.0 else _thiran_coeff(frac)
        self.buffer = np.zeros(self.int_d)
        self.zi = np.zeros(1)

    def process(self, chunk: np.ndarray) -> np.ndarray:
        if self.int_d > 0:
            joined = np.concatenate([self.buffer, chunk])
            delayed = joined[:chunk.size]
            self.buffer = joined[chunk.size:]
        else:
            delayed = chunk
        if self.eta is None:
            return delayed
        out, self.zi = lfilter([self.eta, 1.0], [1.0, self.eta], delayed, zi=self.zi)
        return out


class StreamingUnmixer:
    """Chunk-by-chunk unmixing with per-path filter state.

    Concatenated chunk outputs reproduce the batch `unmix` of the
    concatenated input bit-exactly, for any chunk sizes. Coefficient
    swaps take effect at chunk boundaries only and reset the path state,
    so post-swap output equals a fresh batch unmix of the post-swap
    input. One stream owns one instance; it is not thread-safe.
    """

    def __init__(self, coeffs: UnmixingCoeffs):
        self._coeffs = coeffs
        self._states = self._fresh_states(coeffs)
        self.samples_in = 0
        self.samples_out = 0

    @staticmethod
    def _fresh_states(coeffs: UnmixingCoeffs) -> list[list[_PathState]]:
        return [[_PathState(coeffs.delay[m, s]) for s in range(coeffs.sources)]
                for m in range(coeffs.mics)]

    @property
    def coeffs(self) -> UnmixingCoeffs:
        return self._coeffs

    def swap(self, coeffs: UnmixingCoeffs) -> None:
        """Replace the coefficient set; applies from the next chunk on."""
        if (coeffs.mics, coeffs.sources) != (self._coeffs.mics, self._coeffs.sources):
            raise ValueError("coefficient grid shape does not match the stream state")
        self._coeffs = coeffs
        self._states = self._fresh_states(coeffs)

    def process(self, chunk: np.ndarray) -> np.ndarray:
        """Unmix one channels x samples chunk; returns sources x samples."""
        chunk = np.asarray(chunk, dtype=np.float64)
        if chunk.ndim != 2 or chunk.shape[0] != self._coeffs.mics:
            raise ValueError(
                f"chunk must be {self._coeffs.mics} x n, got shape {chunk.shape}")
        if chunk.shape[1] < 1:
            raise ValueError("chunk must contain at least one sample")
        out = np.zeros((self._coeffs.sources, chunk.shape[1]))
        for m in range(self._coeffs.mics):
            for s in range(self._coeffs.sources):
                out[s] += self._coeffs.attenuation[m, s] * \
                    self._states[m][s].process(chunk[m])
        self.samples_in += chunk.shape[1]
        self.samples_out += chunk.shape[1]
        return out


def same_coeffs(a: UnmixingCoeffs, b: UnmixingCoeffs) -> bool:
    """Value equality of two coefficient grids."""
    return a is b or (
        a.d_max == b.d_max
        and np.array_equal(a.attenuation, b.attenuation)
        and np.array_equal(a.delay, b.delay)
    )


def streaming_unmix(x_chunk: np.ndarray, coeffs: UnmixingCoeffs,
                    state: StreamingUnmixer | None = None
                    ) -> tuple[np.ndarray, StreamingUnmixer]:
    """Functional wrapper around StreamingUnmixer.

    Passing coefficients that differ in value from the state's triggers a
    swap at this chunk boundary. Returns (sources x samples chunk, state).
    """
    if state is None:
        state = StreamingUnmixer(coeffs)
    elif not same_coeffs(coeffs, state.coeffs):
        state.swap(coeffs)
    return state.process(x_chunk), state
