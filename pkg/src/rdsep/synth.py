"""Seeded synthetic test sources.

The KL-based separation objective compares amplitude distribution
shapes, so benchmark pairs put the two sources at opposite ends of that
axis: a bursty harmonic stack under a heavy-tailed envelope (strongly
super-Gaussian, speech-rhythm sparsity) against a lightly modulated
near-pure tone (sub-Gaussian, bimodal amplitude density). Any mixing of
the two lands between the extremes, which makes full separation the
clear optimum. Tone frequencies are multiples of 2 Hz so that 0.5 s
accumulator blocks superpose coherently.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import butter, lfilter

from .signals import MultichannelSignal

RMS_LEVEL = 0.1


def _lowpass_noise(n: int, sample_rate: int, cutoff_hz: float,
                   rng: np.random.Generator) -> np.ndarray:
    b, a = butter(2, cutoff_hz / (sample_rate / 2))
    return lfilter(b, a, rng.normal(size=n))


def _normalized(sig: np.ndarray) -> np.ndarray:
    rms = np.sqrt(np.mean(sig ** 2))
    return sig / rms * RMS_LEVEL if rms > 0 else sig


def noise_modulated_tone(duration: float, sample_rate: int, tone_hz: float = 220.0,
                         mod_hz: float = 4.0, seed: int = 0, harmonics: int = 3,
                         burst_depth: float = 1.4) -> MultichannelSignal:
    """Bursty harmonic tone with a heavy-tailed (lognormal) noise envelope.

    The exponentiated envelope produces rare large bursts: a strongly
    super-Gaussian amplitude distribution that survives leaky block
    accumulation.
    """
    n = int(round(duration * sample_rate))
    rng = np.random.default_rng(seed)
    t = np.arange(n) / sample_rate
    tone = np.zeros(n)
    for k in range(1, harmonics + 1):
        tone += np.sin(2 * np.pi * k * tone_hz * t + rng.uniform(0, 2 * np.pi)) / k
    env = _lowpass_noise(n, sample_rate, mod_hz, rng)
    std = env.std()
    if std > 0:
        env = np.exp(burst_depth * env / std)
    sig = _normalized(tone * env)
    return MultichannelSignal(sample_rate, sig[None, :])


def amplitude_modulated_tone(duration: float, sample_rate: int,
                             tone_hz: float = 312.0, seed: int = 0,
                             mod_hz: float = 0.8,
                             depth: float = 0.25) -> MultichannelSignal:
    """Near-pure tone with mild slow amplitude modulation.

    The amplitude density stays close to a sinusoid's bimodal shape:
    sub-Gaussian, the opposite end of the scale from bursty material.
    """
    n = int(round(duration * sample_rate))
    rng = np.random.default_rng(seed)
    t = np.arange(n) / sample_rate
    mod = _lowpass_noise(n, sample_rate, mod_hz, rng)
    peak = np.abs(mod).max()
    env = 1.0 + (depth * mod / peak if peak > 0 else 0.0)
    sig = _normalized(np.sin(2 * np.pi * tone_hz * t + rng.uniform(0, 2 * np.pi)) * env)
    return MultichannelSignal(sample_rate, sig[None, :])


def modulated_noise(duration: float, sample_rate: int,
                    band_hz: tuple[float, float] = (400.0, 3600.0),
                    mod_hz: float = 1.5, seed: int = 0) -> MultichannelSignal:
    """Dense band-limited noise with mild slow amplitude modulation."""
    n = int(round(duration * sample_rate))
    rng = np.random.default_rng(seed)
    noise = rng.normal(size=n)
    b, a = butter(4, [band_hz[0] / (sample_rate / 2), band_hz[1] / (sample_rate / 2)],
                  btype="band")
    sig = lfilter(b, a, noise)
    env = 1.0 + 0.5 * np.abs(_lowpass_noise(n, sample_rate, mod_hz, rng))
    sig = _normalized(sig * env)
    return MultichannelSignal(sample_rate, sig[None, :])


def benchmark_source_pair(duration: float = 8.0, sample_rate: int = 16000,
                          seed: int = 0) -> tuple[MultichannelSignal, MultichannelSignal]:
    """Standard broadband test pair: bursty stack vs. near-pure tone."""
    bursty = noise_modulated_tone(duration, sample_rate, tone_hz=220.0,
                                  mod_hz=4.0, seed=seed)
    tonal = amplitude_modulated_tone(duration, sample_rate, tone_hz=312.0,
                                     seed=seed + 1)
    return bursty, tonal
