"""Low-latency time-domain blind source separation.

A zeroth-order "random directions" optimizer tunes a grid of attenuated
fractional delays that unmixes multichannel audio, using a pairwise
KL-divergence objective with a power-preservation penalty. The package
also ships the surrounding harness: a shoebox image-source room
simulator, BSS-Eval-style SDR/SIR/SAR metrics, and a streaming pipeline
with atomically published coefficient updates.
"""

from .bsseval import SeparationMetrics, decompose, evaluate
from .objective import (ObjectiveConfig, SeparationContext, accumulate_blocks,
                        kl_divergence, power_penalty, separation_objective)
from .optimizer import (MinimizeResult, OptimizationAborted, OptimizationTrace,
                        SearchConfig, derive_seed, line_search,
                        random_directions_minimize, sample_search_vector,
                        scale_schedule, verify_optimal_sigma)
from .pipeline import (CoeffSnapshot, LatencyReport, OfflineResult,
                       OnlineResult, RunConfig, SnapshotBoard,
                       benchmark_suite, run_offline, run_online)
from .roomsim import (RoomSpec, absorption_from_rt60, experiment_room,
                      impulse_response, mic_array_preset, simulate)
from .signals import MultichannelSignal, read_wav, write_wav
from .synth import benchmark_source_pair, modulated_noise, noise_modulated_tone
from .unmixer import (StreamingUnmixer, UnmixingCoeffs, decode,
                      default_max_delay, encode, fractional_delay,
                      passthrough_coeffs, streaming_unmix, unmix)

__version__ = "0.1.0"

__all__ = [
    "CoeffSnapshot", "LatencyReport", "MinimizeResult", "MultichannelSignal",
    "ObjectiveConfig", "OfflineResult", "OnlineResult", "OptimizationAborted",
    "OptimizationTrace", "RoomSpec", "RunConfig", "SearchConfig",
    "SeparationContext", "SeparationMetrics", "SnapshotBoard",
    "StreamingUnmixer", "UnmixingCoeffs", "absorption_from_rt60",
    "accumulate_blocks", "benchmark_source_pair", "benchmark_suite", "decode",
    "decompose", "default_max_delay", "derive_seed", "encode", "evaluate",
    "experiment_room", "fractional_delay", "impulse_response", "kl_divergence",
    "line_search", "mic_array_preset", "modulated_noise",
    "noise_modulated_tone", "passthrough_coeffs", "power_penalty",
    "random_directions_minimize", "read_wav", "run_offline", "run_online",
    "sample_search_vector", "scale_schedule", "separation_objective",
    "simulate", "streaming_unmix", "unmix", "verify_optimal_sigma",
    "write_wav",
]
