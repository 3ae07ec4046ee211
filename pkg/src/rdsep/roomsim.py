"""Shoebox room simulation with the image-source method.

Walls are mirrors: every reflection path corresponds to a virtual source,
attenuated by the wall reflection factor per bounce and by spherical
spreading, and arriving after distance/c. Each arrival is placed at its
fractional sample delay with the same fractional-delay kernel the unmixer
uses, so simulated inter-microphone timing is consistent with what the
unmixing search can represent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .signals import MultichannelSignal, as_mono
from .unmixer import SPEED_OF_SOUND, fractional_delay

SABINE_CONSTANT = 0.161
# allpass ringing allowance past the last arrival, before energy truncation
_TAIL_MARGIN = 2048

MIC_PRESETS = {
    "stereo": np.array([[0.0, -0.1, 0.0], [0.0, 0.1, 0.0]]),
    "square": np.array([
        [-0.1, -0.1, 0.0], [-0.1, 0.1, 0.0], [0.1, -0.1, 0.0], [0.1, 0.1, 0.0],
    ]),
    "cube": np.array(sorted(product((-0.1, 0.1), repeat=3))),
}


@dataclass(frozen=True)
class RoomSpec:
    """Geometry and acoustics of a rectangular room.

    Positions are 3-vectors in meters, strictly inside the box. rt60 = 0
    means anechoic (direct path only).
    """

    dimensions: np.ndarray
    rt60: float
    source_positions: np.ndarray
    mic_positions: np.ndarray
    sample_rate: int
    max_image_order: int = 10
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        dims = np.asarray(self.dimensions, dtype=np.float64)
        srcs = np.atleast_2d(np.asarray(self.source_positions, dtype=np.float64))
        mics = np.atleast_2d(np.asarray(self.mic_positions, dtype=np.float64))
        if dims.shape != (3,) or np.any(dims <= 0):
            raise ValueError("dimensions must be three positive lengths")
        if self.rt60 < 0:
            raise ValueError("rt60 must be nonnegative")
        if srcs.shape[0] < 2 or mics.shape[0] < 2:
            raise ValueError("need at least 2 sources and 2 microphones")
        if srcs.shape[1] != 3 or mics.shape[1] != 3:
            raise ValueError("positions must be 3-vectors")
        for name, pts in (("source", srcs), ("microphone", mics)):
            if np.any(pts <= 0) or np.any(pts >= dims):
                raise ValueError(f"every {name} position must be strictly inside the room")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.max_image_order < 0:
            raise ValueError("max_image_order must be nonnegative")
        if self.speed_of_sound <= 0:
            raise ValueError("speed_of_sound must be positive")
        object.__setattr__(self, "dimensions", dims)
        object.__setattr__(self, "source_positions", srcs)
        object.__setattr__(self, "mic_positions", mics)

    @property
    def n_sources(self) -> int:
        return self.source_positions.shape[0]

    @property
    def n_mics(self) -> int:
        return self.mic_positions.shape[0]


def mic_array_preset(kind: str, center) -> np.ndarray:
    """Microphone coordinates of a named array around a center point.

    "stereo": pair 0.20 m apart; "square": 4 mics, 0.20 m side;
    "cube": 8 mics, 0.20 m side. Axis-aligned.
    """
    if kind not in MIC_PRESETS:
        raise ValueError(f"unknown microphone preset {kind!r}; "
                         f"choose from {sorted(MIC_PRESETS)}")
    center = np.asarray(center, dtype=np.float64)
    if center.shape != (3,):
        raise ValueError("center must be a 3-vector")
    return MIC_PRESETS[kind] + center


def experiment_room(preset: str = "stereo", rt60: float = 0.1,
                    sample_rate: int = 16000, max_image_order: int = 10) -> RoomSpec:
    """The 5 x 4 x 2.5 m evaluation room: two sources on the x=2.5 plane
    and a microphone array centered at [3.1, 2.1, 1.2]."""
    return RoomSpec(
        dimensions=np.array([5.0, 4.0, 2.5]),
        rt60=rt60,
        source_positions=np.array([[2.5, 1.5, 1.5], [2.5, 3.3, 1.5]]),
        mic_positions=mic_array_preset(preset, [3.1, 2.1, 1.2]),
        sample_rate=sample_rate,
        max_image_order=max_image_order,
    )


def absorption_from_rt60(room: RoomSpec) -> float:
    """Uniform Sabine absorption coefficient matching the room's rt60.

    alpha = 0.161 * V / (rt60 * A), clamped to (0, 1]. rt60 = 0 returns
    exactly 1.0 (anechoic: only the direct path survives).
    """
    if room.rt60 == 0.0:
        return 1.0
    lx, ly, lz = room.dimensions
    volume = lx * ly * lz
    area = 2.0 * (lx * ly + lx * lz + ly * lz)
    return min(SABINE_CONSTANT * volume / (room.rt60 * area), 1.0)


def _axis_images(extent: float, position: float, max_order: int):
    """Per-axis mirror coordinates with their reflection counts.

    Images along one axis sit at (1 - 2p) * (position + 2 * r * extent)
    for p in {0, 1}, r integer; the near wall is hit |r + p| times and
    the far wall |r| times.
    """
    out = []
    bound = max_order // 2 + 1
    for r in range(-bound, bound + 1):
        for p in (0, 1):
            hits = abs(r + p) + abs(r)
            if hits <= max_order:
                out.append(((1 - 2 * p) * (position + 2.0 * r * extent), hits))
    return out


def image_sources(room: RoomSpec, source_index: int) -> tuple[np.ndarray, np.ndarray]:
    """All virtual source positions and reflection counts up to max order."""
    source = room.source_positions[source_index]
    per_axis = [_axis_images(room.dimensions[d], source[d], room.max_image_order)
                for d in range(3)]
    positions = []
    counts = []
    for (x, nx), (y, ny), (z, nz) in product(*per_axis):
        n = nx + ny + nz
        if n <= room.max_image_order:
            positions.append((x, y, z))
            counts.append(n)
    return np.asarray(positions), np.asarray(counts)


def impulse_response(room: RoomSpec, source_index: int, mic_index: int) -> np.ndarray:
    """Room impulse response between one source and one microphone.

    Every image up to max_image_order contributes an impulse of amplitude
    (1 - alpha)^(reflections / 2) / (4 pi distance) at the fractional
    sample delay distance / c * fs. The response is truncated where the
    residual tail energy drops below -60 dB of the total.
    """
    if not 0 <= source_index < room.n_sources:
        raise ValueError(f"source index {source_index} out of range")
    if not 0 <= mic_index < room.n_mics:
        raise ValueError(f"microphone index {mic_index} out of range")
    alpha = absorption_from_rt60(room)
    reflect = np.sqrt(1.0 - alpha)

    positions, counts = image_sources(room, source_index)
    if reflect == 0.0:
        keep = counts == 0
        positions, counts = positions[keep], counts[keep]

    mic = room.mic_positions[mic_index]
    dists = np.sqrt(((positions - mic) ** 2).sum(axis=1))
    amps = reflect ** counts / (4.0 * np.pi * dists)
    delays = dists / room.speed_of_sound * room.sample_rate

    npts = int(np.ceil(delays.max())) + _TAIL_MARGIN
    h = np.zeros(npts)
    pulse = np.zeros(npts)
    for amp, delay in zip(amps, delays):
        pulse[0] = amp
        h += fractional_delay(pulse, delay)
    return _truncate_tail(h)


def _truncate_tail(h: np.ndarray, floor_db: float = -60.0) -> np.ndarray:
    residual = np.cumsum(h[::-1] ** 2)[::-1]
    threshold = residual[0] * 10.0 ** (floor_db / 10.0)
    significant = np.nonzero(residual > threshold)[0]
    if significant.size == 0:
        return h[:1]
    return h[:significant[-1] + 1]


def simulate(room: RoomSpec, dry_sources) -> tuple[MultichannelSignal, list[MultichannelSignal]]:
    """Propagate dry sources to the microphones.

    Returns (mixture, images): the mixture holds one channel per
    microphone; images[s] holds source s alone at every microphone (the
    ground-truth references for separation metrics). Shorter sources are
    zero-padded to the longest; outputs are truncated to that length.
    """
    if len(dry_sources) != room.n_sources:
        raise ValueError(
            f"room expects {room.n_sources} sources, got {len(dry_sources)}")
    channels = []
    for src in dry_sources:
        if isinstance(src, MultichannelSignal):
            if src.sample_rate != room.sample_rate:
                raise ValueError(
                    f"source sample rate {src.sample_rate} does not match room "
                    f"rate {room.sample_rate}")
        channels.append(as_mono(src))
    n = max(ch.size for ch in channels)
    padded = [np.pad(ch, (0, n - ch.size)) for ch in channels]

    mixture = np.zeros((room.n_mics, n))
    images = []
    for s in range(room.n_sources):
        img = np.zeros((room.n_mics, n))
        for m in range(room.n_mics):
            ir = impulse_response(room, s, m)
            img[m] = fftconvolve(padded[s], ir)[:n]
        mixture += img
        images.append(MultichannelSignal(room.sample_rate, img))
    return MultichannelSignal(room.sample_rate, mixture), images


def room_to_dict(room: RoomSpec) -> dict:
    return {
        "dimensions": room.dimensions.tolist(),
        "rt60": room.rt60,
        "source_positions": room.source_positions.tolist(),
        "mic_positions": room.mic_positions.tolist(),
        "sample_rate": room.sample_rate,
        "max_image_order": room.max_image_order,
        "speed_of_sound": room.speed_of_sound,
    }


def room_from_dict(spec: dict) -> RoomSpec:
    """Build a RoomSpec from a config mapping.

    Microphones come either from "mic_positions" or from a
    "mic_preset": {"kind": ..., "center": ...} entry.
    """
    spec = dict(spec)
    if "mic_positions" not in spec:
        preset = spec.pop("mic_preset", None)
        if preset is None:
            raise ValueError("config needs mic_positions or mic_preset")
        spec["mic_positions"] = mic_array_preset(preset["kind"], preset["center"])
    known = {"dimensions", "rt60", "source_positions", "mic_positions",
             "sample_rate", "max_image_order", "speed_of_sound"}
    unknown = set(spec) - known
    if unknown:
        raise ValueError(f"unknown room config keys: {sorted(unknown)}")
    return RoomSpec(**spec)


def load_room_config(path: str | Path) -> RoomSpec:
    with open(path) as fh:
        return room_from_dict(json.load(fh))


def write_geometry_sidecar(path: str | Path, room: RoomSpec, extra: dict | None = None) -> None:
    """Record the exact simulated geometry next to the rendered audio."""
    payload = room_to_dict(room)
    pos = room.mic_positions
    diffs = pos[:, None, :] - pos[None, :, :]
    payload["mic_pair_distances"] = np.sqrt((diffs ** 2).sum(axis=2)).tolist()
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
