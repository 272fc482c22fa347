"""Synthetic baseband I/Q frames.

Received frames follow the flat-fading model

    r[n] = A * exp(j * (dtheta + 2*pi*df*n/N)) * s[n] + w[n]

where ``A`` is a Rayleigh gain, ``dtheta`` a carrier phase offset, ``df`` the
normalized carrier frequency offset and ``w`` complex white Gaussian noise
scaled so that the *realized* energy ratio hits the requested SNR exactly.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._rng import child_seeds

SPEED_OF_LIGHT = 299_792_458.0
DEFAULT_FRAME_LENGTH = 100
MAX_PHASE_OFFSET = math.pi / 16


class Modulation(enum.IntEnum):
    """Modulation schemes; the integer value doubles as the class index."""

    BPSK = 0
    QPSK = 1
    PSK8 = 2
    QAM16 = 3

    @classmethod
    def parse(cls, value) -> "Modulation":
        if isinstance(value, cls):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        name = str(value).upper().replace("-", "")
        aliases = {"8PSK": "PSK8", "16QAM": "QAM16"}
        return cls[aliases.get(name, name)]

    @property
    def order(self) -> int:
        return len(constellation(self))


def _gray(k: int) -> int:
    return k ^ (k >> 1)


def _build_constellations() -> dict:
    bpsk = np.array([1.0, -1.0], dtype=complex)

    # index bits (b1 b0): I from b0, Q from b1 -> 0 maps to (1+j)/sqrt2
    qpsk = np.empty(4, dtype=complex)
    for idx in range(4):
        b0, b1 = idx & 1, (idx >> 1) & 1
        qpsk[idx] = ((1 - 2 * b0) + 1j * (1 - 2 * b1)) / math.sqrt(2)

    psk8 = np.empty(8, dtype=complex)
    for k in range(8):
        psk8[_gray(k)] = np.exp(2j * math.pi * k / 8)

    # Gray-coded 4-level axis: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3
    axis = {0b00: -3.0, 0b01: -1.0, 0b11: 1.0, 0b10: 3.0}
    qam16 = np.empty(16, dtype=complex)
    for idx in range(16):
        qam16[idx] = (axis[(idx >> 2) & 3] + 1j * axis[idx & 3]) / math.sqrt(10)

    return {
        Modulation.BPSK: bpsk,
        Modulation.QPSK: qpsk,
        Modulation.PSK8: psk8,
        Modulation.QAM16: qam16,
    }


_CONSTELLATIONS = _build_constellations()


def constellation(scheme) -> np.ndarray:
    """Unit average-energy constellation points, indexed by Gray label."""
    return _CONSTELLATIONS[Modulation.parse(scheme)].copy()


@dataclass(frozen=True)
class ChannelRealization:
    gain: float
    phase_offset: float
    cfo: float
    snr_db: float
    rng_seed: int = 0

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError(f"channel gain must be positive, got {self.gain}")
        if not 0.0 <= self.phase_offset <= MAX_PHASE_OFFSET:
            raise ValueError(f"phase offset {self.phase_offset} outside [0, pi/16]")
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.gain, self.phase_offset, self.cfo, self.snr_db])


@dataclass
class IqFrame:
    samples: np.ndarray
    label: Optional[Modulation] = None
    channel: Optional[ChannelRealization] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.samples.ndim != 1 or self.samples.size < 2:
            raise ValueError("a frame needs at least 2 complex samples")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("frame samples must be finite")

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class CfoRegimeMix:
    """Mixture over frequency-offset regimes (one uniform interval each)."""

    intervals: tuple = ((0.0, 0.01), (0.01, 0.1), (0.1, 1.0), (1.0, 20.0))
    proportions: tuple = (0.25, 0.25, 0.25, 0.25)

    def __post_init__(self):
        p = np.asarray(self.proportions, dtype=float)
        if len(self.intervals) != p.size:
            raise ValueError("one proportion per regime interval is required")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"regime proportions must be a probability vector, got {p}")
        for lo, hi in self.intervals:
            if lo > hi:
                raise ValueError(f"regime interval [{lo}, {hi}] is reversed")


# Per-client mobility mixes used for the frequency-offset heterogeneity study.
CLIENT_CFO_PROPORTIONS = (
    (0.4, 0.4, 0.1, 0.1),
    (0.4, 0.1, 0.4, 0.1),
    (0.1, 0.4, 0.4, 0.1),
    (0.1, 0.1, 0.4, 0.4),
)


@dataclass(frozen=True)
class DopplerParams:
    relative_speed: float
    sample_rate: float
    light_speed: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if self.relative_speed < 0:
            raise ValueError("relative speed must be non-negative")
        if not self.sample_rate > 0:
            raise ValueError("sample rate must be positive")
        if self.relative_speed >= self.light_speed:
            raise ValueError("relative speed must be far below the speed of light")


def modulate(scheme, symbol_indices) -> np.ndarray:
    points = _CONSTELLATIONS[Modulation.parse(scheme)]
    idx = np.asarray(symbol_indices)
    if idx.size and (not np.issubdtype(idx.dtype, np.integer) or idx.min() < 0 or idx.max() >= points.size):
        raise ValueError(f"symbol indices must be integers in [0, {points.size})")
    return points[idx.astype(np.intp)]


def signal_energy(x) -> float:
    x = np.asarray(x)
    return float(np.sum(x.real**2 + x.imag**2))


def realized_snr_db(signal, noise) -> float:
    return 10.0 * math.log10(signal_energy(signal) / signal_energy(noise))


def scale_noise_for_snr(signal, raw_noise, snr_db: float) -> np.ndarray:
    """Scale ``raw_noise`` so that ``10 log10(E_sig / E_noise) == snr_db``."""
    signal = np.asarray(signal)
    raw_noise = np.asarray(raw_noise)
    if signal.shape != raw_noise.shape:
        raise ValueError(f"signal {signal.shape} and noise {raw_noise.shape} shapes differ")
    e_noise = signal_energy(raw_noise)
    if e_noise == 0.0:
        raise ValueError("raw noise has zero energy; cannot calibrate SNR")
    target = signal_energy(signal) / 10.0 ** (snr_db / 10.0)
    return raw_noise * math.sqrt(target / e_noise)


def channel_rotation(length: int, ch: ChannelRealization) -> np.ndarray:
    n = np.arange(length)
    return ch.gain * np.exp(1j * (ch.phase_offset + 2.0 * math.pi * ch.cfo * n / length))


def apply_channel(symbols, ch: ChannelRealization, rng: Optional[np.random.Generator] = None, label=None) -> IqFrame:
    """Pass symbols through the flat channel; ``rng=None`` gives the noiseless output."""
    symbols = np.asarray(symbols, dtype=complex)
    if symbols.size == 0:
        raise ValueError("cannot transmit an empty symbol sequence")
    faded = channel_rotation(symbols.size, ch) * symbols
    if rng is None:
        return IqFrame(faded, label, ch)
    if signal_energy(faded) == 0.0:
        raise ValueError("zero-energy symbol sequence; cannot calibrate SNR")
    raw = rng.standard_normal(symbols.size) + 1j * rng.standard_normal(symbols.size)
    return IqFrame(faded + scale_noise_for_snr(faded, raw, ch.snr_db), label, ch)


def doppler_offset(p: DopplerParams) -> float:
    return p.relative_speed / (p.sample_rate * p.light_speed)


def sample_cfo(mix: CfoRegimeMix, rng: np.random.Generator) -> float:
    regime = rng.choice(len(mix.intervals), p=np.asarray(mix.proportions, dtype=float))
    lo, hi = mix.intervals[regime]
    return float(rng.uniform(lo, hi))


@dataclass(frozen=True)
class ChannelLaw:
    """Distribution over channel realizations for one client or pool.

    ``cfo`` is either a fixed normalized offset or a :class:`CfoRegimeMix`.
    """

    snr_range: tuple = (-10.0, 10.0)
    cfo: object = 0.01
    frame_length: int = DEFAULT_FRAME_LENGTH

    def draw(self, rng: np.random.Generator, seed: int = 0) -> ChannelRealization:
        gain = float(rng.rayleigh(1.0))
        phase = float(rng.uniform(0.0, MAX_PHASE_OFFSET))
        cfo = sample_cfo(self.cfo, rng) if isinstance(self.cfo, CfoRegimeMix) else float(self.cfo)
        lo, hi = self.snr_range
        snr = float(lo) if lo == hi else float(rng.uniform(lo, hi))
        return ChannelRealization(gain, phase, cfo, snr, int(seed))


def generate_frame(scheme, law: ChannelLaw, seed: int) -> IqFrame:
    """One frame, fully determined by ``seed``."""
    scheme = Modulation.parse(scheme)
    rng = np.random.default_rng(int(seed))
    ch = law.draw(rng, seed)
    symbols = modulate(scheme, rng.integers(0, scheme.order, size=law.frame_length))
    return apply_channel(symbols, ch, rng, label=scheme)


def generate_frames(scheme, count: int, law: ChannelLaw, rng: np.random.Generator) -> "FrameSet":
    """``count`` frames of one class; each frame owns a seed drawn from ``rng``."""
    scheme = Modulation.parse(scheme)
    seeds = child_seeds(rng, count)
    frames = [generate_frame(scheme, law, s) for s in seeds]
    return FrameSet.from_frames(frames, law.frame_length)


@dataclass
class FrameSet:
    """A pool of equal-length frames stored as arrays.

    ``labels`` uses -1 for unlabeled frames; ``channel`` rows hold
    ``(gain, phase_offset, cfo, snr_db)``.
    """

    samples: np.ndarray
    labels: np.ndarray
    channel: np.ndarray = field(default=None)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.samples.ndim != 2:
            raise ValueError("FrameSet samples must be 2-D (frames x samples)")
        n = self.samples.shape[0]
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(n)
        if self.channel is None:
            self.channel = np.full((n, 4), np.nan)
        self.channel = np.asarray(self.channel, dtype=float).reshape(n, 4)

    @classmethod
    def empty(cls, frame_length: int = DEFAULT_FRAME_LENGTH) -> "FrameSet":
        return cls(np.zeros((0, frame_length), complex), np.zeros(0, np.int64), np.zeros((0, 4)))

    @classmethod
    def from_frames(cls, frames: Sequence[IqFrame], frame_length: int = DEFAULT_FRAME_LENGTH) -> "FrameSet":
        if not frames:
            return cls.empty(frame_length)
        samples = np.stack([f.samples for f in frames])
        labels = [-1 if f.label is None else int(f.label) for f in frames]
        channel = [f.channel.as_array() if f.channel is not None else np.full(4, np.nan) for f in frames]
        return cls(samples, labels, np.stack(channel))

    @classmethod
    def concat(cls, parts: Sequence["FrameSet"]) -> "FrameSet":
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([p.samples for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.channel for p in parts]),
        )

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def frame_length(self) -> int:
        return self.samples.shape[1]

    def __getitem__(self, i) -> IqFrame:
        label = None if self.labels[i] < 0 else Modulation(int(self.labels[i]))
        ch = None
        if not np.any(np.isnan(self.channel[i])):
            g, p, f, s = self.channel[i]
            ch = ChannelRealization(g, p, f, s)
        return IqFrame(self.samples[i], label, ch)

    def subset(self, idx) -> "FrameSet":
        return FrameSet(self.samples[idx], self.labels[idx], self.channel[idx])

    def class_counts(self, num_classes: int) -> np.ndarray:
        known = self.labels[self.labels >= 0]
        return np.bincount(known, minlength=num_classes)[:num_classes]

    def unlabeled(self) -> "FrameSet":
        return FrameSet(self.samples, np.full(len(self), -1), self.channel)

    def as_real(self) -> np.ndarray:
        """Encoder input layout: ``(frames, 2, samples)`` with I then Q."""
        return np.stack([self.samples.real, self.samples.imag], axis=1)
