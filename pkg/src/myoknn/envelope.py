"""Linear envelope extraction: full-wave rectification then a 2nd-order
Butterworth low-pass, applied one sample at a time (window length 1).

The low-pass is a single biquad obtained by the bilinear transform of the
analog prototype ``H(s) = 1 / (s^2 + sqrt(2) s + 1)`` with the cutoff
prewarped, so the -3 dB point lands exactly on ``cutoff_hz``.  Filtering
uses direct form II transposed, one delay pair per channel::

    y[n]  = b0 x[n] + s1[n-1]
    s1[n] = b1 x[n] - a1 y[n] + s2[n-1]
    s2[n] = b2 x[n] - a2 y[n]

which realises ``y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]``.
Block and streaming paths share the same step, so splitting a stream at
any point gives bit-identical output.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigurationError, StructuralError

DEFAULT_CHANNELS = 8
DEFAULT_CUTOFF_HZ = 1.0
DEFAULT_RATE_HZ = 200.0


@dataclass(frozen=True)
class Sample:
    """One multichannel reading.

    Used both for raw signal samples and for envelope samples; envelope
    values are nonnegative by intent but may dip slightly below zero
    because the Butterworth impulse response undershoots.
    """

    channels: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=float)
        if ch.ndim != 1 or ch.size < 1:
            raise StructuralError("a sample needs a 1-D vector of >= 1 channels")
        object.__setattr__(self, "channels", ch)


RawSample = Sample
EnvelopeSample = Sample


@dataclass(frozen=True)
class BiquadCoefficients:
    b0: float
    b1: float
    b2: float
    a1: float
    a2: float
    cutoff_hz: float
    sample_rate_hz: float

    @property
    def dc_gain(self) -> float:
        return (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)

    def poles(self) -> np.ndarray:
        return np.roots([1.0, self.a1, self.a2])

    def response(self, freq_hz) -> np.ndarray:
        """Complex frequency response evaluated on the unit circle."""
        w = 2.0 * np.pi * np.asarray(freq_hz, dtype=float) / self.sample_rate_hz
        zi = np.exp(-1j * w)
        num = self.b0 + self.b1 * zi + self.b2 * zi * zi
        den = 1.0 + self.a1 * zi + self.a2 * zi * zi
        return num / den

    def magnitude(self, freq_hz) -> np.ndarray:
        return np.abs(self.response(freq_hz))


def design_butterworth(cutoff_hz: float = DEFAULT_CUTOFF_HZ,
                       sample_rate_hz: float = DEFAULT_RATE_HZ) -> BiquadCoefficients:
    """Design the 2nd-order Butterworth low-pass biquad.

    Raises:
        ConfigurationError: if the cutoff is not inside (0, Nyquist).
    """
    cutoff_hz = float(cutoff_hz)
    sample_rate_hz = float(sample_rate_hz)
    if not (sample_rate_hz > 0 and 0 < cutoff_hz < sample_rate_hz / 2):
        raise ConfigurationError(
            f"cutoff {cutoff_hz} Hz must lie in (0, {sample_rate_hz / 2}) Hz")
    k = math.tan(math.pi * cutoff_hz / sample_rate_hz)
    k2 = k * k
    norm = 1.0 / (1.0 + math.sqrt(2.0) * k + k2)
    b0 = k2 * norm
    a1 = 2.0 * (k2 - 1.0) * norm
    a2 = (1.0 - math.sqrt(2.0) * k + k2) * norm
    return BiquadCoefficients(b0, 2.0 * b0, b0, a1, a2, cutoff_hz, sample_rate_hz)


class FilterState:
    """Delay registers of one stream, two per channel, zero at stream start.

    Single owner; do not share one state between concurrent streams.
    """

    def __init__(self, channel_count: int = DEFAULT_CHANNELS):
        if channel_count < 1:
            raise StructuralError("channel count must be >= 1")
        self.registers = np.zeros((2, int(channel_count)))

    @property
    def channel_count(self) -> int:
        return self.registers.shape[1]

    def reset(self) -> None:
        self.registers[:] = 0.0


def _step(state: FilterState, c: BiquadCoefficients, x: np.ndarray) -> np.ndarray:
    s = state.registers
    y = c.b0 * x + s[0]
    s[0] = c.b1 * x - c.a1 * y + s[1]
    s[1] = c.b2 * x - c.a2 * y
    return y


def rectify(sample: Sample) -> Sample:
    return Sample(np.abs(sample.channels), sample.timestamp)


def filter_step(state: FilterState, coeffs: BiquadCoefficients, sample: Sample) -> Sample:
    """Advance ``state`` by one sample and return the filtered sample."""
    if sample.channels.shape[0] != state.channel_count:
        raise StructuralError(
            f"sample has {sample.channels.shape[0]} channels, "
            f"filter state has {state.channel_count}")
    return Sample(_step(state, coeffs, sample.channels), sample.timestamp)


def filter_block(state: FilterState, coeffs: BiquadCoefficients, x: np.ndarray) -> np.ndarray:
    """Filter an (n, channels) block, continuing from ``state``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != state.channel_count:
        raise StructuralError(
            f"block shape {x.shape} does not match {state.channel_count} channels")
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        out[i] = _step(state, coeffs, x[i])
    return out


def envelope_block(raw: np.ndarray, cutoff_hz: float = DEFAULT_CUTOFF_HZ,
                   sample_rate_hz: float = DEFAULT_RATE_HZ,
                   state: FilterState | None = None) -> np.ndarray:
    """Rectify and low-pass an (n, channels) array; one output row per input row."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise StructuralError("expected an (n, channels) array")
    coeffs = design_butterworth(cutoff_hz, sample_rate_hz)
    if state is None:
        state = FilterState(raw.shape[1])
    return filter_block(state, coeffs, np.abs(raw))


def envelope_stream(raw: Iterable[Sample], cutoff_hz: float = DEFAULT_CUTOFF_HZ,
                    sample_rate_hz: float = DEFAULT_RATE_HZ) -> Iterator[Sample]:
    """Lazily turn raw samples into envelope samples (cold-started filter).

    Timestamps must be strictly increasing; the channel count is taken from
    the first sample.
    """
    coeffs = design_butterworth(cutoff_hz, sample_rate_hz)
    state = None
    last_t = -math.inf
    for sample in raw:
        if state is None:
            state = FilterState(sample.channels.shape[0])
        if not sample.timestamp > last_t:
            raise StructuralError(
                f"timestamp {sample.timestamp} does not increase past {last_t}")
        last_t = sample.timestamp
        yield filter_step(state, coeffs, rectify(sample))
