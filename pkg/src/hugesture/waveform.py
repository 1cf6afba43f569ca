"""Baseband chirp pulse, M-pulse frame waveform and matched-filter reference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import FrameParams, validate


@dataclass(frozen=True)
class PulseSamples:
    samples: np.ndarray
    sample_rate: float
    duration: float

    @property
    def energy(self) -> float:
        return float(np.vdot(self.samples, self.samples).real)

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class FrameWaveform:
    pulse: PulseSamples
    pri_samples: int
    pulse_count: int

    @property
    def samples(self) -> np.ndarray:
        slot = np.zeros(self.pri_samples, dtype=complex)
        slot[:len(self.pulse)] = self.pulse.samples
        return np.tile(slot, self.pulse_count)


def chirp_phase(t, params: FrameParams):
    """Phase of the linear chirp at time ``t`` (seconds from pulse start).

    Instantaneous frequency runs from -B/2 at t=0 to +B/2 at t=tau.
    """
    B, tau = params.bandwidth, params.pulse_width
    t = np.asarray(t, dtype=float)
    return np.pi * (B / tau) * t * t - np.pi * B * t


def chirp(t, params: FrameParams) -> np.ndarray:
    """Complex chirp evaluated at arbitrary times, zero outside [0, tau)."""
    t = np.asarray(t, dtype=float)
    inside = (t >= 0) & (t < params.pulse_width)
    return np.where(inside, np.exp(1j * chirp_phase(t, params)), 0)


def chirp_pulse(params: FrameParams) -> PulseSamples:
    p = validate(params)
    t = np.arange(p.pulse_samples) / p.fast_time_rate
    return PulseSamples(np.exp(1j * chirp_phase(t, p)), p.fast_time_rate, p.pulse_width)


def frame_waveform(params: FrameParams) -> FrameWaveform:
    p = validate(params)
    return FrameWaveform(chirp_pulse(p), p.pri_samples, p.pulses_per_frame)


def matched_reference(pulse: PulseSamples) -> PulseSamples:
    """Time-reversed conjugate of ``pulse`` scaled to unit energy."""
    if len(pulse) == 0:
        raise ValueError("empty pulse")
    e = pulse.energy
    if not e > 0:
        raise ValueError("zero-energy pulse has no matched reference")
    ref = np.conj(pulse.samples[::-1]) / np.sqrt(e)
    return PulseSamples(ref, pulse.sample_rate, pulse.duration)
