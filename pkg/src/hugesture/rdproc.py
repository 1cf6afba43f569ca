"""Range-Doppler processing: I/Q demodulation, matched filter, slow-time FFT.

Image convention: rows are Doppler bins (N, FFT-shifted so row N/2 is zero
velocity and velocity increases with the row index), columns are range
bins of the ROI. Pixels hold linear power |X|^2.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import signal

from .echosim import Recording, passband_rate
from .params import PARAMS_BLOCK, FrameParams, derive, validate
from .waveform import PulseSamples, chirp_pulse, matched_reference

CUBE_MAGIC = b"HUGC"
CUBE_VERSION = 1
_CUBE_PREFIX = struct.Struct("<4sH")
_CUBE_COUNT = struct.Struct("<I")
CUBE_HEADER_SIZE = _CUBE_PREFIX.size + PARAMS_BLOCK.size + _CUBE_COUNT.size

# PGM export maps [peak - PGM_DYNAMIC_RANGE_DB, peak] dB linearly onto 0..65535.
PGM_DYNAMIC_RANGE_DB = 60.0


@dataclass
class RangeDopplerImage:
    magnitudes: np.ndarray      # (N, range_bins) linear power
    velocity_axis: np.ndarray   # m/s per Doppler row
    range_axis: np.ndarray      # m per range column
    frame_index: int = 0

    @property
    def shape(self):
        return self.magnitudes.shape


@dataclass
class RdCube:
    params: FrameParams
    images: list = field(default_factory=list)
    label: Optional[str] = None
    subject: int = 0

    def __len__(self):
        return len(self.images)

    def __iter__(self):
        return iter(self.images)

    def as_array(self) -> np.ndarray:
        return np.stack([im.magnitudes for im in self.images]) if self.images else \
            np.zeros((0, self.params.fft_points, self.params.range_bins))


def velocity_axis(params: FrameParams) -> np.ndarray:
    N = params.fft_points
    return (np.arange(N) - N // 2) * derive(params).velocity_bin_width


def range_axis(params: FrameParams) -> np.ndarray:
    bins = params.roi_start_bin + np.arange(params.range_bins)
    return bins * params.sound_speed / (2 * params.fast_time_rate)


def doppler_window(params: FrameParams) -> np.ndarray:
    """Periodic Hann taper over the M slow-time samples."""
    return signal.windows.hann(params.pulses_per_frame, sym=False)


# --- I/Q demodulation -----------------------------------------------------

def lowpass_taps(params: FrameParams, rate: float) -> np.ndarray:
    """Linear-phase FIR: flat to 2B, >= 60 dB down from 3B."""
    B = params.bandwidth
    numtaps, beta = signal.kaiserord(65.0, (B) / (0.5 * rate))
    numtaps |= 1
    return signal.firwin(numtaps, 2.5 * B, window=("kaiser", beta), fs=rate)


def iq_demodulate(passband: np.ndarray, params: FrameParams, rate: Optional[float] = None) -> np.ndarray:
    """Demodulate a real carrier signal to complex baseband at Fs.

    ``passband`` holds one frame (or any whole number of PRIs) sampled at
    ``rate`` (default: the simulator's passband rate). The result is shaped
    (pulses, floor(T*Fs)). A pure carrier comes out as the constant 1/2.
    """
    p = validate(params)
    rate = passband_rate(p) if rate is None else float(rate)
    if rate < 2 * (p.carrier_freq + p.bandwidth / 2):
        raise ValueError("passband rate below 2(fc + B/2)")
    dec = rate / p.fast_time_rate
    if abs(dec - round(dec)) > 1e-9:
        raise ValueError("passband rate must be an integer multiple of Fs")
    dec = int(round(dec))
    x = np.asarray(passband, dtype=float).ravel()
    n = np.arange(len(x))
    mixed = x * np.exp(-2j * np.pi * p.carrier_freq * n / rate)
    h = lowpass_taps(p, rate)
    delay = (len(h) - 1) // 2
    y = signal.oaconvolve(mixed, h, mode="full")[delay:delay + len(x)]
    y = y[::dec]
    slot = p.pri_samples
    whole = len(y) // slot
    return y[:whole * slot].reshape(whole, slot)


# --- fast time --------------------------------------------------------------

def _reference_for(params: FrameParams) -> PulseSamples:
    return matched_reference(chirp_pulse(params))


def matched_filter(frame: np.ndarray, reference: PulseSamples) -> np.ndarray:
    """Correlate each pulse's receive window with the transmitted chirp.

    Output bin k of row m holds the response to a round-trip delay of k/Fs
    after pulse m. The frame is treated as one continuous record, so echo
    tails crossing into the next PRI still contribute; the record ends at
    the frame boundary. Computed with FFTs.
    """
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise ValueError("frame must be 2-D (pulses x samples)")
    h = np.asarray(reference.samples)
    L = len(h)
    if L > frame.size:
        raise ValueError("reference longer than the frame")
    x = frame.ravel()
    # y[n] = sum_k x[n+k] * conj(pulse[k]); reference is conj(pulse[::-1]) / sqrt(E)
    n = len(x) + L - 1
    nfft = 1 << int(np.ceil(np.log2(n)))
    y = np.fft.ifft(np.fft.fft(x, nfft) * np.fft.fft(h, nfft))[L - 1:L - 1 + len(x)]
    return y.reshape(frame.shape)


def matched_filter_direct(frame: np.ndarray, reference: PulseSamples) -> np.ndarray:
    """Time-domain form of :func:`matched_filter` (slow; reference oracle)."""
    frame = np.asarray(frame)
    x = frame.ravel()
    h = np.asarray(reference.samples)
    L = len(h)
    xp = np.concatenate([x, np.zeros(L - 1, dtype=complex)])
    out = np.zeros(len(x), dtype=complex)
    for n in range(len(x)):
        out[n] = np.dot(xp[n:n + L], h[::-1])
    return out.reshape(frame.shape)


# --- slow time --------------------------------------------------------------

def doppler_spectrum(profiles: np.ndarray, params: FrameParams) -> np.ndarray:
    """Complex slow-time spectrum of the ROI, before taking magnitude.

    Uses the positive-exponent DFT so that a positive range rate lands on
    a positive-velocity row.
    """
    p = params
    roi = profiles[:, p.roi_start_bin:p.roi_start_bin + p.range_bins]
    w = doppler_window(p)[:, None]
    N = p.fft_points
    spec = np.fft.ifft(roi * w, n=N, axis=0) * N
    return np.fft.fftshift(spec, axes=0)


def doppler_matrix(params: FrameParams) -> np.ndarray:
    """(N, M) matrix equal to window, zero-pad, DFT and shift in one product."""
    N, M = params.fft_points, params.pulses_per_frame
    k = np.arange(N)[:, None] - N // 2
    m = np.arange(M)[None, :]
    return np.exp(2j * np.pi * k * m / N) * doppler_window(params)[None, :]


def doppler_fft(profiles: np.ndarray, params: FrameParams, frame_index: int = 0) -> RangeDopplerImage:
    spec = doppler_spectrum(profiles, params)
    power = spec.real ** 2 + spec.imag ** 2
    return RangeDopplerImage(power, velocity_axis(params), range_axis(params), frame_index)


def process_frame(frame: np.ndarray, params: FrameParams, reference: Optional[PulseSamples] = None,
                  frame_index: int = 0) -> RangeDopplerImage:
    ref = reference if reference is not None else _reference_for(params)
    return doppler_fft(matched_filter(frame, ref), params, frame_index)


class FrameProcessor:
    """Reusable per-frame pipeline with the reference precomputed."""

    def __init__(self, params: FrameParams):
        self.params = validate(params)
        self.reference = _reference_for(self.params)
        self.frame_shape = (self.params.pulses_per_frame, self.params.pri_samples)
        self._vel = velocity_axis(self.params)
        self._rng = range_axis(self.params)
        self._lo = self.params.roi_start_bin
        self._hi = self._lo + self.params.range_bins
        self._dft = doppler_matrix(self.params)

    def __call__(self, frame: np.ndarray, frame_index: int = 0) -> RangeDopplerImage:
        if frame.shape != self.frame_shape:
            raise ValueError(f"corrupt frame {frame_index}: shape {frame.shape}, "
                             f"expected {self.frame_shape}")
        profiles = matched_filter(frame, self.reference)
        spec = self._dft @ profiles[:, self._lo:self._hi]
        power = spec.real ** 2 + spec.imag ** 2
        return RangeDopplerImage(power, self._vel, self._rng, frame_index)


def process_recording(rec: Recording) -> RdCube:
    proc = FrameProcessor(rec.params)
    frames = np.asarray(rec.frames)
    if frames.ndim != 3:
        raise ValueError("recording frames must be (F, M, samples)")
    images = [proc(fr, i) for i, fr in enumerate(frames)]
    return RdCube(rec.params, images, rec.label, rec.subject)


# --- files -----------------------------------------------------------------

def write_cube(path, cube: RdCube) -> None:
    with open(path, "wb") as fh:
        fh.write(_CUBE_PREFIX.pack(CUBE_MAGIC, CUBE_VERSION))
        fh.write(cube.params.pack())
        fh.write(_CUBE_COUNT.pack(len(cube)))
        for im in cube.images:
            fh.write(np.ascontiguousarray(im.magnitudes, dtype="<f4").tobytes())


def read_cube(path) -> RdCube:
    from .echosim import FormatError
    data = Path(path).read_bytes()
    if len(data) < CUBE_HEADER_SIZE:
        raise FormatError(f"{path}: truncated cube header", len(data))
    magic, version = _CUBE_PREFIX.unpack_from(data, 0)
    if magic != CUBE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", 0)
    if version != CUBE_VERSION:
        raise FormatError(f"{path}: unsupported cube version {version}", 4)
    params = FrameParams.unpack(data[_CUBE_PREFIX.size:_CUBE_PREFIX.size + PARAMS_BLOCK.size])
    (count,) = _CUBE_COUNT.unpack_from(data, _CUBE_PREFIX.size + PARAMS_BLOCK.size)
    shape = (params.fft_points, params.range_bins)
    nb = 4 * shape[0] * shape[1]
    if len(data) - CUBE_HEADER_SIZE != count * nb:
        raise FormatError(f"{path}: payload size does not match {count} frames", CUBE_HEADER_SIZE)
    a = np.frombuffer(data, dtype="<f4", offset=CUBE_HEADER_SIZE).astype(np.float64)
    a = a.reshape((count,) + shape)
    va, ra = velocity_axis(params), range_axis(params)
    return RdCube(params, [RangeDopplerImage(a[i], va, ra, i) for i in range(count)])


def pgm_bytes(image: RangeDopplerImage, dynamic_range_db: float = PGM_DYNAMIC_RANGE_DB) -> bytes:
    """16-bit binary PGM of one image, Doppler rows by range columns.

    Pixel value = 65535 * (10*log10(P/Pmax) + DR) / DR, clipped to [0, 65535].
    """
    P = np.asarray(image.magnitudes, dtype=float)
    peak = P.max() if P.size else 0.0
    if peak > 0:
        db = 10 * np.log10(np.maximum(P, peak * 1e-30) / peak)
        v = np.clip(np.round(65535 * (db + dynamic_range_db) / dynamic_range_db), 0, 65535)
    else:
        v = np.zeros_like(P)
    h, w = P.shape
    return f"P5\n{w} {h}\n65535\n".encode() + v.astype(">u2").tobytes()


def write_pgm(path, image: RangeDopplerImage, dynamic_range_db: float = PGM_DYNAMIC_RANGE_DB) -> None:
    Path(path).write_bytes(pgm_bytes(image, dynamic_range_db))
