"""System parameter set and the resolution quantities derived from it."""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass, fields, replace

# Little-endian: 8 float64 slots (6 used, 2 reserved) followed by 4 uint32.
PARAMS_BLOCK = struct.Struct("<8d4I")

_FLOAT_FIELDS = ("sound_speed", "carrier_freq", "bandwidth", "pri",
                 "pulse_width", "fast_time_rate")
_INT_FIELDS = ("pulses_per_frame", "fft_points", "range_bins", "roi_start_bin")


class InvalidParams(ValueError):
    """Raised when a parameter set violates one or more invariants.

    ``errors`` holds every violation message, not just the first.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class FrameParams:
    sound_speed: float = 340.0        # c [m/s]
    carrier_freq: float = 300e3       # fc [Hz]
    bandwidth: float = 20e3           # B [Hz]
    pri: float = 600e-6               # T [s]
    pulses_per_frame: int = 12        # M
    pulse_width: float = 200e-6       # tau [s]
    fast_time_rate: float = 400e3     # Fs [Hz]
    fft_points: int = 256             # N
    range_bins: int = 180
    roi_start_bin: int = 0

    @property
    def wavelength(self) -> float:
        return self.sound_speed / self.carrier_freq

    @property
    def pri_samples(self) -> int:
        return int(math.floor(self.pri * self.fast_time_rate + 1e-9))

    @property
    def pulse_samples(self) -> int:
        return int(round(self.pulse_width * self.fast_time_rate))

    @property
    def frame_period(self) -> float:
        return self.pulses_per_frame * self.pri

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FrameParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidParams([f"unknown parameter {k!r}" for k in sorted(unknown)])
        kw = {}
        for k, v in d.items():
            kw[k] = int(v) if k in _INT_FIELDS else float(v)
        return cls(**kw)

    def replace(self, **changes) -> "FrameParams":
        return replace(self, **changes)

    def pack(self) -> bytes:
        floats = [getattr(self, k) for k in _FLOAT_FIELDS] + [0.0, 0.0]
        ints = [getattr(self, k) for k in _INT_FIELDS]
        return PARAMS_BLOCK.pack(*floats, *ints)

    @classmethod
    def unpack(cls, buf: bytes) -> "FrameParams":
        vals = PARAMS_BLOCK.unpack(buf)
        kw = dict(zip(_FLOAT_FIELDS, vals[:6]))
        kw.update(zip(_INT_FIELDS, vals[8:]))
        return cls(**kw)


# ROI placed over the 2.5-10.2 cm gesture zone; used by every shipped config.
DEFAULT_ROI_START = 60


def default_params() -> FrameParams:
    """Parameter set used by the CLI and the synthetic datasets."""
    return FrameParams(roi_start_bin=DEFAULT_ROI_START)


@dataclass(frozen=True)
class DerivedResolutions:
    range_resolution: float       # R_d [m]
    velocity_resolution: float    # v_d [m/s]
    unambiguous_range: float      # [m]
    unambiguous_velocity: float   # [m/s]
    velocity_bin_width: float     # [m/s]
    range_bin_width: float        # [m]


def check(params: FrameParams) -> list[str]:
    """Return the list of violated invariants (empty when valid)."""
    p = params
    errs = []
    if not p.sound_speed > 0:
        errs.append("sound speed must be > 0")
    if not p.bandwidth > 0:
        errs.append("bandwidth must be > 0")
    if not p.carrier_freq > p.bandwidth / 2:
        errs.append("carrier frequency must exceed half the bandwidth")
    if not p.pri > 0:
        errs.append("PRI must be > 0")
    if not 0 < p.pulse_width:
        errs.append("pulse width must be > 0")
    if not p.pulse_width < p.pri:
        errs.append("pulse width must be < PRI")
    if not p.fast_time_rate >= 2 * p.bandwidth:
        errs.append("fast-time rate below complex Nyquist")
    if p.pulses_per_frame < 1:
        errs.append("pulses per frame must be >= 1")
    if p.pulses_per_frame > p.fft_points:
        errs.append("pulses per frame must not exceed FFT points")
    if p.range_bins < 1:
        errs.append("range bins must be >= 1")
    if p.roi_start_bin < 0:
        errs.append("ROI start bin must be >= 0")
    if p.fast_time_rate > 0 and p.pri > 0:
        if p.range_bins + p.roi_start_bin > p.pri_samples:
            errs.append("ROI extends past the PRI (range_bins + roi_start_bin > floor(T*Fs))")
        if p.pulse_width > 0 and p.pulse_samples < 1:
            errs.append("pulse shorter than one fast-time sample")
    return errs


def validate(params: FrameParams) -> FrameParams:
    errs = check(params)
    if errs:
        raise InvalidParams(errs)
    return params


def derive(params: FrameParams) -> DerivedResolutions:
    """Compute range/velocity resolution and ambiguity limits.

    Range resolution is c/(2B); velocity resolution is lambda/(2MT).
    The unambiguous range is the distance sound covers in half a PRI,
    the unambiguous velocity lambda/(4T).
    """
    p = validate(params)
    lam = p.wavelength
    return DerivedResolutions(
        range_resolution=p.sound_speed / (2 * p.bandwidth),
        velocity_resolution=lam / (2 * p.pulses_per_frame * p.pri),
        unambiguous_range=p.sound_speed * p.pri / 2,
        unambiguous_velocity=lam / (4 * p.pri),
        velocity_bin_width=lam / (2 * p.fft_points * p.pri),
        range_bin_width=p.sound_speed / (2 * p.fast_time_rate),
    )
