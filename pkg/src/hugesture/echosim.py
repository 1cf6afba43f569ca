"""Synthetic echoes from scripted finger trajectories.

Stands in for the transducer front end and the human subjects: a gesture
is scripted as per-frame point scatterers (range, radial velocity,
reflectivity), then rendered to complex baseband frames of M pulses.

Velocities are range rates: positive means the finger moves away.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .params import PARAMS_BLOCK, FrameParams, default_params, derive, validate
from .waveform import chirp

GESTURES = ("no-finger", "finger-press", "button-on", "button-off",
            "motion-up", "motion-down", "screw")

RECORDING_MAGIC = b"HUGR"
RECORDING_VERSION = 1
_PREFIX = struct.Struct("<4sH")
_TRAILER = struct.Struct("<IBH")
HEADER_SIZE = _PREFIX.size + PARAMS_BLOCK.size + _TRAILER.size
STREAM_FRAME_COUNT = 0xFFFFFFFF  # frame count used when streaming an open-ended recording

SCENE_CENTER = 0.07


class FormatError(ValueError):
    def __init__(self, msg, offset=None):
        self.offset = offset
        if offset is not None:
            msg = f"{msg} (byte offset {offset})"
        super().__init__(msg)


@dataclass(frozen=True)
class Scatterer:
    r: float
    v: float
    reflectivity: float = 1.0
    id: str = ""


@dataclass(frozen=True)
class GestureScript:
    gesture_class: str
    duration_frames: int
    frames: tuple
    subject_seed: int = 0
    rng_seed: int = 0

    @property
    def label(self) -> int:
        return GESTURES.index(self.gesture_class)


@dataclass
class Recording:
    params: FrameParams
    frames: np.ndarray          # (F, M, pri_samples) complex
    label: str
    subject: int = 0
    truth: Optional[GestureScript] = None

    def __len__(self):
        return len(self.frames)


# --- kinematic templates -------------------------------------------------

@dataclass(frozen=True)
class Kinematics:
    peak_speed: float = 0.25      # m/s, active phase
    travel: float = 0.022         # m, motion-up/down displacement
    press_depth: float = 0.015    # m
    button_gap: float = 0.03      # m, separation before contact / after release
    screw_gap: float = 0.018      # m
    screw_speed: float = 0.15     # m/s
    base_frames: int = 60
    subject_speed: float = 0.2    # +-fraction
    subject_range: float = 0.01   # +-m
    subject_duration: float = 0.25
    sample_speed: float = 0.1
    sample_range: float = 0.003


KINEMATICS = {
    "default": Kinematics(),
    # Larger, faster, more uniform motions: classes separate cleanly.
    "exaggerated": Kinematics(peak_speed=0.3, travel=0.03, press_depth=0.02,
                              button_gap=0.035, screw_gap=0.022, screw_speed=0.2,
                              subject_speed=0.05, subject_range=0.003,
                              subject_duration=0.1, sample_speed=0.03,
                              sample_range=0.001),
}


def _active_frames(distance, speed, shape_area, tf):
    return max(4, int(round(distance / (speed * shape_area * tf))))


def _integrate(r0, v, tf):
    r = np.empty(len(v))
    r[0] = r0
    r[1:] = r0 + np.cumsum(v[:-1]) * tf
    return r


def script_gesture(gesture_class: str, subject_seed: int, rng_seed: int,
                   params: FrameParams | None = None,
                   kinematics: str | Kinematics = "default",
                   scene_center: float = SCENE_CENTER) -> GestureScript:
    """Script one gesture execution as per-frame scatterer lists.

    ``subject_seed`` fixes the per-subject style (speed, range offset,
    duration); ``rng_seed`` jitters the individual execution. The output
    is a pure function of the arguments.
    """
    if gesture_class not in GESTURES:
        raise ValueError(f"unknown gesture class {gesture_class!r}")
    p = params or default_params()
    kin = KINEMATICS[kinematics] if isinstance(kinematics, str) else kinematics
    tf = p.frame_period

    srng = np.random.default_rng([int(subject_seed), 17])
    s_speed = 1 + kin.subject_speed * srng.uniform(-1, 1)
    s_range = kin.subject_range * srng.uniform(-1, 1)
    s_dur = 1 + kin.subject_duration * srng.uniform(-1, 1)

    rng = np.random.default_rng([int(subject_seed), int(rng_seed), 23])
    speed = kin.peak_speed * s_speed * (1 + kin.sample_speed * rng.uniform(-1, 1))
    center = scene_center + s_range + kin.sample_range * rng.uniform(-1, 1)
    dist_jit = 1 + 0.15 * rng.uniform(-1, 1)
    refl = rng.uniform(0.6, 1.0, size=2)
    drift = 0.01 * rng.uniform(0, 1)
    dur = int(np.clip(round(kin.base_frames * s_dur * (1 + 0.1 * rng.uniform(-1, 1))), 30, 120))
    lead_frac = rng.uniform(0.2, 0.5)

    def timeline(active):
        d = int(min(120, max(dur, active + 8)))
        lead = int(round((d - active) * lead_frac))
        u = np.zeros(d)
        on = np.zeros(d, dtype=bool)
        k = np.arange(active)
        u[lead:lead + active] = (k + 0.5) / active
        on[lead:lead + active] = True
        u[lead + active:] = 1.0
        return d, u, on

    tracks = []   # (id, range, velocity, amplitude, present) per finger, arrays over frames
    if gesture_class == "no-finger":
        d = dur
    elif gesture_class in ("motion-up", "motion-down", "finger-press"):
        if gesture_class == "finger-press":
            depth = kin.press_depth * dist_jit
            active = _active_frames(depth, speed, 1 / np.pi, tf)
            d, u, on = timeline(active)
            v = np.where(on, -speed * np.sin(2 * np.pi * u), 0.0)
            r0 = center + depth / 2
        else:
            travel = kin.travel * dist_jit
            active = _active_frames(travel, speed, 0.5, tf)
            d, u, on = timeline(active)
            sign = -1.0 if gesture_class == "motion-up" else 1.0
            v = np.where(on, sign * speed * np.sin(np.pi * u) ** 2, 0.0)
            r0 = center - sign * travel / 2
        tracks.append(("index", _integrate(r0, v, tf), v, np.full(d, refl[0]), np.ones(d, bool)))
    elif gesture_class in ("button-on", "button-off"):
        gap = kin.button_gap * dist_jit
        thumb_r = center - gap / 2
        if gesture_class == "button-off":
            # index accelerates toward a nearly motionless thumb until contact
            active = _active_frames(gap, speed, 0.5, tf)
            d, u, on = timeline(active)
            v_idx = np.where(on, -speed * u, 0.0)
            r_idx = _integrate(thumb_r + gap, v_idx, tf)
            merged = (~on) & (u >= 1.0)
        else:
            # from contact, index accelerates away from a static thumb
            active = _active_frames(gap, speed, 2 / np.pi, tf)
            d, u, on = timeline(active)
            v_idx = np.where(on, speed * np.sin(np.pi * u), 0.0)
            r_idx = _integrate(thumb_r, v_idx, tf)
            merged = (~on) & (u <= 0.0)
        v_th = np.where(on, drift if gesture_class == "button-off" else 0.0, 0.0)
        r_th = _integrate(thumb_r, v_th, tf)
        r_idx = np.where(merged, r_th, r_idx)
        v_idx = np.where(merged, v_th, v_idx)
        # in contact the two fingers form one reflector
        a_th = np.where(merged, refl[1] + 0.5 * refl[0], refl[1])
        tracks.append(("thumb", r_th, v_th, a_th, np.ones(d, bool)))
        tracks.append(("index", r_idx, v_idx, np.full(d, refl[0]), ~merged))
    else:  # screw
        gap = kin.screw_gap * dist_jit
        active = max(20, int(round(0.3 / tf * (1 + 0.1 * rng.uniform(-1, 1)))))
        d, u, on = timeline(active)
        v1 = np.where(on, kin.screw_speed * s_speed * np.sin(4 * np.pi * u), 0.0)
        tracks.append(("thumb", _integrate(center - gap / 2, -v1, tf), -v1,
                       np.full(d, refl[1]), np.ones(d, bool)))
        tracks.append(("index", _integrate(center + gap / 2, v1, tf), v1,
                       np.full(d, refl[0]), np.ones(d, bool)))

    frames = []
    for k in range(d):
        sc = []
        for name, r, v, a, present in tracks:
            if present[k]:
                sc.append(Scatterer(float(r[k]), float(v[k]), float(a[k]), name))
        frames.append(tuple(sc))
    return GestureScript(gesture_class, d, tuple(frames), int(subject_seed), int(rng_seed))


# --- rendering -----------------------------------------------------------

def _pulse_schedule(script: GestureScript, params: FrameParams, stop_and_hop: bool):
    """Yield (pulse index, delay s, complex amplitude) for every echo."""
    M, T = params.pulses_per_frame, params.pri
    fc, c = params.carrier_freq, params.sound_speed
    rmax = derive(params).unambiguous_range
    idx, delay, amp = [], [], []
    m = np.arange(M)
    for f, scatterers in enumerate(script.frames):
        for s in scatterers:
            r = np.full(M, s.r) if stop_and_hop else s.r + s.v * m * T
            if np.any(r <= 0) or np.any(r >= rmax):
                raise ValueError(f"scatterer at {s.r:.4f} m: delay exceeding PRI "
                                 f"(unambiguous range {rmax:.4f} m)")
            d = 2 * r / c
            idx.append(f * M + m)
            delay.append(d)
            amp.append(s.reflectivity * np.exp(-2j * np.pi * fc * d))
    if not idx:
        return np.zeros(0, int), np.zeros(0), np.zeros(0, complex)
    return np.concatenate(idx), np.concatenate(delay), np.concatenate(amp)


def _render_timeline(script, params, rate, stop_and_hop, carrier):
    """Sum every echo onto one continuous timeline sampled at ``rate``.

    Echo tails that run past a PRI spill into the following slot, as they
    would on a real receiver.
    """
    F, M = script.duration_frames, params.pulses_per_frame
    slot = int(round(params.pri * rate))
    total = F * M * slot
    out = np.zeros(total, dtype=float if carrier else complex)
    idx, delay, amp = _pulse_schedule(script, params, stop_and_hop)
    if len(idx) == 0:
        return out
    L = int(np.ceil(params.pulse_width * rate)) + 1
    t0 = idx * params.pri + delay                              # echo start times
    n0 = np.ceil(t0 * rate - 1e-9).astype(np.int64)
    n = n0[:, None] + np.arange(L)[None, :]
    tt = n / rate - t0[:, None]
    vals = amp[:, None] * chirp(tt, params)
    if carrier:
        vals = (vals * np.exp(2j * np.pi * params.carrier_freq * n / rate)).real
    keep = n < total
    np.add.at(out, n[keep], vals[keep])
    return out


def render_echo(script: GestureScript, params: FrameParams, snr_db: Optional[float] = 10.0,
                rng_seed: int = 0, *, stop_and_hop: bool = False, subject: int = 0) -> Recording:
    """Render a script to complex baseband frames (F, M, floor(T*Fs)).

    Noise is circular complex Gaussian with per-sample power
    10**(-snr_db/10), i.e. relative to a unit-reflectivity echo.
    ``snr_db=None`` renders noise-free.
    """
    p = validate(params)
    if snr_db is not None and not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite (use None for noise-free)")
    P, M, F = p.pri_samples, p.pulses_per_frame, script.duration_frames
    x = _render_timeline(script, p, p.fast_time_rate, stop_and_hop, carrier=False)
    frames = x.reshape(F, M, P)
    if snr_db is not None:
        rng = np.random.default_rng([int(rng_seed), 101])
        sigma = np.sqrt(10 ** (-snr_db / 10) / 2)
        noise = rng.standard_normal((F, M, P, 2)) * sigma
        frames = frames + (noise[..., 0] + 1j * noise[..., 1])
    return Recording(p, frames, script.gesture_class, subject, script)


def passband_rate(params: FrameParams, oversample: int = 3) -> float:
    """Real-signal sampling rate of the passband mode (an integer multiple of Fs)."""
    rate = params.fast_time_rate * oversample
    if rate < 4 * params.carrier_freq:
        raise ValueError("passband rate must be at least 4*fc")
    return rate


def render_passband(script: GestureScript, params: FrameParams, oversample: int = 3,
                    stop_and_hop: bool = False) -> np.ndarray:
    """Noise-free real carrier-frequency echo, shape (F, M * T * rate).

    Only used to exercise I/Q demodulation; rate is
    ``passband_rate(params, oversample)``.
    """
    p = validate(params)
    rate = passband_rate(p, oversample)
    x = _render_timeline(script, p, rate, stop_and_hop, carrier=True)
    return x.reshape(script.duration_frames, -1)


# --- recording files ------------------------------------------------------

def encode_header(params: FrameParams, frame_count: int, label: int, subject: int) -> bytes:
    return (_PREFIX.pack(RECORDING_MAGIC, RECORDING_VERSION) + params.pack()
            + _TRAILER.pack(frame_count, label, subject))


def decode_header(buf: bytes, offset: int = 0):
    """Parse a HUGR header; returns (params, frame_count, label, subject)."""
    if len(buf) < HEADER_SIZE:
        raise FormatError("truncated recording header", offset + len(buf))
    magic, version = _PREFIX.unpack_from(buf, 0)
    if magic != RECORDING_MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset)
    if version != RECORDING_VERSION:
        raise FormatError(f"unsupported recording version {version}", offset + 4)
    params = FrameParams.unpack(buf[_PREFIX.size:_PREFIX.size + PARAMS_BLOCK.size])
    from .params import check
    errs = check(params)
    if errs:
        raise FormatError("invalid parameter block: " + "; ".join(errs), offset + _PREFIX.size)
    count, label, subject = _TRAILER.unpack_from(buf, _PREFIX.size + PARAMS_BLOCK.size)
    if label >= len(GESTURES):
        raise FormatError(f"label {label} out of range", offset + HEADER_SIZE - 3)
    return params, count, label, subject


def frame_nbytes(params: FrameParams) -> int:
    return params.pulses_per_frame * params.pri_samples * 8


def encode_frame(frame: np.ndarray) -> bytes:
    a = np.empty(frame.shape + (2,), dtype="<f4")
    a[..., 0] = frame.real
    a[..., 1] = frame.imag
    return a.tobytes()


def decode_frame(buf: bytes, params: FrameParams) -> np.ndarray:
    a = np.frombuffer(buf, dtype="<f4").astype(np.float64)
    z = a[0::2] + 1j * a[1::2]
    return z.reshape(params.pulses_per_frame, params.pri_samples)


def write_recording(path, rec: Recording) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_header(rec.params, len(rec.frames), GESTURES.index(rec.label), rec.subject))
        for fr in rec.frames:
            fh.write(encode_frame(fr))


def read_recording(path) -> Recording:
    data = Path(path).read_bytes()
    params, count, label, subject = decode_header(data)
    nb = frame_nbytes(params)
    body = len(data) - HEADER_SIZE
    if body != count * nb:
        raise FormatError(f"{path}: expected {count} frames of {nb} bytes, "
                          f"found {body} payload bytes", HEADER_SIZE)
    a = np.frombuffer(data, dtype="<f4", offset=HEADER_SIZE).astype(np.float64)
    frames = (a[0::2] + 1j * a[1::2]).reshape(count, params.pulses_per_frame, params.pri_samples)
    return Recording(params, frames, GESTURES[label], subject)


# --- datasets --------------------------------------------------------------

@dataclass
class DatasetConfig:
    params: FrameParams = field(default_factory=default_params)
    subjects: int = 9
    samples_per_class: dict = field(default_factory=lambda: {g: 50 for g in GESTURES})
    seed: int = 0
    snr_db: Optional[float] = 10.0
    kinematics: str = "default"
    stop_and_hop: bool = False

    @classmethod
    def reference_split(cls, **kw) -> "DatasetConfig":
        """6 gestures x 50 x 9 subjects plus 2700 no-finger samples (5400 total)."""
        per = {g: 50 for g in GESTURES}
        per["no-finger"] = 300
        return cls(samples_per_class=per, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        kw = {}
        if "params" in d:
            base = default_params().to_dict()
            base.update(d.pop("params"))
            kw["params"] = FrameParams.from_dict(base)
        per = d.pop("samples_per_class", None)
        if per is not None:
            if isinstance(per, int):
                per = {g: per for g in GESTURES}
            bad = set(per) - set(GESTURES)
            if bad:
                raise ValueError(f"unknown gesture classes in config: {sorted(bad)}")
            kw["samples_per_class"] = {g: int(per.get(g, 0)) for g in GESTURES}
        for k in ("subjects", "seed"):
            if k in d:
                kw[k] = int(d.pop(k))
        if "snr_db" in d:
            v = d.pop("snr_db")
            kw["snr_db"] = None if v is None else float(v)
        if "kinematics" in d:
            kw["kinematics"] = str(d.pop("kinematics"))
            if kw["kinematics"] not in KINEMATICS:
                raise ValueError(f"unknown kinematics preset {kw['kinematics']!r}")
        if "stop_and_hop" in d:
            kw["stop_and_hop"] = bool(d.pop("stop_and_hop"))
        d.pop("format", None)
        d.pop("version", None)
        if d:
            raise ValueError(f"unknown dataset config keys: {sorted(d)}")
        return cls(**kw)

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "subjects": self.subjects,
                "samples_per_class": dict(self.samples_per_class), "seed": self.seed,
                "snr_db": self.snr_db, "kinematics": self.kinematics,
                "stop_and_hop": self.stop_and_hop}


def _seed(*keys) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def dataset_entries(cfg: DatasetConfig) -> list[dict]:
    """Manifest entries (sorted by path) without rendering anything."""
    entries = []
    for s in range(1, cfg.subjects + 1):
        subject_seed = _seed(cfg.seed, s)
        for ci, g in enumerate(GESTURES):
            for i in range(cfg.samples_per_class.get(g, 0)):
                entries.append({
                    "path": f"recordings/s{s:02d}/{g}_{i:03d}.hugr",
                    "label": g,
                    "subject": s,
                    "seeds": {"subject": subject_seed, "gesture": _seed(cfg.seed, s, ci, i, 1),
                              "noise": _seed(cfg.seed, s, ci, i, 2)},
                    "snr_db": cfg.snr_db,
                })
    entries.sort(key=lambda e: e["path"])
    paths = [e["path"] for e in entries]
    if len(set(paths)) != len(paths):
        raise ValueError("duplicate output path in dataset")
    return entries


def render_entry(entry: dict, cfg: DatasetConfig) -> Recording:
    seeds = entry["seeds"]
    script = script_gesture(entry["label"], seeds["subject"], seeds["gesture"],
                            cfg.params, cfg.kinematics)
    return render_echo(script, cfg.params, entry["snr_db"], seeds["noise"],
                       stop_and_hop=cfg.stop_and_hop, subject=entry["subject"])


def iter_dataset(cfg: DatasetConfig) -> Iterator[tuple[dict, Recording]]:
    for e in dataset_entries(cfg):
        yield e, render_entry(e, cfg)


def manifest_json(cfg: DatasetConfig, entries: list[dict]) -> str:
    doc = {"format": "hugesture-manifest", "version": 1, "params": cfg.params.to_dict(),
           "dataset": cfg.to_dict(), "recordings": entries}
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def _render_and_write(args):
    entry, cfg, root = args
    rec = render_entry(entry, cfg)
    path = root / entry["path"]
    path.parent.mkdir(parents=True, exist_ok=True)
    write_recording(path, rec)
    return entry["path"]


def synth_dataset(cfg: DatasetConfig, out_dir, force: bool = False, jobs: int = 1) -> dict:
    """Render every recording of ``cfg`` into ``out_dir`` and write manifest.json.

    Returns the manifest document. Refuses a nonempty directory unless
    ``force`` is set.
    """
    root = Path(out_dir)
    if root.exists() and any(root.iterdir()) and not force:
        raise FileExistsError(f"output directory {root} is not empty (use force)")
    root.mkdir(parents=True, exist_ok=True)
    entries = dataset_entries(cfg)
    work = [(e, cfg, root) for e in entries]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as ex:
            list(ex.map(_render_and_write, work, chunksize=16))
    else:
        for w in work:
            _render_and_write(w)
    text = manifest_json(cfg, entries)
    tmp = root / "manifest.json.tmp"
    tmp.write_text(text)
    os.replace(tmp, root / "manifest.json")
    return json.loads(text)


def load_manifest(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "hugesture-manifest":
        raise ValueError(f"{path}: not a hugesture manifest")
    return doc
