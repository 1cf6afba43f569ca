"""Scatterer detection and the symbolic track state machine.

Every detected scattering point is followed from frame to frame and
labelled with a state code:

    new        first sighting
    0          uncertain (awaiting confirmation) or first missed frame
    -1, -2     second and third consecutive missed frames
    1          static, locked
    2          static -> dynamic buffer (one frame)
    3          dynamic, locked
    4          dynamic -> stopped buffer
    8          motion ended (speed fell below the stop threshold)
    del        removed after more than three consecutive misses

The per-frame output is the list of (state, velocity class, range class)
over live tracks, ordered by track creation.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

from . import kernels
from .params import FrameParams, derive
from .rdproc import RangeDopplerImage, RdCube

NEW, UNCERTAIN, MISS1, MISS2 = "new", "0", "-1", "-2"
STATIC, TO_DYNAMIC, DYNAMIC, TO_STATIC, STOPPED = "1", "2", "3", "4", "8"
DELETED = "del"

STATE_CODES = (NEW, UNCERTAIN, MISS1, MISS2, STATIC, TO_DYNAMIC, DYNAMIC, TO_STATIC, STOPPED, DELETED)
TRACKING = (STATIC, TO_DYNAMIC, DYNAMIC, TO_STATIC, STOPPED)
MAX_MISSING = 3


class Event(enum.Enum):
    MISS = "miss"
    STATIC = "static"      # matched, speed below threshold
    DYNAMIC = "dynamic"    # matched, speed at or above threshold


@dataclass(frozen=True)
class TrackerConfig:
    """Detection, association and state-machine knobs.

    Distances are expressed in resolution cells (R_d in range, v_d in
    velocity). Speeds left as ``None`` default to v_d.
    """
    mad_k: float = 8.0
    min_power: float = 1.0
    relative_floor_db: float = 18.0
    min_extent: int = 4
    merge_radius: float = 1.0
    gate_range_cells: float = 2.0
    gate_velocity_cells: float = 3.0
    split_speed: Optional[float] = None
    stop_speed: Optional[float] = None
    confirm_frames: int = 2
    stop_frames: int = 2
    hold_frames: int = 5
    fast_factor: float = 4.0
    noise_stride: int = 7

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TrackerConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown tracker options: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Geometry:
    """Physical scales a tracker run needs, resolved from FrameParams."""
    range_resolution: float
    velocity_resolution: float
    velocity_bin_width: float
    range_bin_width: float
    frame_period: float
    roi_range: tuple
    split_speed: float
    stop_speed: float

    @classmethod
    def from_params(cls, params: FrameParams, cfg: TrackerConfig) -> "Geometry":
        d = derive(params)
        lo = params.roi_start_bin * d.range_bin_width
        hi = (params.roi_start_bin + params.range_bins) * d.range_bin_width
        return cls(d.range_resolution, d.velocity_resolution, d.velocity_bin_width,
                   d.range_bin_width, params.frame_period, (lo, hi),
                   cfg.split_speed if cfg.split_speed is not None else d.velocity_resolution,
                   cfg.stop_speed if cfg.stop_speed is not None else d.velocity_resolution)


@dataclass(frozen=True)
class Detection:
    r: float
    v: float
    intensity: float
    extent: int


# --- detection -------------------------------------------------------------

def detection_threshold(power: np.ndarray, cfg: TrackerConfig) -> float:
    """Power threshold: robust noise level, absolute floor, and sidelobe floor.

    The robust level is median + k*MAD of the pixel amplitudes, estimated
    on every ``noise_stride``-th pixel.
    """
    amp = np.sqrt(power.ravel()[::max(1, cfg.noise_stride)])
    med = float(np.median(amp))
    mad = float(np.median(np.abs(amp - med)))
    thr = max((med + cfg.mad_k * mad) ** 2, cfg.min_power)
    peak = float(power.max()) if power.size else 0.0
    return max(thr, peak * 10 ** (-cfg.relative_floor_db / 10))


def detect(image: RangeDopplerImage, cfg: TrackerConfig, geom: Geometry) -> list[Detection]:
    """Connected regions above threshold, gated by extent, close ones merged."""
    P = np.ascontiguousarray(image.magnitudes, dtype=np.float64)
    thr = detection_threshold(P, cfg)
    mask = P >= thr
    if not mask.any():
        return []
    labels, n = kernels.label_regions(mask.view(np.uint8))
    stats = kernels.region_stats(labels, n, P)
    v0, r0 = float(image.velocity_axis[0]), float(image.range_axis[0])
    regions = []
    for count, total, wrow, wcol, peak in stats:
        if count < cfg.min_extent:
            continue
        regions.append([peak, total, wrow, wcol, count])
    # strongest first; a weaker region within the merge radius joins it
    regions.sort(key=lambda g: (-g[0], g[2] / g[1], g[3] / g[1]))
    clusters = []
    for g in regions:
        v = v0 + g[2] / g[1] * geom.velocity_bin_width
        r = r0 + g[3] / g[1] * geom.range_bin_width
        for c in clusters:
            cv = v0 + c[2] / c[1] * geom.velocity_bin_width
            cr = r0 + c[3] / c[1] * geom.range_bin_width
            if np.hypot((r - cr) / geom.range_resolution,
                        (v - cv) / geom.velocity_resolution) <= cfg.merge_radius:
                c[1] += g[1]
                c[2] += g[2]
                c[3] += g[3]
                c[4] += g[4]
                break
        else:
            clusters.append(list(g))
    out = [Detection(r=r0 + c[3] / c[1] * geom.range_bin_width,
                     v=v0 + c[2] / c[1] * geom.velocity_bin_width,
                     intensity=float(c[0]), extent=int(c[4])) for c in clusters]
    out.sort(key=lambda d: (d.r, d.v))
    return out


# --- state machine ---------------------------------------------------------

@dataclass(frozen=True)
class TrackState:
    state_code: str
    last: Detection
    track_id: int
    frames_missing: int = 0
    age: int = 1
    resume: Optional[str] = None   # tracking state to return to after misses
    confirm: int = 0
    slow: int = 0
    hold: int = 0


def _evolve(st: TrackState, **changes) -> TrackState:
    # dataclasses.replace re-runs __init__; this path is hot in tracking and fuzzing
    new = object.__new__(TrackState)
    new.__dict__.update(st.__dict__)
    new.__dict__.update(changes)
    return new


def _miss(st: TrackState, event: Event, cfg: TrackerConfig) -> TrackState:
    missing = st.frames_missing + 1
    resume = st.state_code if st.state_code in TRACKING else st.resume
    if missing > MAX_MISSING:
        return _evolve(st, state_code=DELETED, frames_missing=missing, resume=resume)
    code = (UNCERTAIN, MISS1, MISS2)[missing - 1]
    return _evolve(st, state_code=code, frames_missing=missing, resume=resume)


def _recover(st: TrackState, event: Event, cfg: TrackerConfig) -> TrackState:
    if st.resume is None:
        return _evolve(st, state_code=UNCERTAIN, frames_missing=0, confirm=1, slow=0, hold=0)
    return _evolve(st, state_code=st.resume, frames_missing=0, resume=None)


def _new(st, event, cfg):
    return _evolve(st, state_code=UNCERTAIN, confirm=1)


def _uncertain(st, event, cfg):
    if st.frames_missing:
        return _recover(st, event, cfg)
    confirm = st.confirm + 1
    if confirm >= cfg.confirm_frames:
        return _evolve(st, state_code=STATIC if event is Event.STATIC else DYNAMIC, confirm=confirm)
    return _evolve(st, confirm=confirm)


def _static(st, event, cfg):
    return _evolve(st, state_code=TO_DYNAMIC if event is Event.DYNAMIC else STATIC)


def _to_dynamic(st, event, cfg):
    return _evolve(st, state_code=DYNAMIC if event is Event.DYNAMIC else STATIC)


def _dynamic(st, event, cfg):
    if event is Event.DYNAMIC:
        return _evolve(st, state_code=DYNAMIC, slow=0)
    slow = st.slow + 1
    if slow >= cfg.stop_frames:
        return _evolve(st, state_code=STOPPED, slow=slow, hold=0)
    return _evolve(st, state_code=TO_STATIC, slow=slow)


def _stopped(st, event, cfg):
    if event is Event.DYNAMIC:
        return _evolve(st, state_code=DYNAMIC, slow=0, hold=0)
    hold = st.hold + 1
    if hold >= cfg.hold_frames:
        return _evolve(st, state_code=STATIC, hold=hold, slow=0)
    return _evolve(st, hold=hold)


def _deleted(st, event, cfg):
    return st


_ON_MATCH = {NEW: _new, UNCERTAIN: _uncertain, MISS1: _recover, MISS2: _recover,
             STATIC: _static, TO_DYNAMIC: _to_dynamic, DYNAMIC: _dynamic,
             TO_STATIC: _dynamic, STOPPED: _stopped, DELETED: _deleted}

TRANSITIONS = {}
for _code in STATE_CODES:
    TRANSITIONS[(_code, Event.MISS)] = _deleted if _code == DELETED else _miss
    for _ev in (Event.STATIC, Event.DYNAMIC):
        TRANSITIONS[(_code, _ev)] = _ON_MATCH[_code]


def advance(st: TrackState, event: Event, cfg: TrackerConfig) -> TrackState:
    """Apply one frame's event to a track (total over states x events)."""
    nxt = TRANSITIONS[(st.state_code, event)](st, event, cfg)
    if st.state_code != DELETED:
        nxt.__dict__["age"] = st.age + 1   # nxt is always a fresh copy here
    return nxt


def classify_event(st: TrackState, det: Detection, geom: Geometry) -> Event:
    code = st.resume if st.frames_missing else st.state_code
    thr = geom.stop_speed if code in (DYNAMIC, TO_STATIC, STOPPED) else geom.split_speed
    return Event.DYNAMIC if abs(det.v) >= thr else Event.STATIC


# --- feature vectors -------------------------------------------------------

@dataclass(frozen=True)
class FeatureVector:
    entries: tuple = ()    # ((state, vclass, rclass), ...) in track-creation order

    @property
    def n(self) -> int:
        return len(self.entries)

    def key(self) -> tuple:
        return tuple(sorted(self.entries, key=_entry_sort_key))


def _entry_sort_key(e):
    return (STATE_CODES.index(e[0]), e[1], e[2])


def velocity_class(v: float, geom: Geometry, fast_factor: float = 4.0) -> int:
    """0 fast-, 1 slow-, 2 static, 3 slow+, 4 fast+ (edges at v_d and fast_factor*v_d)."""
    vd = geom.velocity_resolution
    if v <= -fast_factor * vd:
        return 0
    if v <= -vd:
        return 1
    if v < vd:
        return 2
    if v < fast_factor * vd:
        return 3
    return 4


def range_class(r: float, geom: Geometry) -> int:
    lo, hi = geom.roi_range
    k = int((r - lo) / (hi - lo) * 3)
    return min(max(k, 0), 2)


@dataclass
class TrackSet:
    tracks: list = field(default_factory=list)
    next_id: int = 0
    frame_index: int = -1

    def live(self):
        return [t for t in self.tracks if t.state_code != DELETED]


def associate(tracks: list, detections: list, cfg: TrackerConfig, geom: Geometry) -> dict:
    """Greedy global nearest-neighbour assignment inside the gate.

    Returns {track_id: detection index}. Candidate pairs are taken in
    order of (distance, detection range, detection velocity, track id), so
    the result does not depend on the order detections are listed in.
    """
    gr = cfg.gate_range_cells * geom.range_resolution
    gv = cfg.gate_velocity_cells * geom.velocity_resolution
    pairs = []
    for t in tracks:
        steps = t.frames_missing + 1
        r_hat = t.last.r + t.last.v * geom.frame_period * steps
        for j, d in enumerate(detections):
            d2 = ((d.r - r_hat) / gr) ** 2 + ((d.v - t.last.v) / gv) ** 2
            if d2 <= 1.0:
                pairs.append((d2, d.r, d.v, d.intensity, t.track_id, j))
    pairs.sort(key=lambda p: p[:5])
    used_t, used_d, out = set(), set(), {}
    for _, _, _, _, tid, j in pairs:
        if tid in used_t or j in used_d:
            continue
        used_t.add(tid)
        used_d.add(j)
        out[tid] = j
    return out


def step(tracks: TrackSet, detections: Iterable[Detection], cfg: TrackerConfig,
         geom: Geometry) -> tuple[TrackSet, FeatureVector]:
    """Advance every track by one frame and emit the frame's feature vector."""
    detections = list(detections)
    live = tracks.live()
    match = associate(live, detections, cfg, geom)
    out = []
    for t in live:
        j = match.get(t.track_id)
        if j is None:
            nt = advance(t, Event.MISS, cfg)
        else:
            d = detections[j]
            nt = replace(advance(t, classify_event(t, d, geom), cfg), last=d)
        if nt.state_code != DELETED:
            out.append(nt)
    next_id = tracks.next_id
    taken = set(match.values())
    for j, d in enumerate(detections):
        if j not in taken:
            out.append(TrackState(NEW, d, next_id))
            next_id += 1
    out.sort(key=lambda t: t.track_id)
    fv = FeatureVector(tuple((t.state_code, velocity_class(t.last.v, geom, cfg.fast_factor),
                              range_class(t.last.r, geom)) for t in out))
    return TrackSet(out, next_id, tracks.frame_index + 1), fv


class FeatureTracker:
    """Stateful detect + step over a stream of images."""

    def __init__(self, params: FrameParams, cfg: Optional[TrackerConfig] = None):
        self.cfg = cfg or TrackerConfig()
        self.geom = Geometry.from_params(params, self.cfg)
        self.tracks = TrackSet()

    def update(self, image: RangeDopplerImage) -> FeatureVector:
        dets = detect(image, self.cfg, self.geom)
        self.tracks, fv = step(self.tracks, dets, self.cfg, self.geom)
        return fv


def track_recording(cube: RdCube, cfg: Optional[TrackerConfig] = None) -> list[FeatureVector]:
    ft = FeatureTracker(cube.params, cfg)
    return [ft.update(im) for im in cube.images]


# --- text format -------------------------------------------------------------

_ENTRY = re.compile(r"\((-?\w+),(\d+),(\d+)\)")


def format_features(seq: list[FeatureVector]) -> str:
    """One line per frame: ``m n_m (state,vclass,rclass) ...``."""
    lines = []
    for m, fv in enumerate(seq):
        parts = [str(m), str(fv.n)] + [f"({s},{v},{r})" for s, v, r in fv.entries]
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def parse_features(text: str) -> list[FeatureVector]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        head = line.split(maxsplit=2)
        if len(head) < 2:
            raise ValueError(f"line {lineno}: expected 'm n_m entries...'")
        m, n = int(head[0]), int(head[1])
        if m != len(out):
            raise ValueError(f"line {lineno}: frame index {m}, expected {len(out)}")
        entries = tuple((s, int(v), int(r)) for s, v, r in _ENTRY.findall(head[2] if len(head) > 2 else ""))
        if len(entries) != n or any(e[0] not in STATE_CODES for e in entries):
            raise ValueError(f"line {lineno}: malformed feature entries")
        out.append(FeatureVector(entries))
    return out
