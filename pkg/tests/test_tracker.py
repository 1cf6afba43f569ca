import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hugesture.echosim import render_echo, script_gesture
from hugesture.rdproc import FrameProcessor, RangeDopplerImage, process_recording, range_axis, velocity_axis
from hugesture.tracker import (DELETED, DYNAMIC, MAX_MISSING, MISS1, MISS2, NEW, STATE_CODES, STATIC,
                               STOPPED, TO_DYNAMIC, TO_STATIC, TRANSITIONS, UNCERTAIN, Detection, Event,
                               FeatureTracker, FeatureVector, Geometry, TrackerConfig, TrackSet,
                               TrackState, advance, associate, detect, format_features, parse_features,
                               range_class, step, track_recording, velocity_class)

CFG = TrackerConfig()


@pytest.fixture(scope="module")
def geom(params):
    return Geometry.from_params(params, CFG)


def blank(params):
    return RangeDopplerImage(np.zeros((params.fft_points, params.range_bins)), velocity_axis(params),
                             range_axis(params))


def det(r, v, p=100.0):
    return Detection(r, v, p, 9)


def run(dets_per_frame, geom, cfg=CFG):
    ts = TrackSet()
    out = []
    for dets in dets_per_frame:
        ts, fv = step(ts, dets, cfg, geom)
        out.append((ts, fv))
    return out


# --- detection ---------------------------------------------------------------

def test_all_zero_image(params, geom):
    assert detect(blank(params), CFG, geom) == []


def test_injected_peak_maps_to_axes(params, geom):
    im = blank(params)
    rows, cols = np.meshgrid(np.arange(256), np.arange(180), indexing="ij")
    im.magnitudes[:] = 1e4 * np.exp(-((rows - 150) ** 2 + (cols - 90) ** 2) / 2.0)
    found = detect(im, CFG, geom)
    assert len(found) == 1
    assert found[0].r == pytest.approx(im.range_axis[90], abs=geom.range_bin_width / 2)
    assert found[0].v == pytest.approx(im.velocity_axis[150], abs=geom.velocity_bin_width / 2)


def test_small_faint_blobs_removed(params, geom, rng):
    # strong finger return plus three weak specks, as in a noisy first frame
    im = blank(params)
    im.magnitudes[:] = rng.exponential(0.45, size=im.shape)
    rows, cols = np.meshgrid(np.arange(256), np.arange(180), indexing="ij")
    im.magnitudes += 3e3 * np.exp(-((rows - 128) ** 2 / 60 + (cols - 80) ** 2 / 8))
    for r, c in [(40, 20), (200, 150), (90, 160)]:
        im.magnitudes[r, c] += 20.0
    found = detect(im, CFG, geom)
    assert len(found) == 1
    assert found[0].r == pytest.approx(im.range_axis[80], abs=2 * geom.range_bin_width)


def test_extent_gate(params, geom):
    im = blank(params)
    im.magnitudes[100, 50:53] = 1e3         # 3 bins < min_extent 4
    assert detect(im, CFG, geom) == []
    im.magnitudes[101, 50] = 1e3
    assert len(detect(im, CFG, geom)) == 1


def test_close_regions_merged(params, geom):
    im = blank(params)
    im.magnitudes[120:123, 60:63] = 1e3
    im.magnitudes[124:127, 60:63] = 5e2     # separate region, 0.015 m/s away
    assert len(detect(im, CFG, geom)) == 1
    im.magnitudes[124:127, 60:63] = 0
    im.magnitudes[120:123, 140:143] = 5e2   # 3.4 cm away in range
    assert len(detect(im, CFG, geom)) == 2


# --- state machine -------------------------------------------------------------

def test_transition_table_total():
    for code in STATE_CODES:
        for ev in Event:
            assert (code, ev) in TRANSITIONS


def st0(code=NEW, **kw):
    return TrackState(code, det(0.07, 0.0), 0, **kw)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(list(Event)), max_size=60))
def test_fuzz_invariants(events):
    s = st0()
    for ev in events:
        prev = s
        s = advance(s, ev, CFG)
        assert s.state_code in STATE_CODES
        if s.state_code != DELETED:
            assert s.frames_missing <= MAX_MISSING
        if s.state_code == STOPPED and prev.state_code != STOPPED:
            assert prev.state_code in (DYNAMIC, TO_STATIC) or prev.resume == STOPPED
        if prev.state_code == DELETED:
            assert s == prev


def test_fuzz_many_sequences():
    rng = np.random.default_rng(0)
    events = list(Event)
    for _ in range(2000):
        s = st0()
        for e in rng.integers(0, 3, size=50):
            s = advance(s, events[e], CFG)
            assert s.state_code in STATE_CODES


def walk(events, start=None):
    s = start or st0()
    codes = []
    for e in events:
        s = advance(s, e, CFG)
        codes.append(s.state_code)
    return codes, s


def test_static_scatterer_locks_to_static():
    codes, _ = walk([Event.STATIC] * 2)
    assert codes == [UNCERTAIN, STATIC]


def test_dynamic_scatterer_locks_to_dynamic():
    codes, _ = walk([Event.DYNAMIC] * 2)
    assert codes == [UNCERTAIN, DYNAMIC]


def test_static_dynamic_hysteresis():
    S, D = Event.STATIC, Event.DYNAMIC
    codes, _ = walk([S, S, D, S, D, D])
    assert codes == [UNCERTAIN, STATIC, TO_DYNAMIC, STATIC, TO_DYNAMIC, DYNAMIC]


def test_stop_and_hold():
    S, D = Event.STATIC, Event.DYNAMIC
    codes, _ = walk([D, D, S, S, S, S, S, S, S])
    assert codes[:5] == [UNCERTAIN, DYNAMIC, TO_STATIC, STOPPED, STOPPED]
    assert codes[-1] == STATIC
    codes, _ = walk([D, D, S, S, D])
    assert codes[-1] == DYNAMIC


def test_missing_sequence_and_recovery():
    S, M = Event.STATIC, Event.MISS
    codes, s = walk([S, S, M, M, M, M])
    assert codes == [UNCERTAIN, STATIC, UNCERTAIN, MISS1, MISS2, DELETED]
    codes, _ = walk([S, S, M, M, S])
    assert codes[-1] == STATIC
    codes, _ = walk([S, M, S])
    assert codes[-1] == UNCERTAIN


def test_deleted_is_absorbing():
    _, s = walk([Event.MISS] * 4)
    assert s.state_code == DELETED
    for ev in Event:
        assert advance(s, ev, CFG) == s


# --- scripted tracker scenarios -------------------------------------------------

def test_empty_frame_empty_vector(geom):
    ts, fv = step(TrackSet(), [], CFG, geom)
    assert fv.n == 0 and fv.entries == ()


def test_four_missing_frames_delete(geom):
    frames = [[det(0.07, 0.0)]] * 3 + [[]] * 4
    out = run(frames, geom)
    assert out[2][1].entries[0][0] == STATIC
    assert [fv.entries[0][0] for _, fv in out[3:6]] == [UNCERTAIN, MISS1, MISS2]
    assert out[6][1].n == 0
    assert out[6][0].tracks == []


def test_slowing_dynamic_track_enters_stop_state(geom):
    tf = geom.frame_period
    r, frames = 0.06, []
    for v in [0.2, 0.2, 0.2, 0.2, 0.02, 0.0, 0.0]:
        frames.append([det(r, v)])
        r += v * tf
    out = run(frames, geom)
    codes = [fv.entries[0][0] for _, fv in out]
    assert codes[:4] == [NEW, UNCERTAIN, DYNAMIC, DYNAMIC]
    assert codes[4:] == [TO_STATIC, STOPPED, STOPPED]


def test_track_ids_never_reused(geom):
    frames = [[det(0.05, 0.0)], [], [], [], [], [det(0.05, 0.0)], [det(0.05, 0.0)]]
    out = run(frames, geom)
    ids = [t.track_id for t in out[-1][0].tracks]
    assert ids == [1]


def test_deleted_tracks_never_reappear(geom):
    frames = [[det(0.05, 0.0), det(0.09, 0.0)]] * 3 + [[det(0.05, 0.0)]] * 6
    out = run(frames, geom)
    assert out[-1][1].n == 1
    assert all(t.track_id == 0 for t in out[-1][0].tracks)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0.03, 0.1), st.floats(-0.3, 0.3)), min_size=1, max_size=6),
       st.randoms())
def test_association_permutation_invariant(points, random):
    from hugesture.params import default_params
    g = Geometry.from_params(default_params(), CFG)
    tracks = [TrackState(DYNAMIC, det(r + 0.002, v), i) for i, (r, v) in enumerate(points)]
    dets = [det(r, v) for r, v in points]
    perm = list(range(len(dets)))
    random.shuffle(perm)
    a = associate(tracks, dets, CFG, g)
    b = associate(tracks, [dets[i] for i in perm], CFG, g)
    assert {t: dets[j] for t, j in a.items()} == {t: dets[perm[j]] for t, j in b.items()}


# --- quantization and text format ------------------------------------------------

def test_velocity_classes(geom):
    vd = geom.velocity_resolution
    assert [velocity_class(v, geom) for v in (-5 * vd, -2 * vd, 0, 2 * vd, 5 * vd)] == [0, 1, 2, 3, 4]
    assert velocity_class(vd, geom) == 3 and velocity_class(-vd, geom) == 1


def test_range_classes(geom):
    lo, hi = geom.roi_range
    thirds = [lo + (hi - lo) * f for f in (0.1, 0.5, 0.9)]
    assert [range_class(r, geom) for r in thirds] == [0, 1, 2]
    assert range_class(lo - 1, geom) == 0 and range_class(hi + 1, geom) == 2


def test_feature_text_round_trip():
    seq = [FeatureVector(()), FeatureVector((("3", 4, 1), ("-1", 2, 0))), FeatureVector((("new", 2, 2),))]
    text = format_features(seq)
    assert text.splitlines()[1] == "1 2 (3,4,1) (-1,2,0)"
    assert parse_features(text) == seq
    with pytest.raises(ValueError):
        parse_features("0 2 (1,2,0)\n")


def test_key_ignores_order():
    a = FeatureVector((("3", 4, 1), ("1", 2, 0)))
    b = FeatureVector((("1", 2, 0), ("3", 4, 1)))
    assert a.key() == b.key()


# --- end to end on synthetic gestures ---------------------------------------------

def test_no_finger_cube_all_empty(params):
    rec = render_echo(script_gesture("no-finger", 0, 0), params, None)
    assert all(fv.n == 0 for fv in track_recording(process_recording(rec)))


def test_button_off_track_states(params):
    rec = render_echo(script_gesture("button-off", 0, 0), params, None)
    seq = track_recording(process_recording(rec))
    assert seq[4].n == 2
    assert seq[-1].n == 1
    # during the approach: one static-side track, one negative-velocity dynamic track
    moving = [fv for fv in seq if any(e[0] in (DYNAMIC, TO_DYNAMIC) for e in fv.entries)]
    assert moving
    for fv in moving:
        dyn = [e for e in fv.entries if e[0] in (DYNAMIC, TO_DYNAMIC)]
        assert all(e[1] in (0, 1) for e in dyn)
    assert any(any(e[0] == STATIC for e in fv.entries) for fv in moving)


def test_track_recording_deterministic(params):
    cube = process_recording(render_echo(script_gesture("screw", 3, 3), params, 10.0, 3))
    assert track_recording(cube) == track_recording(cube)


def test_streaming_tracker_matches_batch(params):
    rec = render_echo(script_gesture("finger-press", 1, 2), params, 10.0, 5)
    cube = process_recording(rec)
    ft = FeatureTracker(params)
    proc = FrameProcessor(params)
    assert [ft.update(proc(f, i)) for i, f in enumerate(rec.frames)] == track_recording(cube)


def test_config_round_trip():
    cfg = TrackerConfig(mad_k=6.0, stop_frames=3)
    assert TrackerConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        TrackerConfig.from_dict({"gain": 2})
