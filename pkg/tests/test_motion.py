import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyncmd import motion, physim
from dyncmd.motion import NoiseSpec
from dyncmd.physim import RobotModel

MODEL = RobotModel()


@pytest.fixture(scope="module")
def clips():
    return {k: motion.generate_clip(k, MODEL, 3.0, seed=7) for k in motion.CLIP_KINDS}


def _central_diff(x, fps):
    d = np.empty_like(x)
    d[1:-1] = (x[2:] - x[:-2]) * fps / 2
    d[0] = (x[1] - x[0]) * fps
    d[-1] = (x[-1] - x[-2]) * fps
    return d


# generators ------------------------------------------------------------------------

@pytest.mark.parametrize("kind", motion.CLIP_KINDS)
def test_velocity_matches_finite_difference(clips, kind):
    c = clips[kind]
    v_world = _central_diff(c.base_pos, c.fps)
    ph = c.base_pitch
    cs, sn = np.cos(ph), np.sin(ph)
    # positive pitch tips the forward axis down; rotate world -> body by hand
    v_body = np.stack([cs * v_world[:, 0] - sn * v_world[:, 1], sn * v_world[:, 0] + cs * v_world[:, 1]], axis=1)
    assert np.abs(v_body - c.base_lin_vel).max() < 1e-6
    assert np.abs(_central_diff(ph, c.fps) - c.base_ang_vel).max() < 1e-6


@pytest.mark.parametrize("kind", motion.CLIP_KINDS)
def test_clip_invariants(clips, kind):
    c = clips[kind]
    assert c.n_frames == 151 and c.duration == pytest.approx(3.0)
    assert np.abs(np.linalg.norm(c.gravity, axis=1) - 1).max() < 1e-6
    assert (c.q >= MODEL.lower).all() and (c.q <= MODEL.upper).all()
    assert np.isfinite(c.commands()).all()
    assert c.commands().shape == (151, motion.cmd_dim(MODEL.n_joints))


@pytest.mark.parametrize("kind", motion.CLIP_KINDS)
def test_keypoints_match_forward_kinematics(clips, kind):
    c = clips[kind]
    for frame in (0, 40, 150):
        st_ = c.state_at(MODEL, frame)
        kp = physim.keypoint_positions(MODEL, st_)
        assert np.abs(kp - c.keypoints[frame]).max() < 1e-12


@pytest.mark.parametrize("kind", motion.CLIP_KINDS)
def test_clips_stay_on_the_ground(clips, kind):
    c = clips[kind]
    pts = physim.fk_config(MODEL, c.base_pos, c.base_pitch, c.q, physim.contact_points(MODEL))
    low = pts[:, :, 1].min(axis=1)
    assert low.min() > -1e-9
    assert low.max() < 0.02


def test_walk_feet_do_not_slide(clips):
    c = clips["walk"]
    pts = physim.fk_config(MODEL, c.base_pos, c.base_pitch, c.q, physim.contact_points(MODEL))
    feet = [i for i, (link, _) in enumerate(physim.contact_points(MODEL)) if link in MODEL.foot_links]
    for f in feet:
        z, x = pts[:, f, 1], pts[:, f, 0]
        planted = (z[1:] < 1e-9) & (z[:-1] < 1e-9)
        assert planted.any()
        assert np.abs(np.diff(x)[planted]).max() < 1e-9
    assert c.base_pos[-1, 0] - c.base_pos[0, 0] > 0.3


def test_getup_starts_on_the_ground(clips):
    h = clips["getup"].base_height
    assert h[0] < 0.4 * MODEL.standing_height
    assert h[-1] == pytest.approx(MODEL.standing_height, abs=0.02)


def test_squat_zero_amplitude_is_static():
    c = motion.generate_clip("squat", MODEL, 2.0, seed=3, amplitude=0.0)
    assert np.abs(c.q - c.q[0]).max() == 0
    assert np.abs(c.base_pos - c.base_pos[0]).max() < 1e-12
    assert np.abs(c.base_lin_vel).max() < 1e-9 and np.abs(c.base_ang_vel).max() < 1e-9
    assert np.abs(c.keypoint_vel).max() < 1e-9


@pytest.mark.parametrize("kind", motion.CLIP_KINDS)
def test_generation_is_deterministic(kind):
    a = motion.clip_to_lines(motion.generate_clip(kind, MODEL, 1.5, seed=11))
    b = motion.clip_to_lines(motion.generate_clip(kind, MODEL, 1.5, seed=11))
    c = motion.clip_to_lines(motion.generate_clip(kind, MODEL, 1.5, seed=12))
    assert a == b
    assert a != c


def test_generate_errors():
    with pytest.raises(ValueError, match="unknown clip kind"):
        motion.generate_clip("dance", MODEL, 2.0, 0)
    with pytest.raises(ValueError, match="at least 1 s"):
        motion.generate_clip("walk", MODEL, 0.5, 0)


def test_clip_validation():
    c = motion.generate_clip("squat", MODEL, 1.0, 0)
    with pytest.raises(ValueError):
        motion.MotionClip(**{**c.__dict__, "fps": 0.0})
    bad = c.gravity.copy()
    bad[3] *= 1.01
    with pytest.raises(ValueError, match="unit-norm"):
        motion.MotionClip(**{**c.__dict__, "gravity": bad})
    with pytest.raises(ValueError, match="2 frames"):
        motion.MotionClip(**{k: (v[:1] if isinstance(v, np.ndarray) else v) for k, v in c.__dict__.items()})
    out = c.q.copy()
    out[5, 0] = MODEL.upper[0] + 0.1
    with pytest.raises(ValueError, match="limits"):
        motion.MotionClip(**{**c.__dict__, "q": out}).check_limits(MODEL)


# file format -----------------------------------------------------------------------

def test_clip_round_trip(tmp_path, clips):
    for c in clips.values():
        p = tmp_path / f"{c.kind}.clip"
        motion.save_clip(p, c)
        back = motion.load_clip(p)
        for f in ("base_pos", "base_pitch", "base_lin_vel", "base_ang_vel", "gravity", "q", "keypoints", "keypoint_vel"):
            assert np.array_equal(getattr(back, f), getattr(c, f)), f
        assert (back.kind, back.seed, back.fps, back.params, back.model_hash) == (c.kind, c.seed, c.fps, c.params, c.model_hash)
        assert motion.clip_to_lines(back) == p.read_text()


def test_clip_file_is_line_json(clips):
    lines = motion.clip_to_lines(clips["kick"]).splitlines()
    header = json.loads(lines[0])
    assert header["format"] == motion.CLIP_FORMAT
    assert header["n_frames"] == len(lines) - 1
    assert header["model_hash"] == MODEL.digest()


def test_clip_file_rejects_garbage(clips):
    text = motion.clip_to_lines(clips["kick"])
    with pytest.raises(ValueError, match="frame count"):
        motion.clip_from_lines("\n".join(text.splitlines()[:-1]))
    with pytest.raises(ValueError, match="not a dyncmd clip"):
        motion.clip_from_lines(json.dumps({"format": "other"}) + "\n")


def test_library_manifest(tmp_path, clips):
    lib = motion.write_library(tmp_path / "lib", list(clips.values()))
    manifest = json.loads((lib / "manifest.json").read_text())
    assert [e["kind"] for e in manifest["clips"]] == list(motion.CLIP_KINDS)
    assert all(e["duration"] == pytest.approx(3.0) for e in manifest["clips"])
    back = motion.load_library(lib)
    assert [c.kind for c in back] == list(motion.CLIP_KINDS)


# windows ---------------------------------------------------------------------------

def test_window_l0_is_the_frame(clips):
    c = clips["walk"]
    w = motion.sample_window(c, 17, 0)
    assert w.shape == (1, c.commands().shape[1])
    assert np.array_equal(w[0], c.commands()[17])


def test_window_clamps_at_start(clips):
    c = clips["walk"]
    w = motion.sample_window(c, 0, 10)
    assert w.shape[0] == 21
    assert all(np.array_equal(w[i], w[0]) for i in range(11))
    assert np.array_equal(w[11], c.commands()[1])


def test_window_clamps_at_end(clips):
    c = clips["walk"]
    w = motion.sample_window(c, c.n_frames - 1, 4)
    assert all(np.array_equal(w[i], c.commands()[-1]) for i in range(4, 9))


@given(st.integers(0, 150), st.integers(0, 12))
@settings(max_examples=60, deadline=None)
def test_window_matches_direct_lookup(t, L):
    c = _walk()
    w = motion.sample_window(c, t, L)
    cmds = c.commands()
    for k, off in enumerate(range(-L, L + 1)):
        j = min(max(t + off, 0), c.n_frames - 1)
        assert np.array_equal(w[k], cmds[j])


_WALK = []


def _walk():
    if not _WALK:
        _WALK.append(motion.generate_clip("walk", MODEL, 3.0, seed=7))
    return _WALK[0]


def test_window_out_of_range(clips):
    with pytest.raises(IndexError):
        motion.sample_window(clips["walk"], 151, 3)
    with pytest.raises(IndexError):
        motion.sample_window(clips["walk"], -1, 3)


# noise -----------------------------------------------------------------------------

def _flat_window(n=100_000, n_joints=4):
    w = np.zeros((n, 5 + n_joints))
    w[:, 4] = -1.0
    return w


def test_noise_level_zero_is_identity(clips):
    w = motion.sample_window(clips["walk"], 50, 10)
    out = motion.inject_noise(w, NoiseSpec(), 0.0, seed=1)
    assert np.array_equal(out, w) and out is not w


def test_noise_lin_vel_uniform_half_width():
    w = _flat_window()
    d = motion.inject_noise(w, NoiseSpec(), 100.0, seed=0) - w
    fwd, up = d[:, 0], d[:, 1]
    assert np.abs(fwd).max() <= 0.5 and np.abs(up).max() <= 0.2
    assert abs(fwd.mean()) < 0.01
    # U[-a, a] has std a / sqrt(3); coverage reaches the edges
    assert fwd.std() == pytest.approx(0.5 / np.sqrt(3), rel=0.01)
    assert np.abs(fwd).max() > 0.499
    hist, _ = np.histogram(fwd, bins=10, range=(-0.5, 0.5))
    assert np.abs(hist / len(fwd) - 0.1).max() < 0.005


def test_noise_zero_mean_every_channel():
    w = _flat_window()
    spec = NoiseSpec()
    raw = motion.sample_perturbation(w.shape, spec, 100.0, np.random.default_rng(5))
    hw = spec.half_widths(4)
    assert (np.abs(raw.mean(axis=0)) < 0.02 * hw).all()
    assert (np.abs(raw) <= hw).all()


def test_noise_1500_within_15x():
    w = _flat_window(20_000)
    spec = NoiseSpec()
    hw = spec.half_widths(4)
    raw = motion.sample_perturbation(w.shape, spec, 1500.0, np.random.default_rng(2))
    assert (np.abs(raw) <= 15 * hw + 1e-12).all()
    assert (np.abs(raw).max(axis=0) > 14.9 * hw).all()
    noisy = motion.inject_noise(w, spec, 1500.0, seed=2)
    nongrav = [0, 1, 2, 5, 6, 7, 8]
    assert (np.abs(noisy - w)[:, nongrav] <= 15 * hw[nongrav] + 1e-12).all()


@given(st.floats(0, 2000), st.integers(0, 2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_noisy_gravity_is_unit(level, seed):
    w = motion.sample_window(_walk(), 30, 6)
    out = motion.inject_noise(w, NoiseSpec(), level, seed=seed)
    assert np.abs(np.linalg.norm(out[:, 3:5], axis=1) - 1).max() < 1e-6


def test_noise_deterministic_per_seed(clips):
    w = motion.sample_window(clips["walk"], 50, 10)
    a = motion.inject_noise(w, NoiseSpec(), 300, seed=4)
    assert np.array_equal(a, motion.inject_noise(w, NoiseSpec(), 300, seed=4))
    assert not np.array_equal(a, motion.inject_noise(w, NoiseSpec(), 300, seed=5))
    # then a level-0 pass changes nothing
    assert np.array_equal(motion.inject_noise(a, NoiseSpec(), 0, seed=9), a)


def test_noise_errors():
    with pytest.raises(ValueError):
        motion.inject_noise(_flat_window(3), NoiseSpec(), -1.0, seed=0)
    with pytest.raises(ValueError):
        NoiseSpec(ang_vel=-0.1)


# redundancy filter ------------------------------------------------------------------

def _tiny(q):
    q = np.asarray(q, dtype=np.float64)
    T = len(q)
    return motion.clip_from_config(MODEL, 50.0, np.tile([0.0, 0.7], (T, 1)), np.zeros(T), q)


def test_distance_hand_computed():
    base = np.tile(MODEL.q0, (3, 1))
    a = _tiny(base)
    shifted = base.copy()
    shifted[:, 0] += [0.1, 0.2, 0.3]
    # per-frame distances 0.1, 0.2, 0.3 -> mean 0.2
    assert motion.clip_distance(a, _tiny(shifted)) == pytest.approx(0.2, abs=1e-12)
    two = base.copy()
    two[:, 1] += 0.3
    two[:, 2] += 0.4
    assert motion.clip_distance(a, _tiny(two)) == pytest.approx(0.5, abs=1e-12)


def test_dedup_threshold_boundary():
    base = np.tile(MODEL.q0, (3, 1))
    other = base.copy()
    other[:, 1] += 0.3
    other[:, 2] += 0.4
    a, b = _tiny(base), _tiny(other)
    assert len(motion.dedup_filter([a, b], 0.49)) == 2
    assert len(motion.dedup_filter([a, b], 0.51)) == 1
    assert len(motion.dedup_filter([a, b], 0.6)) == 1


def test_dedup_duplicates_and_zero(clips):
    lib = list(clips.values())
    out = motion.dedup_filter(lib + [lib[1]], 1e-9)
    assert len(out) == len(lib)
    assert motion.dedup_filter(lib + [lib[1]], 0.0) == lib + [lib[1]]
    with pytest.raises(ValueError, match="empty"):
        motion.dedup_filter([], 0.1)


def test_distance_resamples_lengths():
    a = _tiny(np.tile(MODEL.q0, (3, 1)))
    b = _tiny(np.tile(MODEL.q0, (7, 1)))
    assert motion.clip_distance(a, b) == 0.0
