"""Reference motions: clip container and file format, procedural generators,
command windows, command-noise injection, and a redundancy filter.

Clip files are line-delimited JSON: one header object followed by one
object per frame. Floats are written with ``repr`` so a clip round-trips
bit-exactly and the same seed always yields the same bytes.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import physim
from .physim import RobotModel

CLIP_KINDS = ("walk", "squat", "kick", "crawl", "getup")
CLIP_FORMAT = "dyncmd-clip"
CLIP_VERSION = 1


@dataclass
class MotionClip:
    fps: float
    base_pos: np.ndarray  # (T, 2) world
    base_pitch: np.ndarray  # (T,)
    base_lin_vel: np.ndarray  # (T, 2) body frame
    base_ang_vel: np.ndarray  # (T,)
    gravity: np.ndarray  # (T, 2) body frame, unit
    q: np.ndarray  # (T, n_joints)
    keypoints: np.ndarray  # (T, n_keypoints, 2) world
    keypoint_vel: np.ndarray  # (T, n_keypoints, 2) world
    kind: str = "custom"
    seed: int = 0
    params: dict = field(default_factory=dict)
    model_hash: str = ""

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if len(self.q) < 2:
            raise ValueError("a clip needs at least 2 frames")
        norms = np.linalg.norm(self.gravity, axis=-1)
        if np.abs(norms - 1.0).max() > 1e-6:
            raise ValueError("gravity direction must be unit-norm per frame")

    @property
    def n_frames(self) -> int:
        return len(self.q)

    @property
    def n_joints(self) -> int:
        return self.q.shape[1]

    @property
    def duration(self) -> float:
        return (self.n_frames - 1) / self.fps

    @property
    def base_height(self) -> np.ndarray:
        return self.base_pos[:, 1]

    def commands(self) -> np.ndarray:
        """Per-frame command rows ``[v_ref(2), w_ref(1), g_ref(2), q_ref(n)]``."""
        return np.concatenate([self.base_lin_vel, self.base_ang_vel[:, None], self.gravity, self.q], axis=1)

    def check_limits(self, model: RobotModel, tol: float = 1e-9) -> None:
        if (self.q < model.lower - tol).any() or (self.q > model.upper + tol).any():
            raise ValueError(f"clip {self.kind!r} leaves the joint limits")

    def state_at(self, model: RobotModel, frame: int) -> physim.SimState:
        """Simulator state that exactly matches the reference at ``frame``."""
        return physim.SimState(
            base_pos=self.base_pos[frame].copy(),
            base_pitch=np.array(self.base_pitch[frame]),
            base_vel=physim.body_to_world(self.base_lin_vel[frame], self.base_pitch[frame]),
            base_ang_vel=np.array(self.base_ang_vel[frame]),
            q=self.q[frame].copy(),
            qd=np.gradient(self.q, 1.0 / self.fps, axis=0)[frame],
            contacts=np.zeros(model.n_links, dtype=bool),
            time=np.array(0.0),
        )


def cmd_dim(n_joints: int) -> int:
    return 5 + n_joints


# kinematics helpers -----------------------------------------------------------------

def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _leg_ik(model: RobotModel, foot_rel: np.ndarray, pitch: np.ndarray, thigh: int, shank: int):
    """Hip and knee angles placing a 2-link leg's tip at ``foot_rel`` (world offset from hip)."""
    l1 = model.link_lengths[thigh]
    l2 = model.link_lengths[shank]
    d2 = (foot_rel**2).sum(-1)
    ck = np.clip((d2 - l1**2 - l2**2) / (2 * l1 * l2), -1.0, 1.0)
    knee = np.arccos(ck)
    beta = np.arctan2(l2 * np.sin(knee), l1 + l2 * np.cos(knee))
    alpha = np.arctan2(-foot_rel[..., 0], -foot_rel[..., 1]) - beta
    return alpha - pitch, knee


def _anchor_base(model: RobotModel, pitch: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Base positions that keep the lowest contact point on the ground without slipping."""
    T = len(q)
    rel = physim.fk_config(model, np.zeros((T, 2)), pitch, q, physim.contact_points(model))
    z = -rel[:, :, 1].min(axis=1)
    x = np.zeros(T)
    for i in range(1, T):
        c = int(np.argmin(rel[i - 1, :, 1]))
        x[i] = x[i - 1] + rel[i - 1, c, 0] - rel[i, c, 0]
    return np.stack([x, z], axis=1)


def clip_from_config(model: RobotModel, fps: float, base_pos, pitch, q, kind="custom", seed=0,
                     params=None) -> MotionClip:
    """Derive velocities, gravity, and keypoints from a pose trajectory."""
    base_pos = np.asarray(base_pos, dtype=np.float64)
    pitch = np.asarray(pitch, dtype=np.float64)
    q = np.clip(np.asarray(q, dtype=np.float64), model.lower, model.upper)
    dt = 1.0 / fps
    vel_world = np.gradient(base_pos, dt, axis=0)
    kps = physim.fk_config(model, base_pos, pitch, q, physim.keypoint_spec(model))
    return MotionClip(
        fps=float(fps),
        base_pos=base_pos,
        base_pitch=pitch,
        base_lin_vel=physim.world_to_body(vel_world, pitch),
        base_ang_vel=np.gradient(pitch, dt),
        gravity=physim.projected_gravity(pitch),
        q=q,
        keypoints=kps,
        keypoint_vel=np.gradient(kps, dt, axis=0),
        kind=kind,
        seed=int(seed),
        params=dict(params or {}),
        model_hash=model.digest(),
    )


# generators ------------------------------------------------------------------------------

def _gen_walk(model, t, rng):
    p = {
        "stride": float(rng.uniform(0.2, 0.32)),
        "freq": float(rng.uniform(0.6, 0.9)),
        "duty": 0.65,
        "clearance": float(rng.uniform(0.05, 0.08)),
        "crouch": 0.04,
        "offset": 0.02,
        "ramp": 0.0,
    }
    base, pitch, q = _walk_pose(model, t, p)
    return base, pitch, q, p


def _walk_pose(model, t, p):
    """Foot-space gait: stance feet are fixed in the world, swing feet follow a clearance arc."""
    h = model.standing_height - p["crouch"]
    ramp = _smoothstep(t / p["ramp"]) if p["ramp"] > 0 else np.ones_like(t)
    stride = p["stride"] * ramp
    speed = stride * p["freq"] / p["duty"]
    hip_x = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(t))])
    # touchdown point for a stance that starts at sample i
    land = hip_x + 0.5 * stride + p["offset"]
    q = np.zeros((len(t), model.n_joints))
    for j, (thigh, shank) in enumerate(((1, 2), (3, 4))):
        phase = (p["freq"] * t + 0.5 * j) % 1.0
        stance = phase < p["duty"]
        foot_x = np.empty_like(t)
        foot_z = np.zeros_like(t)
        # a stance already under way at t=0 started before the clip: back-date its touchdown
        first = land[0] - speed[0] * phase[0] / p["freq"] if stance[0] else None
        i = 0
        while i < len(t):
            k = i
            while k < len(t) and stance[k] == stance[i]:
                k += 1
            if stance[i]:
                foot_x[i:k] = first if i == 0 and first is not None else land[i]
            else:
                u = (phase[i:k] - p["duty"]) / (1.0 - p["duty"])
                start = foot_x[i - 1] if i > 0 else hip_x[0] + p["offset"] - 0.5 * stride[0]
                end = land[min(k, len(t) - 1)]
                foot_x[i:k] = start + (end - start) * _smoothstep(u)
                foot_z[i:k] = p["clearance"] * np.sin(np.pi * u)
            i = k
        rel = np.stack([foot_x - hip_x, foot_z - h], axis=1)
        q[:, 2 * j], q[:, 2 * j + 1] = _leg_ik(model, rel, np.zeros_like(t), thigh, shank)
    return np.stack([hip_x, np.full_like(t, h)], axis=1), np.zeros_like(t), q


def _gen_squat(model, t, rng, amplitude: float | None = None):
    h0 = model.standing_height
    p = {
        "depth": float(rng.uniform(0.15, 0.3)) if amplitude is None else float(amplitude),
        "freq": float(rng.uniform(0.3, 0.5)),
        "lean": 0.35,
    }
    s = 0.5 * (1.0 - np.cos(2 * np.pi * p["freq"] * t))
    depth = s * p["depth"]
    pitch = p["lean"] * depth / 0.3
    st = physim.default_state(model, height=0.0)
    feet = physim.point_positions(model, st, [(2, model.tips[2]), (4, model.tips[4])])
    mids = [(i, tuple(0.5 * v for v in model.tips[i])) for i in range(model.n_links)]
    mass = np.array(model.link_masses) / sum(model.link_masses)
    # slide the hip back as the torso leans so the CoM keeps its standing offset over the feet
    hip_x = np.zeros_like(t)
    com0 = None
    for _ in range(6):
        q = np.zeros((len(t), model.n_joints))
        for j, (thigh, shank) in enumerate(((1, 2), (3, 4))):
            rel = np.stack([feet[j, 0] - hip_x, -h0 + depth], 1)
            q[:, 2 * j], q[:, 2 * j + 1] = _leg_ik(model, rel, pitch, thigh, shank)
        hip = np.stack([hip_x, h0 - depth], axis=1)
        com = (physim.fk_config(model, hip, pitch, q, mids)[..., 0] * mass).sum(-1)
        if com0 is None:
            com0 = com[np.argmin(depth)]
        hip_x = hip_x - (com - com0)
    return hip, pitch, q, p


def _gen_kick(model, t, rng):
    p = {
        "kick_time": float(rng.uniform(1.0, 1.5)),
        "kick_len": float(rng.uniform(0.5, 0.8)),
        "hip_peak": float(rng.uniform(-1.3, -0.9)),
    }
    q0 = np.array(model.q0)
    u = np.clip((t - p["kick_time"]) / p["kick_len"], 0.0, 1.0)
    bump = np.sin(np.pi * u) ** 2
    q = np.tile(q0, (len(t), 1))
    q[:, 0] = q0[0] + bump * (p["hip_peak"] - q0[0])
    # chamber the knee on the way up, extend it through the strike
    chamber = np.sin(2 * np.pi * u) ** 2 * (u < 0.5)
    q[:, 1] = q0[1] + 0.8 * chamber - (q0[1] - 0.05) * bump
    q[:, 3] = q0[3] + 0.15 * bump
    pitch = -0.15 * bump
    return _anchor_base(model, pitch, q), pitch, q, p


def _gen_crawl(model, t, rng):
    p = {
        "freq": float(rng.uniform(0.4, 0.7)),
        "hip_amp": float(rng.uniform(0.15, 0.3)),
        "lean": float(rng.uniform(0.2, 0.5)),
    }
    w = 2 * np.pi * p["freq"]
    ramp = _smoothstep(t / 1.0)
    s = np.sin(w * t)
    # knee-walk: shins on the ground, thighs swinging about vertical
    knee = np.pi / 2
    q = np.stack([
        -p["lean"] - ramp * p["hip_amp"] * np.cos(w * t),
        knee + p["lean"] + ramp * p["hip_amp"] * np.cos(w * t) + 0.15 * ramp * np.maximum(0.0, -s),
        -p["lean"] + ramp * p["hip_amp"] * np.cos(w * t),
        knee + p["lean"] - ramp * p["hip_amp"] * np.cos(w * t) + 0.15 * ramp * np.maximum(0.0, s),
    ], axis=1)
    pitch = np.full_like(t, p["lean"])
    return _anchor_base(model, pitch, q), pitch, q, p


def _gen_getup(model, t, rng):
    p = {
        "hold": float(rng.uniform(0.3, 0.6)),
        "rise": float(rng.uniform(2.0, 2.6)),
    }
    knee_max = model.joint_upper[1] - 0.05
    seiza = np.array([np.pi / 2 - knee_max, knee_max, np.pi / 2 - knee_max, knee_max])
    half_kneel = np.array([-1.45, 1.5, -0.1, 1.6])
    q0 = np.array(model.q0)
    u = (t - p["hold"]) / p["rise"]
    a = _smoothstep(u / 0.45)[:, None]
    b = _smoothstep((u - 0.45) / 0.55)[:, None]
    q = (1 - a) * seiza + a * half_kneel
    q = (1 - b) * q + b * q0
    pitch = 0.45 * np.sin(np.pi * np.clip(u, 0.0, 1.0)) ** 2
    return _anchor_base(model, pitch, q), pitch, q, p


_GENERATORS = {
    "walk": _gen_walk,
    "squat": _gen_squat,
    "kick": _gen_kick,
    "crawl": _gen_crawl,
    "getup": _gen_getup,
}


def generate_clip(kind: str, model: RobotModel, duration: float, seed: int, fps: float = 50.0,
                  amplitude: float | None = None) -> MotionClip:
    """Procedural reference clip; same (kind, seed, model) gives an identical clip."""
    if kind not in _GENERATORS:
        raise ValueError(f"unknown clip kind {kind!r}; expected one of {CLIP_KINDS}")
    if duration < 1.0:
        raise ValueError("clip duration must be at least 1 s")
    rng = np.random.default_rng([int(seed), CLIP_KINDS.index(kind)])
    t = np.arange(int(round(duration * fps)) + 1) / fps
    if kind == "squat":
        base, pitch, q, params = _gen_squat(model, t, rng, amplitude)
    else:
        base, pitch, q, params = _GENERATORS[kind](model, t, rng)
    params["duration"] = float(duration)
    clip = clip_from_config(model, fps, base, pitch, q, kind, seed, params)
    clip.check_limits(model)
    return clip


# file format ------------------------------------------------------------------------------

def _f(x) -> float | list:
    if np.ndim(x) == 0:
        return float(x)
    return [_f(v) for v in x]


def clip_to_lines(clip: MotionClip) -> str:
    header = {
        "format": CLIP_FORMAT,
        "version": CLIP_VERSION,
        "kind": clip.kind,
        "seed": clip.seed,
        "fps": clip.fps,
        "n_frames": clip.n_frames,
        "n_joints": clip.n_joints,
        "n_keypoints": clip.keypoints.shape[1],
        "model_hash": clip.model_hash,
        "params": clip.params,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for i in range(clip.n_frames):
        lines.append(json.dumps({
            "base_ang_vel": _f(clip.base_ang_vel[i]),
            "base_height": _f(clip.base_pos[i, 1]),
            "base_lin_vel": _f(clip.base_lin_vel[i]),
            "base_pitch": _f(clip.base_pitch[i]),
            "base_pos": _f(clip.base_pos[i]),
            "gravity": _f(clip.gravity[i]),
            "keypoint_vel": _f(clip.keypoint_vel[i]),
            "keypoints": _f(clip.keypoints[i]),
            "q": _f(clip.q[i]),
        }, sort_keys=True))
    return "\n".join(lines) + "\n"


def clip_from_lines(text: str) -> MotionClip:
    rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    header, frames = rows[0], rows[1:]
    if header.get("format") != CLIP_FORMAT or header.get("version") != CLIP_VERSION:
        raise ValueError("not a dyncmd clip file")
    if len(frames) != header["n_frames"]:
        raise ValueError("frame count does not match header")

    def col(key):
        return np.array([f[key] for f in frames], dtype=np.float64)

    return MotionClip(
        fps=header["fps"],
        base_pos=col("base_pos"),
        base_pitch=col("base_pitch"),
        base_lin_vel=col("base_lin_vel"),
        base_ang_vel=col("base_ang_vel"),
        gravity=col("gravity"),
        q=col("q"),
        keypoints=col("keypoints"),
        keypoint_vel=col("keypoint_vel"),
        kind=header["kind"],
        seed=header["seed"],
        params=header["params"],
        model_hash=header["model_hash"],
    )


def save_clip(path, clip: MotionClip) -> None:
    Path(path).write_text(clip_to_lines(clip))


def load_clip(path) -> MotionClip:
    return clip_from_lines(Path(path).read_text())


def write_library(out_dir, clips: list[MotionClip]) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, clip in enumerate(clips):
        name = f"{i:03d}_{clip.kind}_s{clip.seed}.clip"
        save_clip(out / name, clip)
        entries.append({"file": name, "kind": clip.kind, "seed": clip.seed, "duration": clip.duration,
                        "n_frames": clip.n_frames, "crc32": zlib.crc32(clip_to_lines(clip).encode())})
    manifest = {"format": CLIP_FORMAT, "version": CLIP_VERSION, "clips": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_library(lib_dir) -> list[MotionClip]:
    lib = Path(lib_dir)
    manifest = json.loads((lib / "manifest.json").read_text())
    return [load_clip(lib / e["file"]) for e in manifest["clips"]]


# windows and noise -------------------------------------------------------------------------

def window_indices(n_frames: int, t, L: int) -> np.ndarray:
    """Frame indices ``t-L .. t+L`` clamped to ``[0, n_frames-1]``; ``t`` may be an array."""
    t = np.asarray(t)
    offs = np.arange(-L, L + 1)
    return np.clip(t[..., None] + offs, 0, np.asarray(n_frames)[..., None] - 1)


def sample_window(clip: MotionClip, t: int, L: int, commands: np.ndarray | None = None) -> np.ndarray:
    """Command rows for frames ``t-L .. t+L`` (clamped at the clip ends), shape (2L+1, cmd_dim)."""
    if not 0 <= t < clip.n_frames:
        raise IndexError(f"frame {t} outside clip of {clip.n_frames} frames")
    cmds = clip.commands() if commands is None else commands
    return cmds[window_indices(clip.n_frames, t, L)]


@dataclass
class NoiseSpec:
    """Uniform jitter half-widths at level 100%, planar reduction of the 3-D table."""

    lin_vel: tuple[float, float] = (0.5, 0.2)  # (forward, vertical)
    ang_vel: float = 0.52
    gravity: float = 0.05
    joint_pos: float = 0.1

    def __post_init__(self):
        self.lin_vel = tuple(self.lin_vel)
        if min(*self.lin_vel, self.ang_vel, self.gravity, self.joint_pos) < 0:
            raise ValueError("noise half-widths must be >= 0")

    def half_widths(self, n_joints: int) -> np.ndarray:
        return np.array([*self.lin_vel, self.ang_vel, self.gravity, self.gravity] + [self.joint_pos] * n_joints)


def sample_perturbation(shape: tuple[int, ...], spec: NoiseSpec, level: float, rng: np.random.Generator) -> np.ndarray:
    """Raw additive jitter for command rows of ``shape`` (..., cmd_dim), before gravity renormalization."""
    if level < 0:
        raise ValueError("noise level must be >= 0")
    w = spec.half_widths(shape[-1] - 5) * (level / 100.0)
    return rng.uniform(-1.0, 1.0, size=shape) * w


def inject_noise(window: np.ndarray, spec: NoiseSpec, level: float, seed=None,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Jitter every command channel by U[-w*level/100, +w*level/100], i.i.d. per frame/channel.

    Gravity rows are re-normalized to unit length afterwards. Level 0
    returns an exact copy.
    """
    if level < 0:
        raise ValueError("noise level must be >= 0")
    window = np.asarray(window, dtype=np.float64)
    if level == 0:
        return window.copy()
    rng = rng if rng is not None else np.random.default_rng(seed)
    noisy = window + sample_perturbation(window.shape, spec, level, rng)
    g = noisy[..., 3:5]
    n = np.linalg.norm(g, axis=-1, keepdims=True)
    # a jitter that exactly cancels gravity keeps the clean direction
    noisy[..., 3:5] = np.where(n > 1e-12, g / np.maximum(n, 1e-12), window[..., 3:5])
    return noisy


# redundancy filter ------------------------------------------------------------------------

def _resample(q: np.ndarray, n: int) -> np.ndarray:
    src = np.linspace(0.0, 1.0, len(q))
    dst = np.linspace(0.0, 1.0, n)
    return np.stack([np.interp(dst, src, q[:, j]) for j in range(q.shape[1])], axis=1)


def clip_distance(a: MotionClip, b: MotionClip) -> float:
    """Mean per-frame joint-space distance after resampling to a common length."""
    if a.n_joints != b.n_joints:
        raise ValueError("clips have different joint counts")
    n = max(a.n_frames, b.n_frames)
    qa, qb = _resample(a.q, n), _resample(b.q, n)
    return float(np.linalg.norm(qa - qb, axis=1).mean())


def dedup_filter(library: list[MotionClip], distance_threshold: float) -> list[MotionClip]:
    """Greedy pass keeping a clip iff it is farther than the threshold from every kept clip.

    A threshold <= 0 disables filtering.
    """
    if not library:
        raise ValueError("empty motion library")
    if distance_threshold <= 0:
        return list(library)
    kept: list[MotionClip] = []
    for clip in library:
        if all(clip_distance(clip, k) > distance_threshold for k in kept):
            kept.append(clip)
    return kept
