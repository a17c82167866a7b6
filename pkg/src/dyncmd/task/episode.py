"""Episode initialization, the fall-recovery curriculum, and termination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import physim
from ..physim import RobotModel, SimState

CONTINUE = 0
ORIENTATION = 1
BASE_HEIGHT = 2
KEYPOINT_HEIGHT = 3
RECOVERY_TIMEOUT = 4
TIME_LIMIT = 5
REASONS = ("continue", "orientation", "base_height", "keypoint_height", "recovery_timeout", "time_limit")


@dataclass
class CurriculumConfig:
    recovery_prob: float = 0.15
    recovery_window: float = 3.0
    # at the nominal mass; scaled by RobotModel.assist_scale
    assist_max: float = 200.0
    assist_floor: float = 0.0
    anneal_iters: int = 200
    max_pitch: float = 1.0
    min_base_height_frac: float = 0.4
    min_keypoint_height_frac: float = 0.15
    recovered_height_frac: float = 0.7
    recovered_hold: float = 0.5
    recovery_clip: str = "getup"
    init_q_noise: float = 0.05
    init_vel_noise: float = 0.1
    recovery_drop: float = 0.1
    recovery_vel: float = 0.5
    min_episode_frames: int = 50

    def __post_init__(self):
        if not 0.0 <= self.recovery_prob <= 1.0:
            raise ValueError("recovery_prob must be in [0, 1]")
        if self.recovery_window <= 0 or self.recovered_hold < 0:
            raise ValueError("recovery_window must be > 0")
        if self.anneal_iters <= 0:
            raise ValueError("anneal_iters must be > 0")
        if min(self.max_pitch, self.min_base_height_frac, self.min_keypoint_height_frac) <= 0:
            raise ValueError("instability thresholds must be positive")
        if min(self.assist_max, self.assist_floor, self.init_q_noise, self.init_vel_noise,
               self.recovery_drop, self.recovery_vel) < 0:
            raise ValueError("curriculum magnitudes must be >= 0")


@dataclass
class EpisodeConfig:
    is_recovery: bool
    recovery_window: float
    assist_magnitude: float
    max_length: float
    max_pitch: float
    min_base_height: float
    min_keypoint_height: float
    recovered_height: float
    recovered_hold: float

    def __post_init__(self):
        if self.recovery_window <= 0:
            raise ValueError("recovery_window must be > 0")
        if min(self.max_pitch, self.min_base_height, self.min_keypoint_height) <= 0:
            raise ValueError("thresholds must be positive")


def anneal_assist(iteration: int, total_anneal_iters: int, F_max: float, F_floor: float = 0.0) -> float:
    """Linearly decaying cap on the assist force, held at ``F_floor`` afterwards."""
    if total_anneal_iters <= 0:
        raise ValueError("total_anneal_iters must be > 0")
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return max(F_max * (1.0 - iteration / total_anneal_iters), F_floor)


def episode_config(model: RobotModel, cur: CurriculumConfig, is_recovery: bool, assist: float,
                   max_length: float) -> EpisodeConfig:
    h = model.standing_height
    return EpisodeConfig(
        is_recovery=bool(is_recovery),
        recovery_window=cur.recovery_window,
        assist_magnitude=float(assist),
        max_length=float(max_length),
        max_pitch=cur.max_pitch,
        min_base_height=cur.min_base_height_frac * h,
        min_keypoint_height=cur.min_keypoint_height_frac * h,
        recovered_height=cur.recovered_height_frac * h,
        recovered_hold=cur.recovered_hold,
    )


def _lift_to_ground(model: RobotModel, st: SimState) -> None:
    low = physim.point_positions(model, st, physim.contact_points(model))[..., 1].min(-1)
    st.base_pos[..., 1] += np.maximum(0.0, -low)


def recovery_index(library) -> int:
    for i, clip in enumerate(library):
        if clip.kind == "getup":
            return i
    return 0


def init_episode(model: RobotModel, library, rng: np.random.Generator, cur: CurriculumConfig,
                 assist_cap: float = 0.0, recovery_clip: int | None = None, tracking: list[int] | None = None):
    """Draw a fresh episode: ``(state, episode_cfg, clip_index, t0)``.

    With probability ``recovery_prob`` the robot starts in a random fallen
    pose tracking the recovery clip from frame 0, with an assist force drawn
    below ``assist_cap``. Otherwise it starts on a random clip (from
    ``tracking`` if given) and phase, at the reference state plus small noise.
    """
    if not library:
        raise ValueError("empty motion library")
    if rng.random() < cur.recovery_prob:
        ci = recovery_index(library) if recovery_clip is None else recovery_clip
        clip = library[ci]
        nj = model.n_joints
        st = SimState(
            base_pos=np.array([clip.base_pos[0, 0], 0.0]),
            base_pitch=np.array(rng.uniform(-np.pi, np.pi)),
            base_vel=rng.uniform(-cur.recovery_vel, cur.recovery_vel, 2),
            base_ang_vel=np.array(rng.uniform(-cur.recovery_vel, cur.recovery_vel)),
            q=rng.uniform(model.lower, model.upper),
            qd=rng.uniform(-cur.recovery_vel, cur.recovery_vel, nj),
            contacts=np.zeros(model.n_links, dtype=bool),
            time=np.array(0.0),
        )
        low = physim.point_positions(model, st, physim.contact_points(model))[:, 1].min()
        st.base_pos[1] = rng.uniform(0.0, cur.recovery_drop) - low
        assist = rng.uniform(0.0, assist_cap) if assist_cap > 0 else 0.0
        ep = episode_config(model, cur, True, assist, clip.duration)
        return st, ep, ci, 0

    ci = int(rng.integers(len(library))) if tracking is None else int(tracking[rng.integers(len(tracking))])
    clip = library[ci]
    last = max(1, clip.n_frames - 1 - cur.min_episode_frames)
    t0 = int(rng.integers(last))
    st = clip.state_at(model, t0)
    st.q = np.clip(st.q + rng.uniform(-cur.init_q_noise, cur.init_q_noise, model.n_joints), model.lower, model.upper)
    st.qd = st.qd + rng.uniform(-cur.init_vel_noise, cur.init_vel_noise, model.n_joints)
    st.base_vel = st.base_vel + rng.uniform(-cur.init_vel_noise, cur.init_vel_noise, 2)
    _lift_to_ground(model, st)
    ep = episode_config(model, cur, False, 0.0, (clip.n_frames - 1 - t0) / clip.fps)
    return st, ep, ci, t0


def termination_codes(model: RobotModel, state: SimState, is_recovery, elapsed, recovered, max_length,
                      max_pitch, min_base_height, min_keypoint_height, recovery_window) -> np.ndarray:
    """Vectorized termination reasons (0 = continue)."""
    pitch = np.abs(np.arctan2(np.sin(state.base_pitch), np.cos(state.base_pitch)))
    kp = physim.keypoint_positions(model, state)
    head = kp[..., list(model.head_keypoints), 1].min(-1)
    code = np.zeros(np.shape(state.base_pitch), dtype=np.int64)
    code = np.where(head < min_keypoint_height, KEYPOINT_HEIGHT, code)
    code = np.where(state.base_pos[..., 1] < min_base_height, BASE_HEIGHT, code)
    code = np.where(pitch > max_pitch, ORIENTATION, code)
    in_window = np.asarray(is_recovery) & (np.asarray(elapsed) <= recovery_window)
    code = np.where(in_window, CONTINUE, code)
    # once the window is over a recovery episode must have recovered
    timed_out = np.asarray(is_recovery) & ~in_window & ~np.asarray(recovered)
    code = np.where(timed_out, RECOVERY_TIMEOUT, code)
    code = np.where((code == CONTINUE) & (np.asarray(elapsed) >= np.asarray(max_length) - 1e-9), TIME_LIMIT, code)
    return code


def check_termination(state: SimState, episode_cfg: EpisodeConfig, elapsed: float, recovered_flag: bool,
                      model: RobotModel) -> tuple[bool, str]:
    """``(terminate?, reason)`` for one env; reason is ``"continue"`` when running."""
    e = episode_cfg
    code = int(termination_codes(model, state, e.is_recovery, elapsed, recovered_flag, e.max_length, e.max_pitch,
                                 e.min_base_height, e.min_keypoint_height, e.recovery_window))
    return code != CONTINUE, REASONS[code]


def upright(state: SimState, max_pitch, recovered_height) -> np.ndarray:
    pitch = np.abs(np.arctan2(np.sin(state.base_pitch), np.cos(state.base_pitch)))
    return (pitch < max_pitch) & (state.base_pos[..., 1] > recovered_height)
