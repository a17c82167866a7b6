"""Actor observation, command rows, and the privileged critic input."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import physim
from ..physim import RobotModel, SimState

ANG_VEL_SCALE = 0.25
JOINT_VEL_SCALE = 0.05


@dataclass
class ObsNoise:
    """Uniform actor-observation jitter half-widths (applied after scaling)."""

    enabled: bool = True
    gravity: float = 0.005
    ang_vel: float = 0.052
    joint_pos: float = 0.01
    joint_vel: float = 0.05

    def __post_init__(self):
        if min(self.gravity, self.ang_vel, self.joint_pos, self.joint_vel) < 0:
            raise ValueError("observation noise half-widths must be >= 0")

    def half_widths(self, n_joints: int) -> np.ndarray:
        return np.array([self.gravity] * 2 + [self.ang_vel] + [self.joint_pos] * n_joints
                        + [self.joint_vel] * n_joints + [0.0] * n_joints)


def obs_dim(model: RobotModel) -> int:
    return 3 + 3 * model.n_joints


def priv_dim(model: RobotModel) -> int:
    return 1 + 2 * len(model.keypoints) + 2


def critic_dim(model: RobotModel) -> int:
    return obs_dim(model) + 5 + model.n_joints + priv_dim(model)


def build_observation(state: SimState, prev_action, model: RobotModel, noise_cfg: ObsNoise | None = None,
                      rng: np.random.Generator | None = None) -> np.ndarray:
    """``[gravity_b, w*0.25, q - q0, qd*0.05, a_prev]``; noise (if any) is added last."""
    obs = np.concatenate([
        physim.projected_gravity(state.base_pitch),
        (ANG_VEL_SCALE * state.base_ang_vel)[..., None],
        state.q - np.array(model.q0),
        JOINT_VEL_SCALE * state.qd,
        np.asarray(prev_action, dtype=np.float64),
    ], axis=-1)
    if noise_cfg is not None and noise_cfg.enabled:
        if rng is None:
            raise ValueError("observation noise needs an rng")
        w = noise_cfg.half_widths(model.n_joints)
        obs = obs + rng.uniform(-1.0, 1.0, size=obs.shape) * w
    return obs


def privileged(model: RobotModel, state: SimState, h_ref, ref_base_x) -> np.ndarray:
    """``[h_ref, keypoints (x relative to the reference base x), base velocity]``."""
    kp = physim.keypoint_positions(model, state).copy()
    kp[..., 0] -= np.asarray(ref_base_x)[..., None]
    lead = kp.shape[:-2]
    return np.concatenate([np.asarray(h_ref, dtype=np.float64).reshape(*lead, 1),
                           kp.reshape(*lead, -1), state.base_vel], axis=-1)


def build_critic_input(state: SimState, obs, cmd, clip, t: int, model: RobotModel) -> np.ndarray:
    """Noise-free observation + command row + privileged block for one env."""
    if not 0 <= t < clip.n_frames:
        raise IndexError(f"frame {t} outside clip of {clip.n_frames} frames")
    priv = privileged(model, state, clip.base_pos[t, 1], clip.base_pos[t, 0])
    return np.concatenate([np.asarray(obs, dtype=np.float64), np.asarray(cmd, dtype=np.float64), priv], axis=-1)
