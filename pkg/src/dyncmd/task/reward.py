"""Tracking reward: exponential kernels on keypoint errors minus regularizers."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import physim
from ..physim import RobotModel, SimState

TRACKING_TERMS = ("kp_pos", "rel_pose", "kp_vel")
PENALTY_TERMS = ("action_rate", "joint_limit", "bad_contact")


@dataclass
class RewardWeights:
    kp_pos: float = 1.0
    rel_pose: float = 0.5
    kp_vel: float = 0.5
    # keypoint-position width at nominal leg length; scaled by the model
    sigma_kp_pos: float = 0.3
    sigma_rel_pose: float = 0.2
    sigma_kp_vel: float = 1.0
    action_rate: float = 0.01
    joint_limit: float = 1.0
    joint_limit_margin: float = 0.05
    bad_contact: float = 0.5
    nominal_leg_length: float = 0.8

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"reward setting {k} must be >= 0")
        for k in ("sigma_kp_pos", "sigma_rel_pose", "sigma_kp_vel", "nominal_leg_length"):
            if getattr(self, k) <= 0:
                raise ValueError(f"{k} must be > 0")


def kernel(err, weight: float, sigma: float) -> np.ndarray:
    return weight * np.exp(-np.square(err) / sigma**2)


def reward_terms(model: RobotModel, state: SimState, action, prev_action, ref_kp, ref_kp_vel, ref_base,
                 weights: RewardWeights) -> dict[str, np.ndarray]:
    """All terms, penalties reported as positive magnitudes."""
    kp = physim.keypoint_positions(model, state)
    kv = physim.keypoint_velocities(model, state)
    if kp.shape[-2] != np.shape(ref_kp)[-2]:
        raise ValueError("reference and model keypoint sets differ")
    e_pos = np.linalg.norm(kp - ref_kp, axis=-1).mean(-1)
    rel = kp - state.base_pos[..., None, :]
    rel_ref = ref_kp - np.asarray(ref_base)[..., None, :]
    e_rel = np.linalg.norm(rel - rel_ref, axis=-1).mean(-1)
    e_vel = np.linalg.norm(kv - ref_kp_vel, axis=-1).mean(-1)
    sig_pos = weights.sigma_kp_pos * model.leg_length / weights.nominal_leg_length

    rate = np.square(np.asarray(action) - np.asarray(prev_action)).sum(-1)
    margin = weights.joint_limit_margin * (model.upper - model.lower)
    dist = np.minimum(state.q - model.lower, model.upper - state.q)
    prox = (np.maximum(0.0, margin - dist) / margin).sum(-1)
    feet = np.zeros(model.n_links, dtype=bool)
    feet[list(model.foot_links)] = True
    bad = (state.contacts & ~feet).sum(-1).astype(np.float64)
    return {
        "kp_pos": kernel(e_pos, weights.kp_pos, sig_pos),
        "rel_pose": kernel(e_rel, weights.rel_pose, weights.sigma_rel_pose),
        "kp_vel": kernel(e_vel, weights.kp_vel, weights.sigma_kp_vel),
        "action_rate": weights.action_rate * rate,
        "joint_limit": weights.joint_limit * prox,
        "bad_contact": weights.bad_contact * bad,
    }


def total_reward(terms: dict[str, np.ndarray]) -> np.ndarray:
    return sum(terms[k] for k in TRACKING_TERMS) - sum(terms[k] for k in PENALTY_TERMS)


def tracking_reward(terms: dict[str, np.ndarray]) -> np.ndarray:
    return sum(terms[k] for k in TRACKING_TERMS)


def compute_reward(model: RobotModel, state: SimState, action, prev_action, clip, t: int,
                   weights: RewardWeights) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Reward of ``state`` against clip frame ``t``: (total, per-term breakdown)."""
    if not 0 <= t < clip.n_frames:
        raise IndexError(f"frame {t} outside clip of {clip.n_frames} frames")
    terms = reward_terms(model, state, action, prev_action, clip.keypoints[t], clip.keypoint_vel[t],
                         clip.base_pos[t], weights)
    return total_reward(terms), terms
