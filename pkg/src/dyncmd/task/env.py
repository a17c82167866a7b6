"""Batched tracking environment built on the planar simulator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import motion, physim
from ..motion import MotionClip, NoiseSpec
from ..physim import RobotModel, SimState
from . import episode as E
from .features import ObsNoise, build_observation, critic_dim, obs_dim, privileged
from .reward import RewardWeights, reward_terms, total_reward, tracking_reward


@dataclass
class TaskConfig:
    control_hz: float = 50.0
    substeps: int = 4
    action_scale: float = 0.25
    cmd_noise_level: float = 0.0
    cmd_noise: NoiseSpec = field(default_factory=NoiseSpec)
    obs_noise: ObsNoise = field(default_factory=ObsNoise)
    reward: RewardWeights = field(default_factory=RewardWeights)
    curriculum: E.CurriculumConfig = field(default_factory=E.CurriculumConfig)

    def __post_init__(self):
        if self.control_hz <= 0 or self.substeps < 1:
            raise ValueError("control_hz must be > 0 and substeps >= 1")
        if not 0 < 1.0 / (self.control_hz * self.substeps) <= 0.02:
            raise ValueError("physics step must be in (0, 0.02] s")
        if self.action_scale <= 0 or self.cmd_noise_level < 0:
            raise ValueError("action_scale must be > 0 and cmd_noise_level >= 0")

    @property
    def dt(self) -> float:
        return 1.0 / (self.control_hz * self.substeps)

    @property
    def control_dt(self) -> float:
        return 1.0 / self.control_hz


class ClipBank:
    """Clips stacked along a leading axis, padded by repeating the last frame."""

    def __init__(self, clips: list[MotionClip], fps: float):
        if not clips:
            raise ValueError("empty motion library")
        for c in clips:
            if abs(c.fps - fps) > 1e-9:
                raise ValueError(f"clip {c.kind!r} has fps {c.fps}, control rate is {fps}")
        self.clips = list(clips)
        self.lengths = np.array([c.n_frames for c in clips])
        T = int(self.lengths.max())

        def stack(get):
            out = []
            for c in clips:
                a = get(c)
                pad = np.repeat(a[-1:], T - len(a), axis=0)
                out.append(np.concatenate([a, pad], 0))
            return np.stack(out)

        self.cmds = stack(lambda c: c.commands())
        self.keypoints = stack(lambda c: c.keypoints)
        self.keypoint_vel = stack(lambda c: c.keypoint_vel)
        self.base_pos = stack(lambda c: c.base_pos)
        self.q = stack(lambda c: c.q)

    def __len__(self):
        return len(self.clips)

    def frame(self, clip_idx, t):
        return np.minimum(t, self.lengths[clip_idx] - 1)


class TrackingEnv:
    """``num_envs`` simulated robots tracking clips, with auto-reset.

    ``step`` takes raw policy actions; the PD target is the next reference
    pose plus ``action_scale * action``.
    """

    def __init__(self, model: RobotModel, clips: list[MotionClip], task: TaskConfig, hist_len: int, cmd_half: int,
                 num_envs: int, seed: int, terminate: bool = True, tracking: list[int] | None = None):
        if num_envs < 1:
            raise ValueError("num_envs must be >= 1")
        self.model = model
        self.task = task
        self.bank = ClipBank(clips, task.control_hz)
        self.hist_len = hist_len
        self.cmd_half = cmd_half
        self.num_envs = B = num_envs
        self.terminate = terminate
        self.rng = np.random.default_rng(seed)
        self.recovery_clip = E.recovery_index(clips)
        self.tracking = tracking
        self.assist_cap = 0.0
        nj = model.n_joints
        self.obs_dim = obs_dim(model)
        self.critic_dim = critic_dim(model)
        self.cmd_dim = motion.cmd_dim(nj)
        self.state = physim.default_state(model, batch=B)
        self.clip = np.zeros(B, dtype=np.int64)
        self.frame = np.zeros(B, dtype=np.int64)
        self.steps = np.zeros(B, dtype=np.int64)
        self.is_rec = np.zeros(B, dtype=bool)
        self.assist = np.zeros(B)
        self.max_len = np.zeros(B)
        self.upright_time = np.zeros(B)
        self.recovered = np.zeros(B, dtype=bool)
        self.prev_action = np.zeros((B, nj))
        self.obs_hist = np.zeros((B, hist_len, self.obs_dim))
        self.clean_obs = np.zeros((B, self.obs_dim))
        self.cmd_stream = np.zeros((B, self.bank.cmds.shape[1], self.cmd_dim))
        self.ep_track = np.zeros(B)
        self.ep_return = np.zeros(B)
        h = model.standing_height
        cur = task.curriculum
        self.thresholds = dict(max_pitch=cur.max_pitch, min_base_height=cur.min_base_height_frac * h,
                               min_keypoint_height=cur.min_keypoint_height_frac * h,
                               recovery_window=cur.recovery_window)
        self.recovered_height = cur.recovered_height_frac * h
        self.reset_all()

    # episode bookkeeping --------------------------------------------------------------------

    def _set_episode(self, i: int, st: SimState, ep: E.EpisodeConfig, ci: int, t0: int, cmd_noise_rng=None):
        self.state.assign(i, st)
        self.clip[i] = ci
        self.frame[i] = t0
        self.steps[i] = 0
        self.is_rec[i] = ep.is_recovery
        self.assist[i] = ep.assist_magnitude
        self.max_len[i] = ep.max_length
        self.upright_time[i] = 0.0
        self.recovered[i] = False
        self.prev_action[i] = 0.0
        self.ep_track[i] = 0.0
        self.ep_return[i] = 0.0
        stream = self.bank.cmds[ci]
        level = self.task.cmd_noise_level
        if level > 0:
            stream = motion.inject_noise(stream, self.task.cmd_noise, level, rng=cmd_noise_rng or self.rng)
        self.cmd_stream[i] = stream

    def _refresh_obs(self, idx, fill_history: bool):
        st = self.state.index(idx)
        self.clean_obs[idx] = build_observation(st, self.prev_action[idx], self.model)
        noisy = build_observation(st, self.prev_action[idx], self.model, self.task.obs_noise, self.rng)
        if fill_history:
            self.obs_hist[idx] = noisy[:, None, :]
        else:
            self.obs_hist[idx] = np.concatenate([self.obs_hist[idx][:, 1:], noisy[:, None, :]], axis=1)

    def reset_envs(self, idx) -> None:
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0:
            return
        cur = self.task.curriculum
        for i in idx:
            st, ep, ci, t0 = E.init_episode(self.model, self.bank.clips, self.rng, cur, self.assist_cap,
                                            self.recovery_clip, self.tracking)
            self._set_episode(int(i), st, ep, ci, t0)
        self._refresh_obs(idx, fill_history=True)

    def reset_all(self) -> None:
        self.reset_envs(np.arange(self.num_envs))

    def start_episodes(self, clip_idx, t0, init_noise: float, rngs: list[np.random.Generator]) -> None:
        """Deterministic evaluation start: each env at its clip frame plus small noise."""
        for i, (ci, t, r) in enumerate(zip(clip_idx, t0, rngs)):
            clip = self.bank.clips[ci]
            st = clip.state_at(self.model, int(t))
            st.q = np.clip(st.q + r.uniform(-init_noise, init_noise, self.model.n_joints),
                           self.model.lower, self.model.upper)
            E._lift_to_ground(self.model, st)
            ep = E.episode_config(self.model, self.task.curriculum, False, 0.0, (clip.n_frames - 1 - t) / clip.fps)
            self._set_episode(i, st, ep, int(ci), int(t), cmd_noise_rng=r)
        self._refresh_obs(np.arange(self.num_envs), fill_history=True)

    # observations ----------------------------------------------------------------------------

    def cmd_windows(self) -> np.ndarray:
        n = self.bank.lengths[self.clip]
        idx = motion.window_indices(n, self.frame, self.cmd_half)
        return np.take_along_axis(self.cmd_stream, idx[..., None], axis=1)

    def critic_inputs(self) -> np.ndarray:
        f = self.bank.frame(self.clip, self.frame)
        cmd = self.bank.cmds[self.clip, f]
        base = self.bank.base_pos[self.clip, f]
        priv = privileged(self.model, self.state, base[:, 1], base[:, 0])
        return np.concatenate([self.clean_obs, cmd, priv], axis=-1)

    def observe(self):
        return self.obs_hist.copy(), self.cmd_windows(), self.critic_inputs()

    # dynamics --------------------------------------------------------------------------------

    def step(self, action: np.ndarray):
        model, task = self.model, self.task
        action = np.asarray(action, dtype=np.float64)
        if not np.isfinite(action).all():
            raise physim.SimError("non-finite action")
        B = self.num_envs
        n = self.bank.lengths[self.clip]
        nxt = np.minimum(self.frame + 1, n - 1)
        q_ref = self.cmd_stream[np.arange(B), nxt, 5:]
        q_tar = physim.residual_setpoint(model, q_ref, task.action_scale * action)
        elapsed0 = self.steps * task.control_dt
        fext = np.zeros((B, model.n_links, 2))
        assisting = self.is_rec & (elapsed0 < task.curriculum.recovery_window)
        fext[:, 0] = physim.apply_assist(self.state, np.where(assisting, self.assist, 0.0))
        st = self.state
        for _ in range(task.substeps):
            tau = physim.pd_torque(model, q_tar, st.q, st.qd)
            st = physim.step(model, st, tau, fext, task.dt)
        self.state = st
        self.frame = self.frame + 1
        self.steps = self.steps + 1
        elapsed = self.steps * task.control_dt

        f = self.bank.frame(self.clip, self.frame)
        terms = reward_terms(model, st, action, self.prev_action, self.bank.keypoints[self.clip, f],
                             self.bank.keypoint_vel[self.clip, f], self.bank.base_pos[self.clip, f], task.reward)
        reward = total_reward(terms)
        track = tracking_reward(terms)

        up = E.upright(st, self.thresholds["max_pitch"], self.recovered_height)
        self.upright_time = np.where(up, self.upright_time + task.control_dt, 0.0)
        self.recovered |= self.upright_time >= task.curriculum.recovered_hold - 1e-9
        if self.terminate:
            codes = E.termination_codes(model, st, self.is_rec, elapsed, self.recovered, self.max_len,
                                        **self.thresholds)
        else:
            # evaluation mode: run on, holding the last reference frame
            codes = np.zeros(B, dtype=np.int64)
        done = codes != E.CONTINUE

        self.prev_action = action.copy()
        self._refresh_obs(np.arange(B), fill_history=False)
        self.ep_track += track
        self.ep_return += reward
        info = {
            "terms": terms,
            "tracking": track,
            "codes": codes,
            "time_out": codes == E.TIME_LIMIT,
            "assisting": assisting,
        }
        if done.any():
            idx = np.flatnonzero(done)
            info["terminal_critic"] = self.critic_inputs()[idx]
            info["done_idx"] = idx
            info["episodes"] = {
                "tracking_return": self.ep_track[idx].copy(),
                "return": self.ep_return[idx].copy(),
                "length": self.steps[idx].copy(),
                "recovery": self.is_rec[idx].copy(),
                "recovered": self.recovered[idx].copy(),
                "codes": codes[idx].copy(),
            }
            self.reset_envs(idx)
        return reward, done, info
