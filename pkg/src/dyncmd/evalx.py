"""Evaluation protocol: tracking metrics, noise sweeps, and ablation tables."""

from __future__ import annotations

import copy
import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import physim
from .config import RunConfig
from .motion import MotionClip
from .nets import PolicyParams
from .physim import RobotModel
from .task import TrackingEnv
from .trainer import policy_act

MM = 1000.0
DEFAULT_LEVELS = tuple(range(0, 1501, 100))
SWEEP_FIELDS = ("level", "variant", "seed", "succ", "mpjpe", "mpkpe", "e_vel", "e_acc")
ABLATION_FIELDS = ("policy", "suite", "metric", "mean", "std", "n_seeds", "per_seed")
REPORT_FIELDS = ("clip", "episodes", "succ", "mpjpe", "mpkpe", "e_vel", "e_acc")


@dataclass
class Trajectory:
    """Per-frame base height, actuated-joint positions and keypoints (world, m)."""

    base_height: np.ndarray  # (T,)
    joints: np.ndarray  # (T, J, 2)
    keypoints: np.ndarray  # (T, K, 2)

    def __len__(self):
        return len(self.base_height)


def clip_trajectory(model: RobotModel, clip: MotionClip) -> Trajectory:
    joints = physim.fk_config(model, clip.base_pos, clip.base_pitch, clip.q, physim.joint_points(model))
    return Trajectory(clip.base_pos[:, 1].copy(), joints, clip.keypoints.copy())


def _aligned(rollout: Trajectory, reference: Trajectory) -> None:
    if len(rollout) != len(reference):
        raise ValueError(f"rollout has {len(rollout)} frames, reference has {len(reference)}")


def fall_threshold(model: RobotModel, threshold_m: float = 0.2) -> float:
    """The nominal fall criterion rescaled to this robot's standing height."""
    return threshold_m * model.standing_height / model.nominal_height


def compute_success(rollout: Trajectory, reference: Trajectory, threshold_m: float) -> bool:
    _aligned(rollout, reference)
    return bool(np.all(np.abs(rollout.base_height - reference.base_height) <= threshold_m))


def compute_mpjpe(rollout: Trajectory, reference: Trajectory) -> float:
    _aligned(rollout, reference)
    return float(np.linalg.norm(rollout.joints - reference.joints, axis=-1).mean() * MM)


def compute_mpkpe(rollout: Trajectory, reference: Trajectory) -> float:
    _aligned(rollout, reference)
    return float(np.linalg.norm(rollout.keypoints - reference.keypoints, axis=-1).mean() * MM)


def compute_vel_acc(rollout: Trajectory, reference: Trajectory) -> tuple[float, float]:
    """Keypoint velocity (mm/frame) and acceleration (mm/frame^2) errors."""
    _aligned(rollout, reference)
    if len(rollout) < 3:
        raise ValueError("need at least 3 frames")
    dv = np.diff(rollout.keypoints, axis=0) - np.diff(reference.keypoints, axis=0)
    da = np.diff(rollout.keypoints, 2, axis=0) - np.diff(reference.keypoints, 2, axis=0)
    return float(np.linalg.norm(dv, axis=-1).mean() * MM), float(np.linalg.norm(da, axis=-1).mean() * MM)


@dataclass
class MetricsReport:
    succ: float
    mpjpe: float
    mpkpe: float
    e_vel: float
    e_acc: float
    per_clip: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.succ <= 1.0:
            raise ValueError("succ must lie in [0, 1]")
        if min(self.mpjpe, self.mpkpe, self.e_vel, self.e_acc) < 0:
            raise ValueError("errors must be >= 0")

    def metrics(self) -> dict:
        return {"succ": self.succ, "mpjpe": self.mpjpe, "mpkpe": self.mpkpe, "e_vel": self.e_vel, "e_acc": self.e_acc}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for name, m in self.per_clip.items():
            w.writerow([name, self.counts[name]] + [repr(float(m[k])) for k in REPORT_FIELDS[2:]])
        w.writerow(["all", sum(self.counts.values())] + [repr(float(v)) for v in self.metrics().values()])
        return buf.getvalue()


def episode_metrics(rollout: Trajectory, reference: Trajectory, threshold_m: float) -> dict:
    e_vel, e_acc = compute_vel_acc(rollout, reference)
    return {
        "succ": float(compute_success(rollout, reference, threshold_m)),
        "mpjpe": compute_mpjpe(rollout, reference),
        "mpkpe": compute_mpkpe(rollout, reference),
        "e_vel": e_vel,
        "e_acc": e_acc,
    }


def rollout_policy(params: PolicyParams, cfg: RunConfig, clips: list[MotionClip], episodes: int, seed: int,
                   noise_level: float = 0.0, init_noise: float | None = None) -> list[tuple[int, Trajectory]]:
    """Deterministic full-clip rollouts from frame 0, no early termination.

    Command noise corrupts the whole reference stream of each episode; the
    proprioceptive observation is left clean.
    """
    model = cfg.robot
    task = copy.deepcopy(cfg.task)
    task.obs_noise.enabled = False
    task.cmd_noise_level = float(noise_level)
    n_env = len(clips) * episodes
    env = TrackingEnv(model, clips, task, params.cfg.hist_len, params.cfg.L, n_env, seed=seed, terminate=False)
    clip_idx = np.repeat(np.arange(len(clips)), episodes)
    rngs = [np.random.default_rng([seed, int(c), e % episodes]) for e, c in enumerate(clip_idx)]
    noise = cfg.eval.init_noise if init_noise is None else init_noise
    env.start_episodes(clip_idx, np.zeros(n_env, dtype=np.int64), noise, rngs)
    lengths = env.bank.lengths[clip_idx]
    T = int(lengths.max())
    jp, kp = physim.joint_points(model), physim.keypoint_spec(model)
    H = np.zeros((T, n_env))
    J = np.zeros((T, n_env, len(jp), 2))
    K = np.zeros((T, n_env, len(kp), 2))

    def record(t):
        H[t] = env.state.base_pos[:, 1]
        J[t] = physim.point_positions(model, env.state, jp)
        K[t] = physim.point_positions(model, env.state, kp)

    record(0)
    for t in range(1, T):
        obs, cmd, _ = env.observe()
        actions, _ = policy_act(params, obs, cmd, None)
        env.step(actions)
        record(t)
    out = []
    for i in range(n_env):
        n = lengths[i]
        out.append((int(clip_idx[i]), Trajectory(H[:n, i].copy(), J[:n, i].copy(), K[:n, i].copy())))
    return out


def evaluate(params: PolicyParams, cfg: RunConfig, clips: list[MotionClip], episodes: int | None = None,
             seed: int | None = None, noise_level: float | None = None) -> MetricsReport:
    episodes = cfg.eval.episodes if episodes is None else episodes
    seed = cfg.eval.seed if seed is None else seed
    level = cfg.eval.noise_level if noise_level is None else noise_level
    thr = fall_threshold(cfg.robot, cfg.eval.fall_threshold)
    refs = [clip_trajectory(cfg.robot, c) for c in clips]
    results = rollout_policy(params, cfg, clips, episodes, seed, level)
    names = [f"{i:02d}_{c.kind}" for i, c in enumerate(clips)]
    per: dict[str, list[dict]] = {n: [] for n in names}
    for ci, traj in results:
        per[names[ci]].append(episode_metrics(traj, refs[ci], thr))
    keys = ("succ", "mpjpe", "mpkpe", "e_vel", "e_acc")
    per_clip = {n: {k: float(np.mean([m[k] for m in v])) for k in keys} for n, v in per.items()}
    allm = [m for v in per.values() for m in v]
    overall = {k: float(np.mean([m[k] for m in allm])) for k in keys}
    return MetricsReport(**overall, per_clip=per_clip, seeds=[seed], counts={n: len(v) for n, v in per.items()})


# sweeps and tables -----------------------------------------------------------------------

@dataclass
class SweepConfig:
    levels: list[float] = field(default_factory=lambda: list(DEFAULT_LEVELS))
    episodes: int = 10
    eval_seed: int = 1000

    def __post_init__(self):
        if any(lv < 0 for lv in self.levels):
            raise ValueError("noise levels must be >= 0")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_rows(path, fields, rows) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r[k]) for k in fields})
    with open(path, "w", newline="") as f:
        f.write(buf.getvalue())


def run_noise_sweep(policies: dict[str, list[tuple[int, PolicyParams]]], cfg: RunConfig, clips: list[MotionClip],
                    sweep: SweepConfig) -> list[dict]:
    """One row per (level, variant, training seed); command noise only."""
    if not policies or any(not v for v in policies.values()):
        raise ValueError("missing checkpoints for the sweep")
    rows = []
    for level in sweep.levels:
        for variant, runs in policies.items():
            for seed, params in runs:
                rep = evaluate(params, cfg, clips, sweep.episodes, sweep.eval_seed, level)
                rows.append({"level": level, "variant": variant, "seed": seed, **rep.metrics()})
    return rows


def degradation_ratios(rows: list[dict], level_hi: float, level_lo: float = 0.0, metric: str = "mpjpe") -> dict:
    """``metric(level_hi) / metric(level_lo)`` per variant and seed."""
    table: dict = {}
    for r in rows:
        table.setdefault(r["variant"], {}).setdefault(r["seed"], {})[float(r["level"])] = float(r[metric])
    return {v: {s: d[float(level_hi)] / d[float(level_lo)] for s, d in seeds.items()} for v, seeds in table.items()}


def run_ablation_table(policies: dict[str, list[tuple[int, PolicyParams]]], suites: dict[str, list[MotionClip]],
                       cfg: RunConfig, budgets: dict[str, int] | None = None, episodes: int | None = None,
                       seed: int | None = None) -> tuple[list[dict], list[str]]:
    """Succ and MPJPE mean/std over training seeds for every (policy, suite)."""
    notes = []
    if budgets and len(set(budgets.values())) > 1:
        notes.append(f"training budgets differ: {budgets}")
        warnings.warn(notes[-1])
    rows = []
    for name, runs in policies.items():
        for suite, clips in suites.items():
            reps = [evaluate(p, cfg, clips, episodes, seed, 0.0) for _, p in runs]
            for metric in ("succ", "mpjpe"):
                vals = [getattr(r, metric) for r in reps]
                rows.append({
                    "policy": name, "suite": suite, "metric": metric,
                    "mean": float(np.mean(vals)), "std": float(np.std(vals)), "n_seeds": len(vals),
                    "per_seed": ";".join(repr(float(v)) for v in vals),
                })
    return rows, notes
