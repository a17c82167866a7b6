"""PPO with an asymmetric critic over the batched tracking env."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import motion, nets
from . import numkernel as nk
from .config import PpoConfig, RunConfig, check_dims
from .nets import PolicyParams
from .numkernel import checkpoint
from .task import PENALTY_TERMS, TRACKING_TERMS, TrackingEnv, anneal_assist

LOG2PI = math.log(2 * math.pi)

METRIC_FIELDS = (
    ["iteration", "assist_cap", "track_step", "track_episode", "episode_len", "episodes", "recovery_success"]
    + [f"r_{k}" for k in TRACKING_TERMS + PENALTY_TERMS]
    + ["policy_loss", "value_loss", "entropy", "approx_kl", "clip_frac", "grad_norm", "action_std"]
)


class TrainingAbort(RuntimeError):
    """Non-finite loss, action, or state; carries a diagnostic path when one was written."""

    def __init__(self, msg: str, dump: Path | None = None):
        super().__init__(msg)
        self.dump = dump


@dataclass
class RolloutBuffer:
    obs: np.ndarray  # (T, B, K+1, obs_dim)
    cmd: np.ndarray  # (T, B, 2L+1, cmd_dim)
    critic: np.ndarray  # (T, B, critic_dim)
    actions: np.ndarray  # (T, B, n_act)
    log_probs: np.ndarray  # (T, B)
    rewards: np.ndarray  # (T, B), scaled, time-out bootstrap folded in
    values: np.ndarray  # (T, B)
    dones: np.ndarray  # (T, B) bool
    codes: np.ndarray  # (T, B) termination reason
    tracking: np.ndarray  # (T, B) tracking part of the reward
    last_values: np.ndarray  # (B,)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rewards.shape[1], self.rewards.shape[0]  # (num_envs, rollout_len)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            params[k] = params[k] - lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def gaussian_log_prob(mean, log_std, actions):
    """Diagonal Gaussian log density summed over the action axis (graph-aware)."""
    z = nk.div(nk.sub(actions, mean), nk.exp(log_std))
    n = np.shape(actions)[-1]
    return nk.sub(nk.mul(nk.sum(nk.square(z), axis=-1), -0.5), nk.add(nk.sum(log_std), 0.5 * n * LOG2PI))


def policy_act(params: PolicyParams, obs, cmd, rng: np.random.Generator | None):
    """Sampled (or mean, without rng) actions and their log-probabilities."""
    mean, log_std = nets.policy_forward(params.tensors, params.cfg, obs, cmd)
    mean, log_std = mean.data, log_std.data
    if rng is None:
        actions = mean.copy()
    else:
        actions = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    logp = gaussian_log_prob(mean, log_std, actions).data
    return actions, logp


def values_of(params: PolicyParams, critic_in) -> np.ndarray:
    return nets.critic_forward(params.tensors, params.cfg, critic_in).data


def collect_rollouts(params: PolicyParams, env: TrackingEnv, cfg: PpoConfig, rng: np.random.Generator,
                     episode_log: list | None = None) -> RolloutBuffer:
    """Fixed-length rollout with auto-reset; finished episodes appended to ``episode_log``."""
    T, B = cfg.rollout_len, env.num_envs
    nact = params.cfg.action_dim
    buf = {
        "obs": np.zeros((T, B, env.hist_len, env.obs_dim)),
        "cmd": np.zeros((T, B, 2 * env.cmd_half + 1, env.cmd_dim)),
        "critic": np.zeros((T, B, env.critic_dim)),
        "actions": np.zeros((T, B, nact)),
        "log_probs": np.zeros((T, B)),
        "rewards": np.zeros((T, B)),
        "values": np.zeros((T, B)),
        "dones": np.zeros((T, B), dtype=bool),
        "codes": np.zeros((T, B), dtype=np.int64),
        "tracking": np.zeros((T, B)),
    }
    terms_sum = {k: 0.0 for k in TRACKING_TERMS + PENALTY_TERMS}
    for t in range(T):
        obs, cmd, crit = env.observe()
        actions, logp = policy_act(params, obs, cmd, rng)
        values = values_of(params, crit)
        rew, done, info = env.step(actions)
        rew = rew * cfg.reward_scale
        if cfg.bootstrap_timeouts and done.any():
            idx = info["done_idx"]
            tout = info["time_out"][idx]
            if tout.any():
                rew[idx[tout]] += cfg.gamma * values_of(params, info["terminal_critic"][tout])
        if episode_log is not None and "episodes" in info:
            e = info["episodes"]
            for j in range(len(e["length"])):
                episode_log.append({k: e[k][j] for k in e})
        for k in terms_sum:
            terms_sum[k] += float(info["terms"][k].mean())
        buf["obs"][t], buf["cmd"][t], buf["critic"][t] = obs, cmd, crit
        buf["actions"][t], buf["log_probs"][t], buf["values"][t] = actions, logp, values
        buf["rewards"][t], buf["dones"][t], buf["codes"][t] = rew, done, info["codes"]
        buf["tracking"][t] = info["tracking"]
    out = RolloutBuffer(**buf, last_values=values_of(params, env.critic_inputs()))
    out.term_means = {k: v / T for k, v in terms_sum.items()}
    return out


def compute_gae(rewards, values, dones, last_values, gamma: float, lam: float):
    """GAE over (T, B) arrays; a done at step t cuts bootstrapping from t+1."""
    rewards, values = np.asarray(rewards, float), np.asarray(values, float)
    notdone = 1.0 - np.asarray(dones, float)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    last = np.zeros_like(rewards[0])
    for t in reversed(range(T)):
        nxt = last_values if t == T - 1 else values[t + 1]
        delta = rewards[t] + gamma * nxt * notdone[t] - values[t]
        last = delta + gamma * lam * notdone[t] * last
        adv[t] = last
    return adv, adv + values


def normalize_advantages(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + eps)


def ppo_loss(P, cfg_net, ppo: PpoConfig, obs, cmd, critic_in, actions, old_logp, adv, ret):
    mean, log_std = nets.policy_forward(P, cfg_net, obs, cmd)
    logp = gaussian_log_prob(mean, log_std, actions)
    ratio = nk.exp(nk.sub(logp, old_logp))
    surr = nk.minimum(nk.mul(ratio, adv), nk.mul(nk.clip(ratio, 1 - ppo.clip_ratio, 1 + ppo.clip_ratio), adv))
    policy_loss = nk.neg(nk.mean(surr))
    v = nets.critic_forward(P, cfg_net, critic_in)
    value_loss = nk.mean(nk.square(nk.sub(v, ret)))
    entropy = nk.add(nk.sum(log_std), 0.5 * actions.shape[-1] * (1 + LOG2PI))
    loss = nk.add(nk.add(policy_loss, nk.mul(value_loss, ppo.value_coef)), nk.mul(entropy, -ppo.entropy_coef))
    return loss, policy_loss, value_loss, entropy, ratio


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm:
        s = max_norm / (norm + 1e-12)
        for k in grads:
            grads[k] = grads[k] * s
    return norm


def ppo_update(params: PolicyParams, buffer: RolloutBuffer, advantages, returns, cfg: PpoConfig, adam: Adam,
               rng: np.random.Generator, dump_dir: Path | None = None) -> dict:
    """Minibatched clipped-surrogate epochs; ``params`` is updated in place."""
    T, B = buffer.rewards.shape
    N = T * B

    def flat(a):
        return a.reshape(N, *a.shape[2:])

    obs, cmd, crit = flat(buffer.obs), flat(buffer.cmd), flat(buffer.critic)
    act, old = flat(buffer.actions), flat(buffer.log_probs)
    adv = normalize_advantages(flat(np.asarray(advantages)))
    ret = flat(np.asarray(returns))
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "approx_kl": 0.0, "clip_frac": 0.0,
             "grad_norm": 0.0}
    n_updates = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(N)
        for mb in np.array_split(perm, cfg.minibatches):
            try:
                with nk.Graph() as g:
                    P = g.params_from(params.tensors)
                    loss, pl, vl, ent, ratio = ppo_loss(P, params.cfg, cfg, obs[mb], cmd[mb], crit[mb], act[mb],
                                                        old[mb], adv[mb], ret[mb])
                    g.backward(loss)
            except nk.NonFiniteError as e:
                dump = None
                if dump_dir is not None:
                    # npz, since the checkpoint format refuses the very values we want to see
                    dump = Path(dump_dir) / "nonfinite_minibatch.npz"
                    np.savez(dump, obs=obs[mb], cmd=cmd[mb], critic=crit[mb], actions=act[mb],
                             old_log_probs=old[mb], advantages=adv[mb], returns=ret[mb], error=str(e))
                raise TrainingAbort(f"non-finite loss in PPO update: {e}", dump) from e
            grads = g.grads()
            gn = clip_grad_norm(grads, cfg.max_grad_norm)
            adam.step(params.tensors, grads, cfg.lr)
            r = ratio.data
            stats["policy_loss"] += float(pl.data)
            stats["value_loss"] += float(vl.data)
            stats["entropy"] += float(ent.data)
            stats["approx_kl"] += float(np.mean((r - 1) - np.log(r)))
            stats["clip_frac"] += float(np.mean(np.abs(r - 1) > cfg.clip_ratio))
            stats["grad_norm"] += gn
            n_updates += 1
    return {k: v / n_updates for k, v in stats.items()}


# run assembly -------------------------------------------------------------------------------

def motion_library(cfg: RunConfig) -> list[motion.MotionClip]:
    m = cfg.motions
    if m.library is not None:
        clips = motion.load_library(m.library)
    else:
        clips = [motion.generate_clip(k, cfg.robot, m.duration, m.seed) for k in m.kinds]
    return clips


def training_clips(cfg: RunConfig) -> tuple[list[motion.MotionClip], list[int]]:
    """Tracking clips plus, when the curriculum is on, the recovery clip.

    Returns the clips and the indices tracking episodes draw from; an
    appended recovery clip is used by recovery episodes only.
    """
    clips = motion_library(cfg)
    tracking = list(range(len(clips)))
    cur = cfg.task.curriculum
    if cur.recovery_prob > 0 and not any(c.kind == cur.recovery_clip for c in clips):
        clips.append(motion.generate_clip(cur.recovery_clip, cfg.robot, cfg.motions.duration, cfg.motions.seed))
    return clips, tracking


class Trainer:
    """Mutable training state; everything needed to resume lives in the checkpoint."""

    def __init__(self, cfg: RunConfig):
        check_dims(cfg)
        self.cfg = cfg
        seed = cfg.seed
        self.params = nets.init_params(cfg.net, np.random.default_rng([seed, 1]))
        self.adam = Adam(self.params.tensors)
        self.rng = np.random.default_rng([seed, 2])
        clips, tracking = training_clips(cfg)
        self.env = TrackingEnv(cfg.robot, clips, cfg.task, cfg.net.hist_len, cfg.net.L, cfg.ppo.num_envs,
                               seed=seed * 1000 + 3, tracking=tracking)
        self.iteration = 0
        self.episodes: deque = deque(maxlen=100)

    def iterate(self, dump_dir: Path | None = None) -> dict:
        cfg, cur = self.cfg, self.cfg.task.curriculum
        cap = anneal_assist(self.iteration, cur.anneal_iters, cur.assist_max * self.cfg.robot.assist_scale,
                            cur.assist_floor)
        self.env.assist_cap = cap
        new_eps: list = []
        try:
            buf = collect_rollouts(self.params, self.env, cfg.ppo, self.rng, new_eps)
        except (FloatingPointError, nk.NonFiniteError) as e:
            raise TrainingAbort(f"non-finite rollout at iteration {self.iteration}: {e}") from e
        self.episodes.extend(new_eps)
        adv, ret = compute_gae(buf.rewards, buf.values, buf.dones, buf.last_values, cfg.ppo.gamma, cfg.ppo.lam)
        stats = ppo_update(self.params, buf, adv, ret, cfg.ppo, self.adam, self.rng, dump_dir)
        # rolling means over the last finished episodes; nan until one finishes
        track = [e for e in self.episodes if not e["recovery"]]
        rec = [e["recovered"] for e in self.episodes if e["recovery"]]
        row = {
            "iteration": self.iteration,
            "assist_cap": cap,
            "track_step": float(buf.tracking.mean()),
            "track_episode": float(np.mean([e["tracking_return"] for e in track])) if track else math.nan,
            "episode_len": float(np.mean([e["length"] for e in track])) if track else math.nan,
            "episodes": len(new_eps),
            "recovery_success": float(np.mean(rec)) if rec else math.nan,
            **{f"r_{k}": v for k, v in buf.term_means.items()},
            **stats,
            "action_std": float(np.exp(self.params.tensors["actor.log_std"]).mean()),
        }
        self.iteration += 1
        return row

    # checkpointing ------------------------------------------------------------------------------

    _ENV_ARRAYS = ("clip", "frame", "steps", "is_rec", "assist", "max_len", "upright_time", "recovered",
                   "prev_action", "obs_hist", "clean_obs", "cmd_stream", "ep_track", "ep_return")

    def state_dict(self) -> tuple[dict, dict]:
        t = {f"param/{k}": v for k, v in self.params.tensors.items()}
        t.update({f"adam_m/{k}": v for k, v in self.adam.m.items()})
        t.update({f"adam_v/{k}": v for k, v in self.adam.v.items()})
        for k in self._ENV_ARRAYS:
            t[f"env/{k}"] = np.asarray(getattr(self.env, k), dtype=np.float64)
        for k, v in self.env.state.__dict__.items():
            t[f"sim/{k}"] = np.asarray(v, dtype=np.float64)
        meta = {
            "iteration": self.iteration,
            "adam_t": self.adam.t,
            "rng": self.rng.bit_generator.state,
            "env_rng": self.env.rng.bit_generator.state,
            "config": self.cfg.to_dict(),
            "net": self.cfg.net.to_dict(),
            "episodes": [{k: (v.item() if hasattr(v, "item") else v) for k, v in e.items()} for e in self.episodes],
        }
        return t, meta

    def save(self, path) -> None:
        t, meta = self.state_dict()
        checkpoint.save(path, t, meta)

    def load(self, path) -> None:
        t, meta = checkpoint.load(path)
        for k in self.params.tensors:
            self.params.tensors[k] = t[f"param/{k}"].copy()
            self.adam.m[k] = t[f"adam_m/{k}"].copy()
            self.adam.v[k] = t[f"adam_v/{k}"].copy()
        self.adam.t = meta["adam_t"]
        for k in self._ENV_ARRAYS:
            cur = getattr(self.env, k)
            setattr(self.env, k, t[f"env/{k}"].astype(np.asarray(cur).dtype).reshape(np.shape(cur)))
        for k, v in self.env.state.__dict__.items():
            setattr(self.env.state, k, t[f"sim/{k}"].astype(v.dtype).reshape(v.shape))
        self.rng.bit_generator.state = meta["rng"]
        self.env.rng.bit_generator.state = meta["env_rng"]
        self.iteration = meta["iteration"]
        self.episodes = deque(meta["episodes"], maxlen=100)


def format_row(row: dict) -> dict:
    return {k: (repr(float(row[k])) if isinstance(row[k], float) else row[k]) for k in METRIC_FIELDS}


def load_policy(path) -> tuple[PolicyParams, dict]:
    """Policy parameters and metadata from a training checkpoint."""
    t, meta = checkpoint.load(path)
    net = meta["net"]
    cfg = nets.NetConfig(**net)
    tensors = {k[len("param/"):]: v for k, v in t.items() if k.startswith("param/")}
    return PolicyParams(cfg, tensors), meta


def train(cfg: RunConfig, run_dir, resume: bool = False, iterations: int | None = None, log=None) -> Path:
    """Train to ``iterations`` (default ``cfg.ppo.iterations``), checkpointing as it goes.

    The run directory receives ``config.json``, ``metrics.csv`` and
    ``checkpoints/``. With ``resume`` the latest checkpoint is restored and
    the metrics log is truncated to its iteration before continuing.
    """
    run = Path(run_dir)
    ck = run / "checkpoints"
    run.mkdir(parents=True, exist_ok=True)
    total = cfg.ppo.iterations if iterations is None else iterations
    tr = Trainer(cfg)
    metrics = run / "metrics.csv"
    rows: list[str] = []
    if resume:
        latest = ck / "latest.ckpt"
        if not latest.exists():
            raise FileNotFoundError(f"nothing to resume in {run}")
        tr.load(latest)
        saved = json.loads((run / "config.json").read_text())
        if saved != cfg.to_dict():
            raise ValueError("resume config differs from the run's saved config")
        if metrics.exists():
            rows = metrics.read_text().splitlines()[1 : 1 + tr.iteration]
    else:
        (run / "config.json").write_text(cfg.dumps())

    def flush():
        buf = io.StringIO()
        buf.write(",".join(METRIC_FIELDS) + "\n")
        for r in rows:
            buf.write(r + "\n")
        metrics.write_text(buf.getvalue())

    while tr.iteration < total:
        row = tr.iterate(dump_dir=run)
        s = io.StringIO()
        csv.DictWriter(s, fieldnames=METRIC_FIELDS, lineterminator="").writerow(format_row(row))
        rows.append(s.getvalue())
        if log is not None:
            log(row)
        if tr.iteration % cfg.ppo.checkpoint_every == 0 or tr.iteration == total:
            flush()
            tr.save(ck / f"iter_{tr.iteration:06d}.ckpt")
            tr.save(ck / "latest.ckpt")
    flush()
    if not (ck / "latest.ckpt").exists():
        tr.save(ck / "latest.ckpt")
    return run
