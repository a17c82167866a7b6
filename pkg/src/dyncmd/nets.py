"""Policy networks: causal history encoder, dynamics-conditioned command
encoder, actor and critic heads, and the two architecture ablations.

All forward functions take a parameter mapping (name -> ndarray or Tensor),
so the same code serves inference on plain arrays and training under a
:class:`~dyncmd.numkernel.Graph`. Inputs may carry any number of leading
batch axes; the last two axes are (time, features).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from . import numkernel as nk
from .numkernel import Tensor

HIST_VARIANTS = ("causal_transformer", "cnn")
CMD_VARIANTS = ("cross_attention", "self_attention")


@dataclass
class NetConfig:
    obs_dim: int
    cmd_dim: int
    action_dim: int
    critic_dim: int
    K: int = 9
    L: int = 10
    n_embd: int = 64
    n_heads: int = 4
    hist_variant: str = "causal_transformer"
    cmd_variant: str = "cross_attention"
    mlp_ratio: int = 2
    actor_hidden: tuple[int, ...] = (128, 128)
    critic_hidden: tuple[int, ...] = (128, 128)
    init_log_std: float = math.log(0.5)

    def __post_init__(self):
        self.actor_hidden = tuple(self.actor_hidden)
        self.critic_hidden = tuple(self.critic_hidden)
        if self.n_embd % self.n_heads:
            raise ValueError(f"n_embd={self.n_embd} not divisible by n_heads={self.n_heads}")
        if self.n_embd % 2:
            raise ValueError("n_embd must be even for sinusoidal encoding")
        if self.K < 0 or self.L < 0:
            raise ValueError("K and L must be >= 0")
        for name in ("obs_dim", "cmd_dim", "action_dim", "critic_dim", "n_heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.hist_variant not in HIST_VARIANTS:
            raise ValueError(f"unknown hist_variant {self.hist_variant!r}")
        if self.cmd_variant not in CMD_VARIANTS:
            raise ValueError(f"unknown cmd_variant {self.cmd_variant!r}")

    @property
    def hist_len(self) -> int:
        return self.K + 1

    @property
    def cmd_len(self) -> int:
        return 2 * self.L + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["actor_hidden"] = list(self.actor_hidden)
        d["critic_hidden"] = list(self.critic_hidden)
        return d


@dataclass
class PolicyParams:
    """Every learnable tensor of the policy, keyed by a unique dotted name."""

    cfg: NetConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.cfg, {k: v.copy() for k, v in self.tensors.items()})

    def names(self, prefix: str = "") -> list[str]:
        return [k for k in self.tensors if k.startswith(prefix)]

    def num_params(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))


# initialization ----------------------------------------------------------------

def orthogonal(shape: tuple[int, int], gain: float, rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def _dense(t: dict, name: str, n_in: int, n_out: int, rng, gain: float = 1.0, zero: bool = False) -> None:
    t[f"{name}.w"] = np.zeros((n_in, n_out)) if zero else orthogonal((n_in, n_out), gain, rng)
    t[f"{name}.b"] = np.zeros(n_out)


def _norm(t: dict, name: str, d: int) -> None:
    t[f"{name}.g"] = np.ones(d)
    t[f"{name}.b"] = np.zeros(d)


def _attention(t: dict, name: str, d: int, rng) -> None:
    for proj in ("q", "k", "v", "o"):
        _dense(t, f"{name}.{proj}", d, d, rng)
    # a key bias shifts every logit of a query row equally: softmax ignores it
    del t[f"{name}.k.b"]


def init_params(cfg: NetConfig, rng: np.random.Generator, zero_output: bool = True) -> PolicyParams:
    """Orthogonal init for hidden layers; actor/critic output layers zeroed."""
    d, hid = cfg.n_embd, cfg.mlp_ratio * cfg.n_embd
    relu_gain = math.sqrt(2.0)
    t: dict[str, np.ndarray] = {}
    if cfg.hist_variant == "causal_transformer":
        _dense(t, "hist.tok.0", cfg.obs_dim, d, rng, relu_gain)
        _dense(t, "hist.tok.1", d, d, rng)
        _norm(t, "hist.ln1", d)
        _attention(t, "hist.attn", d, rng)
        _norm(t, "hist.ln2", d)
        _dense(t, "hist.mlp.0", d, hid, rng, relu_gain)
        _dense(t, "hist.mlp.1", hid, d, rng)
    else:
        _dense(t, "hist.conv.0", 3 * cfg.obs_dim, d, rng, relu_gain)
        _dense(t, "hist.conv.1", 3 * d, d, rng)
    _norm(t, "hist.lnf", d)

    _dense(t, "cmd.dyn.0", d, d, rng, relu_gain)
    _dense(t, "cmd.dyn.1", d, d, rng)
    _dense(t, "cmd.tok.0", cfg.cmd_dim, d, rng, relu_gain)
    _dense(t, "cmd.tok.1", d, d, rng)
    _norm(t, "cmd.ln1", d)
    _attention(t, "cmd.attn", d, rng)
    _norm(t, "cmd.ln2", d)
    _dense(t, "cmd.mlp.0", d, hid, rng, relu_gain)
    _dense(t, "cmd.mlp.1", hid, d, rng)
    _norm(t, "cmd.lnf", d)

    n_in = cfg.obs_dim + d
    for i, width in enumerate(cfg.actor_hidden):
        _dense(t, f"actor.{i}", n_in, width, rng, relu_gain)
        n_in = width
    _dense(t, "actor.out", n_in, cfg.action_dim, rng, 0.01, zero=zero_output)
    t["actor.log_std"] = np.full(cfg.action_dim, cfg.init_log_std)

    n_in = cfg.critic_dim
    for i, width in enumerate(cfg.critic_hidden):
        _dense(t, f"critic.{i}", n_in, width, rng, relu_gain)
        n_in = width
    _dense(t, "critic.out", n_in, 1, rng, 1.0, zero=zero_output)
    return PolicyParams(cfg, t)


def randomize(params: PolicyParams, rng: np.random.Generator, scale: float = 0.3) -> PolicyParams:
    """Copy with every tensor jittered, so no gradient is structurally zero."""
    out = params.copy()
    for name, v in out.tensors.items():
        out.tensors[name] = v + scale * rng.standard_normal(v.shape) / math.sqrt(max(v.shape[0], 1))
    return out


# building blocks -----------------------------------------------------------------

def sinusoidal_pe(length: int, dim: int) -> np.ndarray:
    if dim % 2:
        raise ValueError(f"positional encoding needs an even dim, got {dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = np.power(10000.0, np.arange(0, dim, 2, dtype=np.float64) / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(pos / freq)
    pe[:, 1::2] = np.cos(pos / freq)
    return pe


def causal_mask(length: int) -> np.ndarray:
    """Boolean allow-mask: row tau may attend to columns <= tau."""
    if length < 1:
        raise ValueError("mask length must be >= 1")
    return np.tril(np.ones((length, length), dtype=bool))


def _lin(p: Mapping, name: str, x) -> Tensor:
    return nk.linear(x, p[f"{name}.w"], p.get(f"{name}.b"))


def _mlp2(p: Mapping, name: str, x) -> Tensor:
    return _lin(p, f"{name}.1", nk.elu(_lin(p, f"{name}.0", x)))


def _ln(p: Mapping, name: str, x) -> Tensor:
    return nk.layer_norm(x, p[f"{name}.g"], p[f"{name}.b"])


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, n, d = x.shape
    x = nk.reshape(x, (*lead, n, n_heads, d // n_heads))
    nd = len(lead)
    return nk.transpose(x, (*range(nd), nd + 1, nd, nd + 2))


def mha(p: Mapping, name: str, query, keys_values, n_heads: int, mask: np.ndarray | None = None,
        trace: dict | None = None) -> Tensor:
    """Multi-head scaled dot-product attention, heads concatenated then projected.

    ``query`` is (..., q, d), ``keys_values`` is (..., k, d); ``mask`` is a
    boolean (q, k) allow-mask. Attention weights (..., heads, q, k) are
    written to ``trace[name]`` when a trace dict is given.
    """
    query, keys_values = nk.as_tensor(query), nk.as_tensor(keys_values)
    d = query.shape[-1]
    if d % n_heads:
        raise ValueError(f"width {d} not divisible by {n_heads} heads")
    if mask is not None and not np.asarray(mask).any(axis=-1).all():
        raise ValueError("attention mask leaves a query with no keys")
    q = _split_heads(_lin(p, f"{name}.q", query), n_heads)
    k = _split_heads(_lin(p, f"{name}.k", keys_values), n_heads)
    v = _split_heads(_lin(p, f"{name}.v", keys_values), n_heads)
    scores = nk.mul(nk.matmul(q, nk.swapaxes(k, -1, -2)), 1.0 / math.sqrt(d // n_heads))
    weights = nk.softmax(scores, mask=mask)
    if trace is not None:
        trace[name] = weights.data
    out = nk.matmul(weights, v)
    nd = out.ndim - 3
    out = nk.transpose(out, (*range(nd), nd + 1, nd, nd + 2))
    out = nk.reshape(out, (*out.shape[:-2], d))
    return _lin(p, f"{name}.o", out)


def _block_mlp(p: Mapping, name: str, x) -> Tensor:
    return _lin(p, f"{name}.1", nk.elu(_lin(p, f"{name}.0", x)))


# encoders ---------------------------------------------------------------------

def history_encode(p: Mapping, cfg: NetConfig, obs_window, trace: dict | None = None) -> Tensor:
    """(..., K+1, obs_dim) -> (..., n_embd) dynamics embedding via causal attention + max pool."""
    x = nk.as_tensor(obs_window)
    e = _mlp2(p, "hist.tok", x)
    h0 = nk.add(e, sinusoidal_pe(x.shape[-2], cfg.n_embd))
    a = _ln(p, "hist.ln1", h0)
    h1 = nk.add(h0, mha(p, "hist.attn", a, a, cfg.n_heads, causal_mask(x.shape[-2]), trace))
    h2 = nk.add(h1, _block_mlp(p, "hist.mlp", _ln(p, "hist.ln2", h1)))
    hbar = _ln(p, "hist.lnf", h2)
    if trace is not None:
        trace["hist.tokens"] = hbar.data
    return nk.amax(hbar, axis=-2)


def _causal_conv(p: Mapping, name: str, x: Tensor) -> Tensor:
    *lead, t, c = x.shape
    padded = nk.concat([np.zeros((*lead, 2, c)), x], axis=-2)
    taps = [nk.getitem(padded, (..., slice(i, i + t), slice(None))) for i in range(3)]
    return _lin(p, name, nk.concat(taps, axis=-1))


def history_encode_cnn(p: Mapping, cfg: NetConfig, obs_window, trace: dict | None = None) -> Tensor:
    """Ablation: two causal kernel-3 temporal convolutions + max pool."""
    x = nk.as_tensor(obs_window)
    y = nk.elu(_causal_conv(p, "hist.conv.0", x))
    y = _causal_conv(p, "hist.conv.1", y)
    hbar = _ln(p, "hist.lnf", y)
    if trace is not None:
        trace["hist.tokens"] = hbar.data
    return nk.amax(hbar, axis=-2)


def _cmd_tokens(p: Mapping, cfg: NetConfig, cmd_window: Tensor, pe: np.ndarray | None) -> Tensor:
    if pe is None:
        pe = sinusoidal_pe(cmd_window.shape[-2], cfg.n_embd)
    return nk.add(_mlp2(p, "cmd.tok", cmd_window), pe)


def command_encode(p: Mapping, cfg: NetConfig, h_t, cmd_window, trace: dict | None = None,
                   pe: np.ndarray | None = None) -> Tensor:
    """Aggregate the (..., 2L+1, cmd_dim) window with a query derived from ``h_t``."""
    h_t, cmd_window = nk.as_tensor(h_t), nk.as_tensor(cmd_window)
    q = _mlp2(p, "cmd.dyn", h_t)
    q = nk.reshape(q, (*q.shape[:-1], 1, q.shape[-1]))
    z = _cmd_tokens(p, cfg, cmd_window, pe)
    s1 = nk.add(q, mha(p, "cmd.attn", _ln(p, "cmd.ln1", q), z, cfg.n_heads, None, trace))
    s2 = nk.add(s1, _block_mlp(p, "cmd.mlp", _ln(p, "cmd.ln2", s1)))
    u = _ln(p, "cmd.lnf", s2)
    return nk.reshape(u, (*u.shape[:-2], u.shape[-1]))


def command_encode_selfattn(p: Mapping, cfg: NetConfig, h_t, cmd_window, trace: dict | None = None,
                            pe: np.ndarray | None = None) -> Tensor:
    """Ablation: self-attention over command tokens plus one ``h_t`` token, mean-pooled."""
    h_t, cmd_window = nk.as_tensor(h_t), nk.as_tensor(cmd_window)
    hq = _mlp2(p, "cmd.dyn", h_t)
    hq = nk.reshape(hq, (*hq.shape[:-1], 1, hq.shape[-1]))
    x0 = nk.concat([_cmd_tokens(p, cfg, cmd_window, pe), hq], axis=-2)
    a = _ln(p, "cmd.ln1", x0)
    x1 = nk.add(x0, mha(p, "cmd.attn", a, a, cfg.n_heads, None, trace))
    x2 = nk.add(x1, _block_mlp(p, "cmd.mlp", _ln(p, "cmd.ln2", x1)))
    return nk.mean(_ln(p, "cmd.lnf", x2), axis=-2)


# heads ---------------------------------------------------------------------------

def actor_forward(p: Mapping, cfg: NetConfig, o_t, u_t) -> tuple[Tensor, Tensor]:
    x = nk.concat([nk.as_tensor(o_t), nk.as_tensor(u_t)], axis=-1)
    for i in range(len(cfg.actor_hidden)):
        x = nk.elu(_lin(p, f"actor.{i}", x))
    return _lin(p, "actor.out", x), nk.as_tensor(p["actor.log_std"])


def critic_forward(p: Mapping, cfg: NetConfig, s_t) -> Tensor:
    x = nk.as_tensor(s_t)
    for i in range(len(cfg.critic_hidden)):
        x = nk.elu(_lin(p, f"critic.{i}", x))
    v = _lin(p, "critic.out", x)
    return nk.reshape(v, v.shape[:-1])


def encode(p: Mapping, cfg: NetConfig, obs_window, cmd_window, trace: dict | None = None) -> Tensor:
    """History then command encoder, dispatching on the configured variants."""
    hist = history_encode if cfg.hist_variant == "causal_transformer" else history_encode_cnn
    cmd = command_encode if cfg.cmd_variant == "cross_attention" else command_encode_selfattn
    h_t = hist(p, cfg, obs_window, trace)
    return cmd(p, cfg, h_t, cmd_window, trace)


def policy_forward(p: Mapping, cfg: NetConfig, obs_window, cmd_window, trace: dict | None = None):
    """Action mean and log-std; the current observation is the last history row."""
    obs_window = nk.as_tensor(obs_window)
    u_t = encode(p, cfg, obs_window, cmd_window, trace)
    o_t = nk.getitem(obs_window, (..., -1, slice(None)))
    return actor_forward(p, cfg, o_t, u_t)
