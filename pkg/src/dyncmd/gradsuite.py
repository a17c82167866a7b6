"""Finite-difference checks over every network component."""

from __future__ import annotations

import dataclasses

import numpy as np

from . import nets
from . import numkernel as nk
from .nets import NetConfig

# components whose true gradients can be ~1e-8 (max-pool, deep products)
# need a larger floor than the library default for the relative error
DENOM_FLOOR = 1e-6


def _loss(out, proj):
    return nk.sum(nk.mul(out, proj))


def component_checks(cfg: NetConfig, seed: int = 0, batch: int = 2, samples_per_param: int | None = 6,
                     tol: float = 1e-4, h: float = 1e-5) -> dict[str, nk.GradCheckReport]:
    """Gradient check of both history encoders, both command encoders, actor and critic."""
    rng = np.random.default_rng(seed)
    out = {}
    variants = {
        "history_transformer": dataclasses.replace(cfg, hist_variant="causal_transformer"),
        "history_cnn": dataclasses.replace(cfg, hist_variant="cnn"),
        "command_cross_attention": dataclasses.replace(cfg, cmd_variant="cross_attention"),
        "command_self_attention": dataclasses.replace(cfg, cmd_variant="self_attention"),
    }
    obs = rng.normal(size=(batch, cfg.hist_len, cfg.obs_dim))
    cmd = rng.normal(size=(batch, cfg.cmd_len, cfg.cmd_dim))
    h_t = rng.normal(size=(batch, cfg.n_embd))
    proj = rng.normal(size=(batch, cfg.n_embd))
    for name, vcfg in variants.items():
        params = nets.randomize(nets.init_params(vcfg, rng), rng)
        if name.startswith("history"):
            sub = {k: v for k, v in params.tensors.items() if k.startswith("hist.")}
            enc = nets.history_encode if vcfg.hist_variant == "causal_transformer" else nets.history_encode_cnn

            def f(P, enc=enc, vcfg=vcfg):
                return _loss(enc(P, vcfg, obs), proj)
        else:
            sub = {k: v for k, v in params.tensors.items() if k.startswith("cmd.")}
            enc = nets.command_encode if vcfg.cmd_variant == "cross_attention" else nets.command_encode_selfattn

            def f(P, enc=enc, vcfg=vcfg):
                return _loss(enc(P, vcfg, h_t, cmd), proj)
        out[name] = nk.grad_check(f, sub, h=h, tol=tol, samples_per_param=samples_per_param, rng=rng,
                                  denom_floor=DENOM_FLOOR)

    params = nets.randomize(nets.init_params(cfg, rng), rng)
    o_t = rng.normal(size=(batch, cfg.obs_dim))
    u_t = rng.normal(size=(batch, cfg.n_embd))
    s_t = rng.normal(size=(batch, cfg.critic_dim))
    pa = rng.normal(size=(batch, cfg.action_dim))
    ps = rng.normal(size=(cfg.action_dim,))
    pv = rng.normal(size=(batch,))

    def actor_loss(P):
        mean, log_std = nets.actor_forward(P, cfg, o_t, u_t)
        return nk.add(_loss(mean, pa), _loss(log_std, ps))

    def critic_loss(P):
        return _loss(nets.critic_forward(P, cfg, s_t), pv)

    for name, f, prefix in (("actor", actor_loss, "actor."), ("critic", critic_loss, "critic.")):
        sub = {k: v for k, v in params.tensors.items() if k.startswith(prefix)}
        out[name] = nk.grad_check(f, sub, h=h, tol=tol, samples_per_param=samples_per_param, rng=rng,
                                  denom_floor=DENOM_FLOOR)
    return out


def wide_shapes(cfg: NetConfig) -> NetConfig:
    return dataclasses.replace(cfg, n_embd=128, K=9, L=10)
