import dataclasses
import math

import numpy as np
import pytest

from dyncmd import nets
from dyncmd import numkernel as nk
from dyncmd.gradsuite import DENOM_FLOOR, component_checks

DESK = nets.NetConfig(obs_dim=15, cmd_dim=9, action_dim=4, critic_dim=39)
TINY = nets.NetConfig(obs_dim=5, cmd_dim=4, action_dim=2, critic_dim=7, K=3, L=2, n_embd=8, n_heads=2,
                      actor_hidden=(6,), critic_hidden=(6,))


def random_params(cfg, seed=0):
    rng = np.random.default_rng(seed)
    return nets.randomize(nets.init_params(cfg, rng), rng).tensors


def test_pe_values():
    pe = nets.sinusoidal_pe(4, 8)
    assert (pe[0, 0::2] == 0).all()
    assert (pe[0, 1::2] == 1).all()
    assert pe[1, 0] == pytest.approx(0.84147, abs=1e-5)
    assert pe[1, 0] == math.sin(1.0)
    assert pe[2, 3] == pytest.approx(math.cos(2 / 10000 ** (2 / 8)), abs=1e-15)


def test_pe_odd_dim():
    with pytest.raises(ValueError):
        nets.sinusoidal_pe(3, 5)


@pytest.mark.parametrize("n", [1, 2, 3, 7, 11])
def test_causal_mask(n):
    m = nets.causal_mask(n)
    assert m.sum() == n * (n + 1) // 2
    for i in range(n):
        assert m[i, : i + 1].all() and not m[i, i + 1 :].any()


def naive_mha(p, name, query, kv, n_heads, mask=None):
    d = query.shape[-1]
    dh = d // n_heads
    Q = query @ p[f"{name}.q.w"] + p[f"{name}.q.b"]
    K = kv @ p[f"{name}.k.w"]
    V = kv @ p[f"{name}.v.w"] + p[f"{name}.v.b"]
    heads = []
    for h in range(n_heads):
        cols = slice(h * dh, (h + 1) * dh)
        out = np.zeros((len(query), dh))
        for i in range(len(query)):
            logits = [float(Q[i, cols] @ K[j, cols]) / math.sqrt(dh) for j in range(len(kv))]
            allowed = [j for j in range(len(kv)) if mask is None or mask[i, j]]
            top = max(logits[j] for j in allowed)
            w = {j: math.exp(logits[j] - top) for j in allowed}
            z = sum(w.values())
            for j in allowed:
                out[i] += w[j] / z * V[j, cols]
        heads.append(out)
    return np.concatenate(heads, axis=1) @ p[f"{name}.o.w"] + p[f"{name}.o.b"]


def test_mha_matches_naive_oracle():
    rng = np.random.default_rng(0)
    p = {}
    for proj in "qkvo":
        p[f"a.{proj}.w"] = rng.normal(size=(8, 8))
        p[f"a.{proj}.b"] = rng.normal(size=8)
    del p["a.k.b"]
    q, kv = rng.normal(size=(1, 8)), rng.normal(size=(5, 8))
    out = nets.mha(p, "a", q, kv, n_heads=2).numpy()
    np.testing.assert_allclose(out, naive_mha(p, "a", q, kv, 2), rtol=0, atol=1e-10)
    q = rng.normal(size=(5, 8))
    mask = nets.causal_mask(5)
    np.testing.assert_allclose(nets.mha(p, "a", q, kv, 2, mask).numpy(), naive_mha(p, "a", q, kv, 2, mask),
                               rtol=0, atol=1e-10)


def test_mha_single_key_and_identical_keys():
    rng = np.random.default_rng(1)
    p = {}
    for proj in "qkvo":
        p[f"a.{proj}.w"] = rng.normal(size=(8, 8))
        p[f"a.{proj}.b"] = rng.normal(size=8)
    del p["a.k.b"]
    trace = {}
    kv = rng.normal(size=(1, 8))
    out = nets.mha(p, "a", rng.normal(size=(3, 8)), kv, 4, trace=trace).numpy()
    assert (trace["a"] == 1.0).all()
    v = kv @ p["a.v.w"] + p["a.v.b"]
    np.testing.assert_allclose(out, np.repeat(v @ p["a.o.w"] + p["a.o.b"], 3, axis=0), atol=1e-12)
    nets.mha(p, "a", rng.normal(size=(2, 8)), np.repeat(kv, 6, axis=0), 4, trace=trace)
    np.testing.assert_allclose(trace["a"], 1 / 6, atol=1e-15)


def test_mha_rejects_bad_heads_and_empty_rows():
    p = {f"a.{x}.w": np.eye(6) for x in "qkvo"}
    with pytest.raises(ValueError):
        nets.mha(p, "a", np.ones((1, 6)), np.ones((2, 6)), 4)
    with pytest.raises(ValueError):
        nets.mha(p, "a", np.ones((2, 6)), np.ones((2, 6)), 2, mask=np.array([[True, False], [False, False]]))


def test_netconfig_validation():
    with pytest.raises(ValueError):
        dataclasses.replace(DESK, n_heads=5)
    with pytest.raises(ValueError):
        dataclasses.replace(DESK, K=-1)
    with pytest.raises(ValueError):
        dataclasses.replace(DESK, hist_variant="lstm")
    assert DESK.hist_len == 10 and DESK.cmd_len == 21


def test_param_names_unique_and_no_key_bias():
    p = nets.init_params(DESK, np.random.default_rng(0))
    assert len(set(p.tensors)) == len(p.tensors)
    assert not any(k.endswith(".k.b") for k in p.tensors)
    assert np.allclose(p.tensors["actor.log_std"], math.log(0.5))


@pytest.mark.parametrize("variant", ["causal_transformer", "cnn"])
def test_history_output_shape(variant):
    cfg = dataclasses.replace(DESK, hist_variant=variant)
    p = random_params(cfg)
    x = np.random.default_rng(0).normal(size=(cfg.hist_len, cfg.obs_dim))
    enc = nets.history_encode if variant == "causal_transformer" else nets.history_encode_cnn
    assert enc(p, cfg, x).shape == (cfg.n_embd,)
    assert enc(p, cfg, x[None].repeat(3, 0)).shape == (3, cfg.n_embd)


@pytest.mark.parametrize("variant", ["causal_transformer", "cnn"])
def test_causality_bit_exact(variant):
    cfg = dataclasses.replace(DESK, hist_variant=variant)
    enc = nets.history_encode if variant == "causal_transformer" else nets.history_encode_cnn
    p = random_params(cfg, 3)
    rng = np.random.default_rng(42)
    for _ in range(100):
        x = rng.normal(size=(cfg.hist_len, cfg.obs_dim))
        tau = int(rng.integers(0, cfg.hist_len))
        y = x.copy()
        y[tau:] += rng.normal(size=y[tau:].shape) * rng.uniform(0.1, 10)
        ta, tb = {}, {}
        enc(p, cfg, x, ta)
        enc(p, cfg, y, tb)
        assert ta["hist.tokens"][:tau].tobytes() == tb["hist.tokens"][:tau].tobytes()
        if tau < cfg.hist_len:
            assert not np.array_equal(ta["hist.tokens"][tau:], tb["hist.tokens"][tau:])


def test_max_pool_matches_loop():
    p = random_params(DESK, 1)
    x = np.random.default_rng(5).normal(size=(DESK.hist_len, DESK.obs_dim))
    tr = {}
    h = nets.history_encode(p, DESK, x, tr).numpy()
    tok = tr["hist.tokens"]
    for j in range(DESK.n_embd):
        m = tok[0, j]
        for t in range(1, DESK.hist_len):
            if tok[t, j] > m:
                m = tok[t, j]
        assert h[j] == m


def test_attention_rows_normalized():
    rng = np.random.default_rng(6)
    for variant in ("cross_attention", "self_attention"):
        cfg = dataclasses.replace(DESK, cmd_variant=variant)
        p = random_params(cfg, 2)
        tr = {}
        nets.policy_forward(p, cfg, rng.normal(size=(4, cfg.hist_len, cfg.obs_dim)),
                            rng.normal(size=(4, cfg.cmd_len, cfg.cmd_dim)), tr)
        for name in ("hist.attn", "cmd.attn"):
            w = tr[name]
            assert (w >= 0).all()
            assert np.abs(w.sum(-1) - 1).max() < 1e-9
    assert tr["hist.attn"][..., 0, 1:].max() == 0.0


def test_cross_attention_identical_tokens():
    cfg = DESK
    p = random_params(cfg, 4)
    rng = np.random.default_rng(0)
    row = rng.normal(size=cfg.cmd_dim)
    window = np.repeat(row[None], cfg.cmd_len, 0)
    # PE makes tokens differ by position, so zero it to isolate identical values
    zero_pe = np.zeros((cfg.cmd_len, cfg.n_embd))
    for _ in range(5):
        h = rng.normal(size=cfg.n_embd)
        full = nets.command_encode(p, cfg, h, window, pe=zero_pe).numpy()
        single = nets.command_encode(p, cfg, h, row[None], pe=zero_pe[:1]).numpy()
        np.testing.assert_allclose(full, single, atol=1e-12)


def test_output_shapes_and_heads():
    p0 = nets.init_params(DESK, np.random.default_rng(0)).tensors
    rng = np.random.default_rng(1)
    u = nets.command_encode(p0, DESK, rng.normal(size=64), rng.normal(size=(21, 9)))
    assert u.shape == (64,)
    assert nets.command_encode_selfattn(p0, DESK, rng.normal(size=64), rng.normal(size=(21, 9))).shape == (64,)
    o = rng.normal(size=15)
    mean, log_std = nets.actor_forward(p0, DESK, o, u)
    assert mean.shape == (4,) and (mean.numpy() == 0).all()
    assert np.allclose(log_std.numpy(), math.log(0.5))
    v = nets.critic_forward(p0, DESK, rng.normal(size=39))
    assert v.shape == () and v.numpy() == 0.0
    m2, _ = nets.actor_forward(p0, DESK, o, u)
    assert m2.numpy().tobytes() == mean.numpy().tobytes()


def test_selfattn_permutation_with_pe():
    cfg = dataclasses.replace(DESK, cmd_variant="self_attention")
    p = random_params(cfg, 7)
    rng = np.random.default_rng(8)
    h, cmd = rng.normal(size=64), rng.normal(size=(cfg.cmd_len, cfg.cmd_dim))
    pe = nets.sinusoidal_pe(cfg.cmd_len, cfg.n_embd)
    base = nets.command_encode_selfattn(p, cfg, h, cmd, pe=pe).numpy()
    for _ in range(5):
        perm = rng.permutation(cfg.cmd_len)
        out = nets.command_encode_selfattn(p, cfg, h, cmd[perm], pe=pe[perm]).numpy()
        np.testing.assert_allclose(out, base, atol=1e-12)


def test_dynamics_conditioning_live():
    p = random_params(DESK, 9)
    rng = np.random.default_rng(10)
    cmd = rng.normal(size=(DESK.cmd_len, DESK.cmd_dim))
    for _ in range(10):
        ta, tb = {}, {}
        nets.command_encode(p, DESK, rng.normal(size=64), cmd, ta)
        nets.command_encode(p, DESK, rng.normal(size=64), cmd, tb)
        assert np.abs(ta["cmd.attn"] - tb["cmd.attn"]).max() > 0


def test_selfattn_has_no_dedicated_query():
    # h joins as one token among 2L+2; there is no single h-derived query row
    cfg = dataclasses.replace(DESK, cmd_variant="self_attention")
    p = random_params(cfg, 9)
    rng = np.random.default_rng(11)
    cmd = rng.normal(size=(cfg.cmd_len, cfg.cmd_dim))
    ta, tb = {}, {}
    nets.command_encode_selfattn(p, cfg, rng.normal(size=64), cmd, ta)
    nets.command_encode_selfattn(p, cfg, rng.normal(size=64), cmd, tb)
    assert ta["cmd.attn"].shape == (cfg.n_heads, cfg.cmd_len + 1, cfg.cmd_len + 1)


def test_component_gradients_desk():
    reports = component_checks(DESK, seed=0)
    assert set(reports) == {"history_transformer", "history_cnn", "command_cross_attention",
                            "command_self_attention", "actor", "critic"}
    for name, rep in reports.items():
        assert rep.passed, f"{name}: {rep.summary()}"


def test_end_to_end_every_parameter():
    rng = np.random.default_rng(0)
    for hv in nets.HIST_VARIANTS:
        for cv in nets.CMD_VARIANTS:
            cfg = dataclasses.replace(TINY, hist_variant=hv, cmd_variant=cv)
            p = random_params(cfg, 1)
            obs = rng.normal(size=(2, cfg.hist_len, cfg.obs_dim))
            cmd = rng.normal(size=(2, cfg.cmd_len, cfg.cmd_dim))
            proj = rng.normal(size=(2, cfg.action_dim))
            sub = {k: v for k, v in p.items() if not k.startswith("critic.")}

            def f(P, cfg=cfg, obs=obs, cmd=cmd, proj=proj):
                mean, log_std = nets.policy_forward(P, cfg, obs, cmd)
                return nk.add(nk.sum(nk.mul(mean, proj)), nk.sum(log_std))

            rep = nk.grad_check(f, sub, h=1e-5, tol=1e-4, denom_floor=DENOM_FLOOR)
            assert rep.passed, f"{hv}/{cv}: {rep.summary()}"
            assert rep.n_checked == sum(v.size for v in sub.values())
