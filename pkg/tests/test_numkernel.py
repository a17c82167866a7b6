import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyncmd import numkernel as nk
from dyncmd.numkernel import checkpoint


def fd_check(f, params, tol=1e-6, h=1e-5):
    rep = nk.grad_check(f, params, h=h, tol=tol)
    assert rep.passed, rep.summary()
    return rep


# forward examples ---------------------------------------------------------------

def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(nk.matmul(np.eye(2), a).numpy(), a)


def test_matmul_row_by_column():
    out = nk.matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]]))
    assert out.numpy().tolist() == [[11.0]]


def test_matmul_shape_mismatch():
    with pytest.raises(nk.ShapeError):
        nk.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_softmax_uniform():
    np.testing.assert_allclose(nk.softmax(np.zeros(3)).numpy(), [1 / 3] * 3, rtol=0, atol=1e-15)


def test_softmax_large_logits_no_overflow():
    out = nk.softmax(np.array([1000.0, 0.0])).numpy()
    assert np.isfinite(out).all()
    assert out[0] == pytest.approx(1.0, abs=1e-15)
    assert out[1] < 1e-300


def test_softmax_reference_values():
    e = [np.exp(1.0), np.exp(2.0), np.exp(3.0)]
    expect = [v / sum(e) for v in e]
    out = nk.softmax(np.array([1.0, 2.0, 3.0])).numpy()
    np.testing.assert_allclose(out, [0.09003, 0.24473, 0.66524], atol=1e-5)
    np.testing.assert_allclose(out, expect, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_rows_normalized(xs):
    out = nk.softmax(np.array(xs)).numpy()
    assert (out >= 0).all()
    assert abs(out.sum() - 1.0) < 1e-12


def test_softmax_mask_zero_weight():
    mask = np.array([True, False, True])
    out = nk.softmax(np.array([1.0, 5.0, 1.0]), mask=mask).numpy()
    assert out[1] == 0.0
    np.testing.assert_allclose(out[[0, 2]], [0.5, 0.5])


def test_softmax_fully_masked_row_raises():
    with pytest.raises(ValueError):
        nk.softmax(np.zeros((2, 2)), mask=np.array([[True, False], [False, False]]))


def test_layer_norm_constant_row():
    out = nk.layer_norm(np.full(5, 3.0), np.ones(5), np.zeros(5)).numpy()
    np.testing.assert_array_equal(out, np.zeros(5))


def test_layer_norm_already_normalized():
    out = nk.layer_norm(np.array([1.0, -1.0]), np.ones(2), np.zeros(2), eps=1e-14).numpy()
    np.testing.assert_allclose(out, [1.0, -1.0], atol=1e-12)


def test_layer_norm_statistics():
    # eps sits inside the sqrt, so the output variance is v / (v + eps) exactly
    rng = np.random.default_rng(3)
    for _ in range(200):
        x = rng.normal(size=4) * rng.uniform(0.1, 10.0)
        y = nk.layer_norm(x, np.ones(4), np.zeros(4), eps=1e-5).numpy()
        v = x.var()
        assert abs(y.mean()) < 1e-12
        assert abs(y.var() - v / (v + 1e-5)) < 1e-12


def test_layer_norm_unit_variance_at_activation_scale():
    rng = np.random.default_rng(3)
    for _ in range(200):
        x = rng.uniform(-1, 1, size=4)
        x = 10.0 * (x - x.mean()) / x.std() + rng.normal()
        y = nk.layer_norm(x, np.ones(4), np.zeros(4), eps=1e-5).numpy()
        assert abs(y.mean()) < 1e-12
        assert abs(y.var() - 1.0) < 1e-6


def test_layer_norm_empty_axis():
    with pytest.raises(nk.ShapeError):
        nk.layer_norm(np.zeros((2, 0)), np.ones(0), np.zeros(0))


def test_nonfinite_is_error():
    with pytest.raises(nk.NonFiniteError):
        nk.log(np.array([-1.0, 1.0]))
    with pytest.raises(nk.NonFiniteError):
        nk.exp(np.array([1e4]))


# gradients ----------------------------------------------------------------------

def test_quadratic_grad_check():
    rep = nk.grad_check(lambda p: nk.sum(nk.square(p["x"])), {"x": np.array([1.0, 2.0])}, tol=1e-8)
    assert rep.passed
    _, g = nk.analytic_grads(lambda p: nk.sum(nk.square(p["x"])), {"x": np.array([1.0, 2.0])})
    np.testing.assert_allclose(g["x"], [2.0, 4.0])


def test_matmul_gradients():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(3, 2))
    fd_check(lambda p: nk.sum(nk.tanh(nk.matmul(p["a"], p["b"])) * w),
             {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4, 2))})


def test_batched_matmul_gradients():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(2, 3, 5))
    fd_check(lambda p: nk.sum(nk.matmul(p["a"], p["b"]) * w),
             {"a": rng.normal(size=(2, 3, 4)), "b": rng.normal(size=(4, 5))})


UNARY = {
    "exp": (nk.exp, lambda r: r.normal(size=(3, 4))),
    "log": (nk.log, lambda r: r.uniform(0.5, 2.0, size=(3, 4))),
    "tanh": (nk.tanh, lambda r: r.normal(size=(3, 4))),
    "elu": (nk.elu, lambda r: r.normal(size=(3, 4)) + np.sign(r.normal(size=(3, 4))) * 0.1),
    "square": (nk.square, lambda r: r.normal(size=(3, 4))),
    "sqrt": (nk.sqrt, lambda r: r.uniform(0.5, 2.0, size=(3, 4))),
    "neg": (nk.neg, lambda r: r.normal(size=(3, 4))),
    "clip": (lambda x: nk.clip(x, -0.5, 0.5), lambda r: np.array([[-1.0, -0.2, 0.3, 0.9]] * 3)),
    "softmax": (nk.softmax, lambda r: r.normal(size=(3, 4))),
    "sum_axis": (lambda x: nk.sum(x, axis=1, keepdims=True), lambda r: r.normal(size=(3, 4))),
    "mean_axis": (lambda x: nk.mean(x, axis=0), lambda r: r.normal(size=(3, 4))),
    "amax": (lambda x: nk.amax(x, axis=0), lambda r: r.normal(size=(3, 4))),
    "reshape": (lambda x: nk.reshape(x, (4, 3)), lambda r: r.normal(size=(3, 4))),
    "transpose": (lambda x: nk.transpose(x, (1, 0)), lambda r: r.normal(size=(3, 4))),
    "swapaxes": (lambda x: nk.swapaxes(x, 0, 1), lambda r: r.normal(size=(3, 4))),
    "getitem": (lambda x: nk.getitem(x, (slice(None), [0, 2, 2])), lambda r: r.normal(size=(3, 4))),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitive_gradients(name):
    op, make = UNARY[name]
    rng = np.random.default_rng(7)
    x = make(rng)
    out_shape = op(x).shape
    w = rng.normal(size=out_shape)
    fd_check(lambda p: nk.sum(op(p["x"]) * w), {"x": x})


BINARY = {
    "add": nk.add,
    "sub": nk.sub,
    "mul": nk.mul,
    "div": nk.div,
    "minimum": nk.minimum,
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_primitive_gradients_with_broadcast(name):
    op = BINARY[name]
    rng = np.random.default_rng(11)
    a = rng.normal(size=(3, 4))
    b = rng.uniform(0.5, 1.5, size=(4,)) * np.array([1, -1, 1, -1])
    w = rng.normal(size=(3, 4))
    fd_check(lambda p: nk.sum(op(p["a"], p["b"]) * w), {"a": a, "b": b})


def test_concat_and_linear_gradients():
    rng = np.random.default_rng(5)
    w = rng.normal(size=(2, 3))
    fd_check(
        lambda p: nk.sum(nk.linear(nk.concat([p["x"], p["y"]], axis=-1), p["W"], p["b"]) * w),
        {"x": rng.normal(size=(2, 2)), "y": rng.normal(size=(2, 3)), "W": rng.normal(size=(5, 3)),
         "b": rng.normal(size=3)},
    )


def test_layer_norm_gradients():
    rng = np.random.default_rng(9)
    w = rng.normal(size=(3, 5))
    fd_check(lambda p: nk.sum(nk.layer_norm(p["x"], p["g"], p["b"]) * w),
             {"x": rng.normal(size=(3, 5)), "g": rng.normal(size=5), "b": rng.normal(size=5)})


def test_masked_softmax_gradients():
    rng = np.random.default_rng(4)
    mask = np.tril(np.ones((4, 4), dtype=bool))
    w = rng.normal(size=(4, 4))
    fd_check(lambda p: nk.sum(nk.softmax(p["x"], mask=mask) * w), {"x": rng.normal(size=(4, 4))})


def test_reused_node_accumulates():
    x = np.array([0.3, -0.7])
    fd_check(lambda p: nk.sum(p["x"] * p["x"] * p["x"] + p["x"]), {"x": x})


def test_corrupted_adjoint_is_caught(monkeypatch):
    from dyncmd.numkernel import tensor

    orig = tensor.tanh

    def bad_tanh(a):
        a = tensor.as_tensor(a)
        y = np.tanh(a.data)

        def backward(g):
            tensor._accum(a, g * (1.0 - y * y) * 1.01)

        return tensor._result(y, (a,), backward, "tanh")

    monkeypatch.setattr(nk, "tanh", bad_tanh)
    rep = nk.grad_check(lambda p: nk.sum(nk.tanh(p["w"])), {"u": np.ones(2), "w": np.array([0.1, 0.4, -0.2])})
    assert not rep.passed
    assert rep.worst_param == "w"
    assert rep.worst_index is not None
    monkeypatch.setattr(nk, "tanh", orig)


def test_grad_check_nonfinite_loss():
    with pytest.raises(nk.NonFiniteError):
        nk.grad_check(lambda p: nk.sum(nk.log(p["x"])), {"x": np.array([-1.0])})


def test_backward_is_deterministic():
    rng = np.random.default_rng(2)
    params = {"a": rng.normal(size=(4, 6)), "b": rng.normal(size=(6, 3))}

    def f(p):
        h = nk.tanh(nk.matmul(p["a"], p["b"]))
        return nk.sum(nk.softmax(h) * nk.layer_norm(h, np.ones(3), np.zeros(3)))

    _, g1 = nk.analytic_grads(f, params)
    _, g2 = nk.analytic_grads(f, params)
    for k in g1:
        assert g1[k].tobytes() == g2[k].tobytes()


def test_unreachable_param_gets_zero_grad():
    _, g = nk.analytic_grads(lambda p: nk.sum(p["x"]), {"x": np.ones(2), "y": np.ones((2, 3))})
    assert g["y"].shape == (2, 3)
    assert not g["y"].any()


def test_no_graph_means_no_recording():
    t = nk.Tensor(np.ones(2), requires_grad=True)
    out = nk.exp(t)
    assert out._parents == ()


# checkpoint ---------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"a.w": rng.normal(size=(3, 2)), "b": np.array(1.5), "c": rng.normal(size=(2, 1, 4))}
    path = tmp_path / "x.ckpt"
    checkpoint.save(path, tensors, {"step": 3})
    back, meta = checkpoint.load(path)
    assert meta == {"step": 3}
    for k, v in tensors.items():
        assert back[k].shape == v.shape
        assert back[k].tobytes() == np.asarray(v, dtype="<f8").tobytes()
    assert checkpoint.dumps(tensors, {"step": 3}) == path.read_bytes()


def test_checkpoint_layout_header():
    buf = checkpoint.dumps({"x": np.array([1.0, 2.0])})
    assert buf[:8] == b"DCKPT\x00\x00\x01"
    assert int.from_bytes(buf[8:12], "little") == checkpoint.FORMAT_VERSION
    assert buf[-16:] == np.array([1.0, 2.0], dtype="<f8").tobytes()


def test_checkpoint_rejects_garbage_and_nan():
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"not a checkpoint")
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.dumps({"x": np.array([np.nan])})
