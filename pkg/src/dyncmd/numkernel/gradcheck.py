"""Central-difference gradient checker, independent of the reverse-mode path."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Graph, NonFiniteError, Tensor


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    worst_param: str | None
    worst_index: tuple[int, ...] | None
    tol: float
    n_checked: int
    per_param: dict[str, float] = field(default_factory=dict)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        where = f"{self.worst_param}{list(self.worst_index)}" if self.worst_param else "-"
        return f"{status} max_rel_err={self.max_rel_error:.3e} (tol {self.tol:g}) worst={where} checked={self.n_checked}"


def _scalar(out: Tensor) -> float:
    if out.data.size != 1:
        raise ValueError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    val = float(out.data.reshape(()))
    if not np.isfinite(val):
        raise NonFiniteError("non-finite loss in grad_check")
    return val


def analytic_grads(f: Callable[[dict[str, Tensor]], Tensor], params: dict[str, np.ndarray]) -> tuple[float, dict[str, np.ndarray]]:
    with Graph() as g:
        leaves = g.params_from(params)
        loss = f(leaves)
        value = _scalar(loss)
        g.backward(loss)
    return value, g.grads()


def grad_check(
    f: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-4,
    samples_per_param: int | None = None,
    rng: np.random.Generator | None = None,
    denom_floor: float = 1e-8,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` maps a dict of named tensors to a scalar tensor. Relative error per
    entry is ``|a - n| / max(|a|, |n|, denom_floor)``. With
    ``samples_per_param`` set, only that many entries per tensor are probed
    (chosen by ``rng``); otherwise every entry is.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    _, grads = analytic_grads(f, params)
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}

    def evaluate() -> float:
        return _scalar(f({k: Tensor(v) for k, v in work.items()}))

    worst = (0.0, None, None)
    per_param: dict[str, float] = {}
    n_checked = 0
    for name in params:
        arr = work[name]
        flat_n = arr.size
        if samples_per_param is None or samples_per_param >= flat_n:
            flat_idx = np.arange(flat_n)
        else:
            flat_idx = np.sort(rng.choice(flat_n, size=samples_per_param, replace=False))
        param_worst = 0.0
        for fi in flat_idx:
            idx = np.unravel_index(int(fi), arr.shape)
            orig = arr[idx]
            arr[idx] = orig + h
            fp = evaluate()
            arr[idx] = orig - h
            fm = evaluate()
            arr[idx] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = float(grads[name][idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), denom_floor)
            n_checked += 1
            if err > param_worst:
                param_worst = err
            if err > worst[0]:
                worst = (err, name, tuple(int(i) for i in idx))
        per_param[name] = param_worst
    return GradCheckReport(
        passed=worst[0] < tol,
        max_rel_error=worst[0],
        worst_param=worst[1],
        worst_index=worst[2],
        tol=tol,
        n_checked=n_checked,
        per_param=per_param,
    )
