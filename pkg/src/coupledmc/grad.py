"""Pathwise gradient of the one-step objective and the SGD/Adam updates.

The differentiated quantity at step ``k`` is the batch mean of
``L_k = f(x1_{k+1}) f(x2_{k+1})`` with the incoming state and both noise
draws held fixed. Only ``x2_{k+1}`` depends on the action, through
``sigma(x2_k) (rho xi1 + R xi2)``, so

    dL/drho = f(x1') sqrt(h) sigma(x2)^T grad f(x2')  (outer)  xi1

and likewise for ``R`` with ``xi2``. Descending ``L_k`` is ascending the
telescopic reward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .models import CoupledBatchState, drift_diffusion, euler_step_pair
from .policy import (PolicyParams, materialize, materialize_backward, mlp_backward,
                     mlp_forward, state_features)


@dataclass
class StepGrad:
    grad: PolicyParams
    objective: np.ndarray
    next_state: CoupledBatchState
    action: object


def backprop_step_objective(params: PolicyParams, state: CoupledBatchState, xi1, xi2,
                            model, payoff) -> StepGrad:
    feats = state_features(state, model)
    raw, cache = mlp_forward(params, feats)
    act, mcache = materialize(params.kind, raw, params.d2)
    nxt = euler_step_pair(model, state, act, xi1, xi2)
    f1 = payoff.value(nxt.x1)
    f2 = payoff.value(nxt.x2)
    n = state.batch
    gx2 = payoff.grad(nxt.x2) * (f1 / n)[:, None]
    _, s2 = drift_diffusion(model, state.x2)
    v = np.sqrt(model.h) * np.einsum("bij,bi->bj", s2, gx2)
    g_rho = v[:, :, None] * xi1[:, None, :]
    g_res = v[:, :, None] * xi2[:, None, :]
    g_raw = materialize_backward(params.kind, mcache, g_rho, g_res)
    gw, gb = mlp_backward(params, cache, g_raw)
    grad = PolicyParams(params.kind, params.d1, params.d2, gw, gb)
    if not np.all(np.isfinite(grad.flat())):
        raise NumericError(f"gradient blow-up at step {state.k}")
    return StepGrad(grad, f1 * f2, nxt, act)


def step_objective(params: PolicyParams, state, xi1, xi2, model, payoff) -> float:
    raw, _ = mlp_forward(params, state_features(state, model))
    act, _ = materialize(params.kind, raw, params.d2)
    nxt = euler_step_pair(model, state, act, xi1, xi2)
    return float(np.mean(payoff.value(nxt.x1) * payoff.value(nxt.x2)))


def finite_diff_gradient(params: PolicyParams, state, xi1, xi2, model, payoff,
                         step: float = 1e-6, order: int = 2, dtype=np.float64) -> np.ndarray:
    """Central differences of the batch-mean objective, one coordinate at a time.

    The step for coordinate ``i`` is ``step * max(1, |theta_i|)``. ``order=4``
    uses the five-point stencil. Passing ``dtype=np.longdouble`` evaluates the
    forward pass in extended precision, which pushes the round-off floor of
    the differences well below that of float64.
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    theta = params.flat().astype(dtype)
    out = np.empty(theta.size)
    state = CoupledBatchState(state.x1.astype(dtype), state.x2.astype(dtype), state.k, state.h)
    xi1 = np.asarray(xi1, dtype=dtype)
    xi2 = np.asarray(xi2, dtype=dtype)

    def obj(th):
        raw, _ = mlp_forward(params.with_flat(th), state_features(state, model))
        act, _ = materialize(params.kind, raw, params.d2)
        nxt = euler_step_pair(model, state, act, xi1, xi2)
        return np.mean(payoff.value(nxt.x1) * payoff.value(nxt.x2))

    for i in range(theta.size):
        hi = dtype(step) * max(dtype(1), abs(theta[i]))
        tp = theta.copy()

        def at(m):
            tp[i] = theta[i] + m * hi
            return obj(tp)

        if order == 2:
            out[i] = float((at(1) - at(-1)) / (2 * hi))
        elif order == 4:
            out[i] = float((-at(2) + 8 * at(1) - 8 * at(-1) + at(-2)) / (12 * hi))
        else:
            raise ValueError("order must be 2 or 4")
    return out


class SGD:
    kind = "sgd"

    def __init__(self, lr: float = 1e-2):
        self.lr = lr
        self.t = 0

    def update(self, params: PolicyParams, grad: PolicyParams) -> PolicyParams:
        self.t += 1
        return params.with_flat(params.flat() - self.lr * grad.flat())


class Adam:
    kind = "adam"

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def update(self, params: PolicyParams, grad: PolicyParams) -> PolicyParams:
        g = grad.flat()
        if self.m is None:
            self.m = np.zeros_like(g)
            self.v = np.zeros_like(g)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params.with_flat(params.flat() - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))


def make_optimizer(kind: str = "adam", lr: float | None = None, **kw):
    if kind == "adam":
        return Adam(lr=1e-3 if lr is None else lr, **kw)
    if kind == "sgd":
        return SGD(lr=1e-2 if lr is None else lr)
    raise ValueError(f"unknown optimizer {kind!r}")


def optimizer_update(opt, params: PolicyParams, grad: PolicyParams):
    return opt.update(params, grad), opt
