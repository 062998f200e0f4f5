"""SDE models, payoffs and the batched coupled-pair Euler environment.

Array conventions: states are ``(batch, d1)``, Brownian drivers ``(batch, d2)``
and diffusion matrices ``(batch, d1, d2)``. Correlation actions may be a single
``(d2, d2)`` matrix shared by the batch or a ``(batch, d2, d2)`` stack.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EpisodeFinished, NumericError
from .numerics import RngStream


def _as_tuple(v, n=None):
    t = tuple(float(a) for a in np.atleast_1d(np.asarray(v, dtype=np.float64)))
    if n is not None and len(t) == 1 and n > 1:
        t = t * n
    return t


@dataclass(frozen=True)
class BlackScholes:
    """Independent Black-Scholes assets, ``dX_i = b_i X_i dt + s_i X_i dW_i``."""

    drift: tuple
    vol: tuple
    x0: tuple
    T: float = 1.0
    N: int = 50
    kind: str = field(default="black_scholes", init=False)

    def __post_init__(self):
        d = max(len(np.atleast_1d(v)) for v in (self.drift, self.vol, self.x0))
        for name in ("drift", "vol", "x0"):
            object.__setattr__(self, name, _as_tuple(getattr(self, name), d))
            if len(getattr(self, name)) != d:
                raise ValueError(f"{name} must have {d} entries")
        if any(s <= 0 for s in self.vol):
            raise ValueError("volatilities must be > 0")
        _check_grid(self.T, self.N)

    @property
    def d1(self) -> int:
        return len(self.x0)

    @property
    def d2(self) -> int:
        return len(self.x0)

    @property
    def h(self) -> float:
        return self.T / self.N

    def initial_state(self) -> np.ndarray:
        return np.asarray(self.x0)

    def drift_diffusion(self, x):
        x = _floats(x)
        b = np.asarray(self.drift)
        s = np.asarray(self.vol)
        drift = b * x
        diff = np.zeros(x.shape + (self.d2,), dtype=x.dtype)
        idx = np.arange(self.d1)
        diff[..., idx, idx] = s * x
        return drift, diff

    def to_dict(self) -> dict:
        return {"kind": self.kind, "drift": list(self.drift), "vol": list(self.vol),
                "x0": list(self.x0), "T": self.T, "N": self.N}


@dataclass(frozen=True)
class Heston:
    """Independent Heston assets with full-truncation Euler coefficients.

    State layout per asset is ``(S_i, V_i)``. Driver layout per asset is
    ``(price driver, idiosyncratic variance driver)``: the price is driven by
    the first one alone and the variance by ``tau*first + sqrt(1-tau^2)*second``.
    """

    mean_reversion: tuple
    long_var: tuple
    vol_of_vol: tuple
    rho_sv: tuple
    s0: tuple
    v0: tuple
    T: float = 1.0
    N: int = 50
    kind: str = field(default="heston", init=False)

    def __post_init__(self):
        names = ("mean_reversion", "long_var", "vol_of_vol", "rho_sv", "s0", "v0")
        d = max(len(np.atleast_1d(getattr(self, n))) for n in names)
        for name in names:
            object.__setattr__(self, name, _as_tuple(getattr(self, name), d))
            if len(getattr(self, name)) != d:
                raise ValueError(f"{name} must have {d} entries")
        if any(v <= 0 for n in names[:3] for v in getattr(self, n)):
            raise ValueError("mean_reversion, long_var and vol_of_vol must be > 0")
        if any(abs(t) > 1 for t in self.rho_sv):
            raise ValueError("rho_sv must lie in [-1, 1]")
        _check_grid(self.T, self.N)

    @property
    def n_assets(self) -> int:
        return len(self.s0)

    @property
    def d1(self) -> int:
        return 2 * self.n_assets

    @property
    def d2(self) -> int:
        return 2 * self.n_assets

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def price_index(self) -> np.ndarray:
        return np.arange(0, self.d1, 2)

    def initial_state(self) -> np.ndarray:
        return np.ravel(np.column_stack([self.s0, self.v0]))

    def drift_diffusion(self, x):
        x = _floats(x)
        a = np.asarray(self.mean_reversion)
        lv = np.asarray(self.long_var)
        eta = np.asarray(self.vol_of_vol)
        tau = np.asarray(self.rho_sv)
        s = x[..., 0::2]
        vp = np.maximum(x[..., 1::2], 0.0)
        sq = np.sqrt(vp)
        drift = np.zeros_like(x)
        drift[..., 1::2] = a * (lv - vp)
        diff = np.zeros(x.shape + (self.d2,), dtype=x.dtype)
        i = np.arange(self.n_assets)
        diff[..., 2 * i, 2 * i] = sq * s
        diff[..., 2 * i + 1, 2 * i] = eta * sq * tau
        diff[..., 2 * i + 1, 2 * i + 1] = eta * sq * np.sqrt(1.0 - tau ** 2)
        return drift, diff

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mean_reversion": list(self.mean_reversion),
                "long_var": list(self.long_var), "vol_of_vol": list(self.vol_of_vol),
                "rho_sv": list(self.rho_sv), "s0": list(self.s0), "v0": list(self.v0),
                "T": self.T, "N": self.N}


def _floats(x):
    x = np.asarray(x)
    return x if np.issubdtype(x.dtype, np.floating) else x.astype(np.float64)


def _check_grid(T, N):
    if not T > 0:
        raise ValueError("T must be > 0")
    if int(N) != N or N < 1:
        raise ValueError("N must be a positive integer")


def drift_diffusion(model, x):
    """Drift ``(..., d1)`` and diffusion ``(..., d1, d2)`` of ``model`` at ``x``."""
    x = _floats(x)
    if not np.all(np.isfinite(x)):
        raise NumericError("state blow-up")
    return model.drift_diffusion(x)


# -- payoffs -----------------------------------------------------------------

@dataclass(frozen=True)
class Call:
    """``(x - K)_+`` on the first coordinate."""

    strike: float = 1.0
    kind: str = field(default="call", init=False)

    def value(self, x):
        return np.maximum(np.asarray(x)[..., 0] - self.strike, 0.0)

    def grad(self, x):
        x = np.asarray(x)
        g = np.zeros_like(_floats(x))
        g[..., 0] = x[..., 0] > self.strike
        return g

    def kinks(self, x):
        return np.abs(np.asarray(x)[..., :1] - self.strike)

    def to_dict(self):
        return {"kind": self.kind, "strike": self.strike}


@dataclass(frozen=True)
class BasketCall:
    """``sum_i alpha_i (x_i - K_i)_+``."""

    alpha: tuple
    strike: tuple
    kind: str = field(default="basket_call", init=False)

    def __post_init__(self):
        n = max(len(np.atleast_1d(self.alpha)), len(np.atleast_1d(self.strike)))
        object.__setattr__(self, "alpha", _as_tuple(self.alpha, n))
        object.__setattr__(self, "strike", _as_tuple(self.strike, n))

    @classmethod
    def equal_weights(cls, d: int, strike: float = 1.0) -> "BasketCall":
        return cls(alpha=(1.0 / d,) * d, strike=(strike,) * d)

    def value(self, x):
        return np.maximum(np.asarray(x) - np.asarray(self.strike), 0.0) @ np.asarray(self.alpha)

    def grad(self, x):
        x = np.asarray(x)
        return (x > np.asarray(self.strike)) * np.asarray(self.alpha)

    def kinks(self, x):
        return np.abs(np.asarray(x) - np.asarray(self.strike))

    def to_dict(self):
        return {"kind": self.kind, "alpha": list(self.alpha), "strike": list(self.strike)}


@dataclass(frozen=True)
class LogSquare:
    """``(log x - mu*T)^2 / (sigma^2 T)``, summed over coordinates.

    Under Black-Scholes with ``mu = b - sigma^2/2`` this is ``Z^2`` for the
    standard normal ``Z`` driving the terminal log-price.
    """

    mu: float
    sigma: float
    T: float = 1.0
    kind: str = field(default="log_square", init=False)

    def value(self, x):
        x = _floats(x)
        if np.any(x <= 0):
            raise ValueError("domain")
        return np.sum((np.log(x) - self.mu * self.T) ** 2, axis=-1) / (self.sigma ** 2 * self.T)

    def grad(self, x):
        x = _floats(x)
        if np.any(x <= 0):
            raise ValueError("domain")
        return 2.0 * (np.log(x) - self.mu * self.T) / (self.sigma ** 2 * self.T * x)

    def kinks(self, x):
        return np.full(np.shape(x)[:-1] + (1,), np.inf)

    def to_dict(self):
        return {"kind": self.kind, "mu": self.mu, "sigma": self.sigma, "T": self.T}


@dataclass(frozen=True)
class HestonCall:
    """Equal-weight call basket on the price coordinates ``x[..., 0::2]``."""

    strike: float = 1.0
    kind: str = field(default="heston_call", init=False)

    def value(self, x):
        s = np.asarray(x)[..., 0::2]
        return np.mean(np.maximum(s - self.strike, 0.0), axis=-1)

    def grad(self, x):
        x = np.asarray(x)
        g = np.zeros_like(_floats(x))
        s = x[..., 0::2]
        g[..., 0::2] = (s > self.strike) / s.shape[-1]
        return g

    def kinks(self, x):
        return np.abs(np.asarray(x)[..., 0::2] - self.strike)

    def to_dict(self):
        return {"kind": self.kind, "strike": self.strike}


def payoff_value(p, x):
    return p.value(x)


def payoff_grad(p, x):
    return p.grad(x)


# -- coupled environment -----------------------------------------------------

@dataclass(frozen=True)
class CoupledBatchState:
    x1: np.ndarray
    x2: np.ndarray
    k: int
    h: float

    @property
    def t(self) -> float:
        return self.k * self.h

    @property
    def batch(self) -> int:
        return self.x1.shape[0]


def _apply(mat, v):
    """``mat @ v`` for a shared ``(d, d)`` or batched ``(b, d, d)`` matrix."""
    if mat.ndim == 2:
        return v @ mat.T
    return np.einsum("bij,bj->bi", mat, v)


def correlated_increment(action, xi1, xi2):
    """``rho xi1 + (I - rho rho^T)^{1/2} xi2``."""
    return _apply(action.rho, xi1) + _apply(action.residual, xi2)


def euler_step_pair(model, state: CoupledBatchState, action, xi1, xi2) -> CoupledBatchState:
    """Advance both copies by one Euler step; copy 2 uses the correlated driver."""
    if state.k >= model.N:
        raise EpisodeFinished("episode finished")
    sh = np.sqrt(model.h)
    b1, s1 = drift_diffusion(model, state.x1)
    b2, s2 = drift_diffusion(model, state.x2)
    dw2 = correlated_increment(action, xi1, xi2)
    x1 = state.x1 + model.h * b1 + sh * np.einsum("bij,bj->bi", s1, xi1)
    x2 = state.x2 + model.h * b2 + sh * np.einsum("bij,bj->bi", s2, dw2)
    if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(x2))):
        raise NumericError(f"state blow-up at step {state.k + 1}")
    return CoupledBatchState(x1, x2, state.k + 1, state.h)


def step_reward(payoff, prev: CoupledBatchState, nxt: CoupledBatchState) -> np.ndarray:
    """Telescopic reward ``-(f(x1')f(x2') - f(x1)f(x2))``."""
    if nxt.k != prev.k + 1:
        raise ValueError("states are not consecutive")
    before = payoff.value(prev.x1) * payoff.value(prev.x2)
    after = payoff.value(nxt.x1) * payoff.value(nxt.x2)
    return -(after - before)


def draw_noise(stream: RngStream, batch: int, d2: int):
    """One step of independent drivers ``(xi1, xi2)``, each ``(batch, d2)``."""
    xi = stream.normal((2, batch, d2))
    return xi[0], xi[1]


class CoupledEnv:
    """Batched agent-environment view of the coupled SDE pair.

    The environment is stateless: the caller threads ``CoupledBatchState``
    and the ``RngStream`` through ``reset``/``step``. Discounting is 1.
    """

    def __init__(self, model, payoff):
        self.model = model
        self.payoff = payoff

    def reset(self, batch: int) -> CoupledBatchState:
        if batch < 1:
            raise ValueError("batch must be >= 1")
        x0 = np.broadcast_to(self.model.initial_state(), (batch, self.model.d1)).copy()
        return CoupledBatchState(x0, x0.copy(), 0, self.model.h)

    def step(self, state: CoupledBatchState, action, stream: RngStream):
        if state.k >= self.model.N:
            raise EpisodeFinished("episode finished")
        xi1, xi2 = draw_noise(stream, state.batch, self.model.d2)
        nxt = euler_step_pair(self.model, state, action, xi1, xi2)
        return nxt, step_reward(self.payoff, state, nxt)

    def done(self, state: CoupledBatchState) -> bool:
        return state.k >= self.model.N


def env_reset(model, batch: int) -> CoupledBatchState:
    return CoupledEnv(model, None).reset(batch)


def env_step(model, payoff, state, action, stream):
    return CoupledEnv(model, payoff).step(state, action, stream)


def vanilla_terminal(model, batch: int, stream: RngStream) -> np.ndarray:
    """Terminal states of a single uncoupled Euler scheme."""
    x = np.broadcast_to(model.initial_state(), (batch, model.d1)).copy()
    sh = np.sqrt(model.h)
    for _ in range(model.N):
        b, s = drift_diffusion(model, x)
        xi = stream.normal((batch, model.d2))
        x = x + model.h * b + sh * np.einsum("bij,bj->bi", s, xi)
    return x
