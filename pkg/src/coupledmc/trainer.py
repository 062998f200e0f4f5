"""Policy-gradient training loop and variance evaluation of coupled estimators."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .grad import backprop_step_objective, make_optimizer
from .models import CoupledEnv, draw_noise, drift_diffusion, euler_step_pair
from .numerics import RngStream, SampleStats, sample_stats
from .policy import PolicyParams, init_params

log = logging.getLogger(__name__)

# stream selectors: evaluation chunks use 0..2^32-1, training epochs sit above
TRAIN_STREAM = 1 << 40
EVAL_CHUNK = 1 << 15


@dataclass
class TrainConfig:
    model: object
    payoff: object
    kind: str = "diag"
    epochs: int = 100
    train_batch: int = 512
    eval_batch: int = 512 * 16
    optimizer: str = "adam"
    lr: float | None = None
    betas: tuple = (0.9, 0.999)
    seed: int = 0
    eval_seed: int = 12345
    hidden: tuple = (64, 64)
    update: str = "per_step"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.train_batch < 2 or self.eval_batch < 2:
            raise ValueError("train_batch and eval_batch must be >= 2")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.update not in ("per_step", "per_episode"):
            raise ValueError(f"unknown update mode {self.update!r}")


@dataclass
class EpochRecord:
    epoch: int
    eval_variance: float
    eval_mean: float
    train_seconds: float


@dataclass
class EvalReport:
    agent: str
    n_paths: int
    seed: int
    estimator: SampleStats
    vanilla: SampleStats | None
    transport_cost: float
    # cross moments kept so the transport identity can be audited
    mean_f1_sq: float = 0.0
    mean_f2_sq: float = 0.0
    mean_f1f2: float = 0.0
    mean_f1: float = 0.0
    mean_f2: float = 0.0

    def to_dict(self) -> dict:
        return {"agent": self.agent, "n_paths": self.n_paths, "seed": self.seed,
                "estimator": self.estimator.to_dict(),
                "vanilla": None if self.vanilla is None else self.vanilla.to_dict(),
                "transport_cost": self.transport_cost, "mean_f1_sq": self.mean_f1_sq,
                "mean_f2_sq": self.mean_f2_sq, "mean_f1f2": self.mean_f1f2,
                "mean_f1": self.mean_f1, "mean_f2": self.mean_f2}


def agent_name(agent) -> str:
    if isinstance(agent, PolicyParams):
        return f"policy_{agent.kind}"
    return getattr(agent, "name", type(agent).__name__)


@dataclass
class Rollout:
    """Terminal payoffs of a coupled simulation (plus an uncoupled copy)."""

    f1: np.ndarray
    f2: np.ndarray
    fb: np.ndarray | None = None
    x1: np.ndarray | None = None
    x2: np.ndarray | None = None


def simulate(agent, model, payoff, n_paths: int, seed: int, vanilla: bool = True,
             keep_states: bool = False, chunk: int = EVAL_CHUNK) -> Rollout:
    """Simulate ``n_paths`` coupled pairs under ``agent``.

    Paths are processed in fixed-size chunks, chunk ``c`` drawing from stream
    ``(seed, c)``, so results depend only on ``(agent, n_paths, seed)``. With
    ``vanilla`` an extra copy driven by ``xi2`` alone is advanced; together with
    ``x1`` it forms the independent (baseline) pair on the same draws.
    """
    env = CoupledEnv(model, payoff)
    f1s, f2s, fbs, x1s, x2s = [], [], [], [], []
    sh = np.sqrt(model.h)
    for c, start in enumerate(range(0, n_paths, chunk)):
        m = min(chunk, n_paths - start)
        stream = RngStream(seed, c)
        state = env.reset(m)
        xb = state.x1.copy()
        while not env.done(state):
            xi1, xi2 = draw_noise(stream, m, model.d2)
            if vanilla:
                bb, sb = drift_diffusion(model, xb)
                xb = xb + model.h * bb + sh * np.einsum("bij,bj->bi", sb, xi2)
            state = euler_step_pair(model, state, agent.act(state, model), xi1, xi2)
        f1s.append(payoff.value(state.x1))
        f2s.append(payoff.value(state.x2))
        if vanilla:
            fbs.append(payoff.value(xb))
        if keep_states:
            x1s.append(state.x1)
            x2s.append(state.x2)
    return Rollout(np.concatenate(f1s), np.concatenate(f2s),
                   np.concatenate(fbs) if vanilla else None,
                   np.concatenate(x1s) if keep_states else None,
                   np.concatenate(x2s) if keep_states else None)


def evaluate_variance(agent, model, payoff, n_paths: int, seed: int,
                      vanilla: bool = True) -> EvalReport:
    """Statistics of ``Z = (f(x1_T) + f(x2_T))/2`` under ``agent``.

    The same ``seed`` gives the same draws for every agent (common random
    numbers); the vanilla estimator is the independent pair on those draws.
    """
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    r = simulate(agent, model, payoff, n_paths, seed, vanilla=vanilla)
    z = 0.5 * (r.f1 + r.f2)
    van = sample_stats(0.5 * (r.f1 + r.fb)) if vanilla else None
    return EvalReport(
        agent=agent_name(agent), n_paths=n_paths, seed=seed,
        estimator=sample_stats(z), vanilla=van,
        transport_cost=float(np.mean((r.f1 - r.f2) ** 2)),
        mean_f1_sq=float(np.mean(r.f1 ** 2)), mean_f2_sq=float(np.mean(r.f2 ** 2)),
        mean_f1f2=float(np.mean(r.f1 * r.f2)),
        mean_f1=float(np.mean(r.f1)), mean_f2=float(np.mean(r.f2)))


def train(config: TrainConfig, params: PolicyParams | None = None, callback=None):
    """Train a correlation policy; returns ``(params, history)``.

    Each epoch draws a fresh training batch, runs the N decision steps and
    applies one optimizer update per step (or one per episode with
    ``update="per_episode"``), then evaluates on the fixed evaluation seed.
    """
    model, payoff = config.model, config.payoff
    if params is None:
        params = init_params(config.kind, model.d1, model.d2, seed=config.seed,
                             hidden=config.hidden)
    opt = make_optimizer(config.optimizer, config.lr,
                         **({"beta1": config.betas[0], "beta2": config.betas[1]}
                            if config.optimizer == "adam" else {}))
    env = CoupledEnv(model, payoff)
    history = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        stream = RngStream(config.seed, TRAIN_STREAM + epoch)
        state = env.reset(config.train_batch)
        acc = None
        while not env.done(state):
            xi1, xi2 = draw_noise(stream, config.train_batch, model.d2)
            sg = backprop_step_objective(params, state, xi1, xi2, model, payoff)
            if config.update == "per_step":
                params = opt.update(params, sg.grad)
            else:
                g = sg.grad.flat()
                acc = g if acc is None else acc + g
            state = sg.next_state
        if acc is not None:
            params = opt.update(params, params.with_flat(acc))
        train_s = time.perf_counter() - t0
        rep = evaluate_variance(params, model, payoff, config.eval_batch, config.eval_seed,
                                vanilla=False)
        rec = EpochRecord(epoch, rep.estimator.variance, rep.estimator.mean, train_s)
        history.append(rec)
        log.info("epoch %d  var %.6e  mean %.6f  train %.2fs", epoch, rec.eval_variance,
                 rec.eval_mean, train_s)
        if callback is not None:
            callback(rec, params)
    return params, history


def trajectory_dump(agent, model, n_traj: int, seed: int) -> list[dict]:
    """Per-step rows ``(traj, k, t, x1, x2, rho diagonal, rotation cosines)``."""
    env = CoupledEnv(model, None)
    stream = RngStream(seed, 0)
    state = env.reset(n_traj)
    rows = []
    while True:
        act = None if env.done(state) else agent.act(state, model)
        for i in range(n_traj):
            row = {"traj": i, "k": state.k, "t": state.t}
            row.update({f"x1_{j}": float(state.x1[i, j]) for j in range(model.d1)})
            row.update({f"x2_{j}": float(state.x2[i, j]) for j in range(model.d1)})
            if act is not None:
                diag = np.broadcast_to(act.diag, (n_traj, model.d2)) if act.diag is not None \
                    else np.diagonal(np.broadcast_to(act.rho, (n_traj, model.d2, model.d2)),
                                     axis1=1, axis2=2)
                row.update({f"diag_{j}": float(diag[i, j]) for j in range(model.d2)})
                if act.cos is not None:
                    cos = np.broadcast_to(act.cos, (n_traj, act.cos.shape[-1]))
                    row.update({f"cos_{j}": float(cos[i, j]) for j in range(cos.shape[1])})
            rows.append(row)
        if act is None:
            break
        xi1, xi2 = draw_noise(stream, n_traj, model.d2)
        state = euler_step_pair(model, state, act, xi1, xi2)
    return rows
