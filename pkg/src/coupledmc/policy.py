"""Correlation policies: an MLP with Diag/Ortho output heads and constant agents.

A policy maps the coupled state ``(x1, x2, t/T)`` to a correlation matrix
``rho`` with ``rho rho^T <= I`` together with ``(I - rho rho^T)^{1/2}``.

* ``diag``: ``rho = diag(2*sigmoid(raw) - 1)``.
* ``ortho``: ``rho = B D B^T`` where ``D`` is built like ``diag`` from the first
  ``d2`` outputs and ``B`` is block diagonal with 2x2 rotations whose cosine is
  ``sigmoid`` of the remaining ``d2 // 2`` outputs (trailing 1 for odd ``d2``).
  Since ``B`` is orthogonal the residual is ``B (I - D^2)^{1/2} B^T``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .numerics import RngStream

KINDS = ("diag", "ortho")
SAT_EPS = 1e-12
HIDDEN = (64, 64)


@dataclass
class MaterializedAction:
    rho: np.ndarray
    residual: np.ndarray
    # per-path diagonal of D and rotation cosines, kept for trajectory dumps
    diag: np.ndarray | None = None
    cos: np.ndarray | None = None

    def check(self, tol: float = 1e-8) -> float:
        """Max deviation of ``rho rho^T + R R^T`` from the identity."""
        rho = np.asarray(self.rho)
        res = np.asarray(self.residual)
        eye = np.eye(rho.shape[-1])
        err = rho @ np.swapaxes(rho, -1, -2) + res @ np.swapaxes(res, -1, -2) - eye
        dev = float(np.max(np.abs(err)))
        if dev > tol:
            raise ValueError(f"residual mismatch {dev:.3e} > {tol:g}")
        return dev


@dataclass
class PolicyParams:
    kind: str
    d1: int
    d2: int
    weights: list
    biases: list

    @property
    def dims(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def with_flat(self, theta) -> "PolicyParams":
        theta = np.asarray(theta)
        ws, bs, i = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(theta[i:i + w.size].reshape(w.shape))
            i += w.size
            bs.append(theta[i:i + b.size].reshape(b.shape))
            i += b.size
        if i != theta.size:
            raise ValueError("flat parameter vector has the wrong length")
        return PolicyParams(self.kind, self.d1, self.d2, ws, bs)

    def copy(self) -> "PolicyParams":
        return self.with_flat(self.flat().copy())

    def act(self, state, model) -> MaterializedAction:
        raw, _ = mlp_forward(self, state_features(state, model))
        act, _ = materialize(self.kind, raw, self.d2)
        return act


def n_outputs(kind: str, d2: int) -> int:
    if kind == "diag":
        return d2
    if kind == "ortho":
        return d2 + d2 // 2
    raise ValueError(f"unknown parametrization {kind!r}")


def init_params(kind: str, d1: int, d2: int, seed: int = 0, hidden=HIDDEN,
                zero_head: bool = True) -> PolicyParams:
    """Fan-in uniform init; with ``zero_head`` the initial policy is ``rho = 0``."""
    dims = [2 * d1 + 1, *hidden, n_outputs(kind, d2)]
    stream = RngStream(seed, 0xC0FFEE)
    ws, bs = [], []
    for li, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        last = li == len(dims) - 2
        if last and zero_head:
            ws.append(np.zeros((fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        else:
            lim = 1.0 / np.sqrt(fan_in)
            ws.append(stream.uniform(-lim, lim, (fan_in, fan_out)))
            bs.append(stream.uniform(-lim, lim, fan_out))
    return PolicyParams(kind, d1, d2, ws, bs)


def state_features(state, model) -> np.ndarray:
    t = np.full((state.batch, 1), state.k * state.h / model.T)
    return np.concatenate([state.x1, state.x2, t], axis=1)


def mlp_forward(params: PolicyParams, feats):
    feats = np.asarray(feats)
    if not np.issubdtype(feats.dtype, np.floating):
        feats = feats.astype(np.float64)
    if feats.ndim != 2 or feats.shape[1] != params.dims[0]:
        raise ValueError(f"feature shape {feats.shape} does not match input dim {params.dims[0]}")
    acts = [feats]
    pre = []
    h = feats
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        if i < n - 1:
            pre.append(z)
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z
    return h, (acts, pre)


def mlp_backward(params: PolicyParams, cache, g_out):
    """Gradients ``(dW list, db list)`` given the gradient wrt raw outputs."""
    acts, pre = cache
    n = len(params.weights)
    gw = [None] * n
    gb = [None] * n
    g = g_out
    for i in range(n - 1, -1, -1):
        gw[i] = acts[i].T @ g
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ params.weights[i].T) * (pre[i - 1] > 0)
    return gw, gb


def _sigmoid(raw):
    s = expit(raw)
    inside = (s > SAT_EPS) & (s < 1.0 - SAT_EPS)
    return np.clip(s, SAT_EPS, 1.0 - SAT_EPS), np.where(inside, s * (1.0 - s), 0.0)


def _diag_embed(v):
    out = np.zeros(v.shape + (v.shape[-1],), dtype=v.dtype)
    idx = np.arange(v.shape[-1])
    out[..., idx, idx] = v
    return out


def materialize_diag(raw):
    raw = np.atleast_2d(raw)
    s, ds = _sigmoid(raw)
    d = 2.0 * s - 1.0
    e = np.sqrt(1.0 - d * d)
    act = MaterializedAction(_diag_embed(d), _diag_embed(e), diag=d)
    return act, {"d": d, "e": e, "dd": 2.0 * ds}


def rotation_blocks(alpha, d2: int):
    """Block-diagonal ``B`` from cosines ``alpha`` of shape ``(b, d2 // 2)``."""
    alpha = np.asarray(alpha)
    sn = np.sqrt(1.0 - alpha * alpha)
    B = np.zeros(alpha.shape[:-1] + (d2, d2), dtype=alpha.dtype)
    j = np.arange(d2 // 2)
    B[..., 2 * j, 2 * j] = alpha
    B[..., 2 * j + 1, 2 * j + 1] = alpha
    B[..., 2 * j, 2 * j + 1] = -sn
    B[..., 2 * j + 1, 2 * j] = sn
    if d2 % 2:
        B[..., d2 - 1, d2 - 1] = 1.0
    return B, sn


def materialize_ortho(raw, d2: int):
    raw = np.atleast_2d(raw)
    if raw.shape[-1] != n_outputs("ortho", d2):
        raise ValueError(f"expected {n_outputs('ortho', d2)} raw outputs, got {raw.shape[-1]}")
    s, ds = _sigmoid(raw[:, :d2])
    d = 2.0 * s - 1.0
    e = np.sqrt(1.0 - d * d)
    alpha, dalpha = _sigmoid(raw[:, d2:])
    B, sn = rotation_blocks(alpha, d2)
    Bt = np.swapaxes(B, -1, -2)
    rho = (B * d[:, None, :]) @ Bt
    res = (B * e[:, None, :]) @ Bt
    act = MaterializedAction(rho, res, diag=d, cos=alpha)
    cache = {"d": d, "e": e, "dd": 2.0 * ds, "alpha": alpha, "dalpha": dalpha,
             "sn": sn, "B": B}
    return act, cache


def materialize(kind: str, raw, d2: int):
    if kind == "diag":
        return materialize_diag(raw)
    if kind == "ortho":
        return materialize_ortho(raw, d2)
    raise ValueError(f"unknown parametrization {kind!r}")


def materialize_backward(kind: str, cache, g_rho, g_res) -> np.ndarray:
    """Gradient wrt raw outputs given gradients wrt ``rho`` and the residual."""
    d, e = cache["d"], cache["e"]
    if kind == "diag":
        gd = np.diagonal(g_rho, axis1=-2, axis2=-1) - np.diagonal(g_res, axis1=-2, axis2=-1) * d / e
        return gd * cache["dd"]
    B = cache["B"]
    gd = np.einsum("bij,bik,bkj->bj", B, g_rho, B)
    ge = np.einsum("bij,bik,bkj->bj", B, g_res, B)
    gd = gd - ge * d / e
    sym_r = g_rho + np.swapaxes(g_rho, -1, -2)
    sym_e = g_res + np.swapaxes(g_res, -1, -2)
    gB = (sym_r @ B) * d[:, None, :] + (sym_e @ B) * e[:, None, :]
    j = np.arange(B.shape[-1] // 2)
    ratio = cache["alpha"] / cache["sn"]
    ga = (gB[:, 2 * j, 2 * j] + gB[:, 2 * j + 1, 2 * j + 1]
          + ratio * (gB[:, 2 * j, 2 * j + 1] - gB[:, 2 * j + 1, 2 * j]))
    return np.concatenate([gd * cache["dd"], ga * cache["dalpha"]], axis=1)


# -- constant reference agents -----------------------------------------------

REFERENCE_AGENTS = ("baseline", "antithetic", "minus_plus", "identity")


@dataclass
class ConstantAgent:
    name: str
    action: MaterializedAction = field(repr=False)

    def act(self, state, model) -> MaterializedAction:
        return self.action


def reference_agent(kind: str, d2: int) -> ConstantAgent:
    """Constant coupling: ``baseline`` (independent), ``antithetic`` (``-I``),
    ``minus_plus`` (``diag(-1, +1)`` per Heston asset) or ``identity``."""
    eye = np.eye(d2)
    if kind == "baseline":
        rho, res = np.zeros((d2, d2)), eye
    elif kind == "antithetic":
        rho, res = -eye, np.zeros((d2, d2))
    elif kind == "minus_plus":
        if d2 % 2:
            raise ValueError("minus_plus agent needs an even number of drivers")
        rho, res = np.diag(np.tile([-1.0, 1.0], d2 // 2)), np.zeros((d2, d2))
    elif kind == "identity":
        rho, res = eye, np.zeros((d2, d2))
    else:
        raise ValueError(f"unknown reference agent {kind!r}")
    return ConstantAgent(kind, MaterializedAction(rho, res, diag=np.diagonal(rho).copy()))


def constant_agent(rho, name: str = "constant") -> ConstantAgent:
    """Agent with a fixed symmetric ``rho`` (``|eig| <= 1``)."""
    rho = np.atleast_2d(np.asarray(rho, dtype=np.float64))
    m = np.eye(rho.shape[0]) - rho @ rho.T
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    if w[0] < -1e-12:
        raise ValueError("rho rho^T <= I violated")
    res = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return ConstantAgent(name, MaterializedAction(rho, res, diag=np.diagonal(rho).copy()))


# -- checkpoints ---------------------------------------------------------------

MAGIC = b"CMCP"
CKPT_VERSION = 1


def save_checkpoint(params: PolicyParams, path) -> None:
    """Little-endian header then float64 weights/biases per layer, row-major."""
    dims = params.dims
    header = struct.pack("<4sIIIII", MAGIC, CKPT_VERSION, KINDS.index(params.kind),
                         params.d1, params.d2, len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                    for pair in zip(params.weights, params.biases) for a in pair)
    with open(path, "wb") as fh:
        fh.write(header + body)


def load_checkpoint(path) -> PolicyParams:
    with open(path, "rb") as fh:
        data = fh.read()
    magic, version, kind, d1, d2, nd = struct.unpack_from("<4sIIIII", data, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a policy checkpoint")
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = struct.calcsize("<4sIIIII")
    dims = struct.unpack_from(f"<{nd}I", data, off)
    off += 4 * nd
    ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(data, "<f8", fan_in * fan_out, off).reshape(fan_in, fan_out)
        off += 8 * w.size
        b = np.frombuffer(data, "<f8", fan_out, off)
        off += 8 * b.size
        ws.append(w.astype(np.float64))
        bs.append(b.astype(np.float64))
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return PolicyParams(KINDS[kind], d1, d2, ws, bs)
