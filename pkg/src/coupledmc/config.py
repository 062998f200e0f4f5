"""Experiment configuration: YAML/JSON documents, bundled presets, validation.

A config has six sections (``model``, ``payoff``, ``policy``, ``training``,
``evaluation``, ``output``). Unknown keys are rejected with their dotted path.
``resolve`` returns the fully defaulted document that is embedded in every
report, so a report can be fed back as a config.
"""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

import yaml

from .errors import ConfigError
from .models import BasketCall, BlackScholes, Call, Heston, HestonCall, LogSquare
from .trainer import TrainConfig

DEFAULTS = {
    "model": {"kind": "black_scholes", "dim": 1, "T": 1.0, "N": 50},
    "payoff": {"kind": "call", "strike": 1.0},
    "policy": {"parametrization": "diag", "hidden": [64, 64]},
    "training": {"epochs": 100, "train_batch": 512, "eval_batch": 512 * 16,
                 "optimizer": "adam", "lr": None, "betas": [0.9, 0.999],
                 "update": "per_step", "seed": 0},
    "evaluation": {"n_paths": 100000, "seed": 12345, "dump_trajectories": 8},
    "output": {"directory": "runs", "formats": ["csv", "json"]},
}

MODEL_KEYS = {
    "black_scholes": {"kind", "dim", "T", "N", "drift", "vol", "x0"},
    "heston": {"kind", "dim", "T", "N", "mean_reversion", "long_var", "vol_of_vol",
               "rho_sv", "s0", "v0"},
}
PAYOFF_KEYS = {
    "call": {"kind", "strike"},
    "basket_call": {"kind", "strike", "alpha"},
    "log_square": {"kind", "mu", "sigma", "T"},
    "heston_call": {"kind", "strike"},
}
RUN_MARKER = "coupledmc-run"


def preset_names() -> list[str]:
    root = resources.files("coupledmc") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def preset_text(name: str) -> str:
    path = resources.files("coupledmc") / "presets" / f"{name}.yaml"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return path.read_text()


def load_preset(name: str) -> dict:
    return resolve(parse_document(preset_text(name), f"preset:{name}"))


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    return resolve(parse_document(text, str(path)))


def parse_document(text: str, origin: str) -> dict:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{origin}:{where} {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{origin}: top level must be a mapping")
    if doc.get("format") == RUN_MARKER:
        doc = doc.get("config")
        if not isinstance(doc, dict):
            raise ConfigError(f"{origin}: run report has no 'config' section")
    return doc


def resolve(doc: dict) -> dict:
    """Validate ``doc`` and fill every default."""
    unknown = set(doc) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    out = copy.deepcopy(DEFAULTS)
    for sec in DEFAULTS:
        given = doc.get(sec) or {}
        if not isinstance(given, dict):
            raise ConfigError(f"{sec}: must be a mapping")
        if sec in ("model", "payoff"):
            kind = given.get("kind", DEFAULTS[sec]["kind"])
            allowed = (MODEL_KEYS if sec == "model" else PAYOFF_KEYS).get(kind)
            if allowed is None:
                raise ConfigError(f"{sec}.kind: unknown kind {kind!r}")
            if sec == "payoff":
                out[sec] = {"kind": kind}
        else:
            allowed = set(DEFAULTS[sec])
        bad = set(given) - allowed
        if bad:
            raise ConfigError(f"unknown key(s): {', '.join(f'{sec}.{k}' for k in sorted(bad))}")
        out[sec].update(given)
    _fill_model(out["model"])
    _fill_payoff(out["payoff"], out["model"])
    if out["policy"]["parametrization"] not in ("diag", "ortho"):
        raise ConfigError("policy.parametrization: must be 'diag' or 'ortho'")
    # build once so that every value error surfaces here with its section name
    for sec, fn in (("model", build_model), ("payoff", build_payoff)):
        try:
            fn(out)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{sec}: {exc}") from exc
    try:
        train_config(out)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"training: {exc}") from exc
    return out


def _fill_model(m: dict):
    if m["kind"] == "black_scholes":
        m.setdefault("drift", 0.06)
        m.setdefault("vol", 0.3)
        m.setdefault("x0", 1.0)
    else:
        for k, v in (("mean_reversion", 0.5), ("long_var", 0.04), ("vol_of_vol", 0.5),
                     ("rho_sv", -0.7), ("s0", 1.0), ("v0", 0.1)):
            m.setdefault(k, v)


def _fill_payoff(p: dict, m: dict):
    kind = p["kind"]
    if kind in ("call", "heston_call", "basket_call"):
        p.setdefault("strike", 1.0)
    if kind == "basket_call":
        p.setdefault("alpha", 1.0 / m["dim"])
    if kind == "log_square":
        vol = m.get("vol", 0.3)
        vol = vol[0] if isinstance(vol, list) else vol
        drift = m.get("drift", 0.06)
        drift = drift[0] if isinstance(drift, list) else drift
        p.setdefault("sigma", vol)
        p.setdefault("mu", drift - vol * vol / 2)
        p.setdefault("T", m["T"])


def _vec(v, d):
    v = v if isinstance(v, list) else [v]
    if len(v) == 1:
        v = v * d
    if len(v) != d:
        raise ValueError(f"expected {d} entries, got {len(v)}")
    return v


def build_model(cfg: dict):
    m = cfg["model"]
    d = int(m["dim"])
    if d < 1:
        raise ValueError("dim must be >= 1")
    if m["kind"] == "black_scholes":
        return BlackScholes(_vec(m["drift"], d), _vec(m["vol"], d), _vec(m["x0"], d),
                            T=float(m["T"]), N=int(m["N"]))
    return Heston(*(_vec(m[k], d) for k in ("mean_reversion", "long_var", "vol_of_vol",
                                            "rho_sv", "s0", "v0")),
                  T=float(m["T"]), N=int(m["N"]))


def build_payoff(cfg: dict):
    p = cfg["payoff"]
    d = int(cfg["model"]["dim"])
    kind = p["kind"]
    if kind == "call":
        return Call(float(p["strike"]))
    if kind == "basket_call":
        return BasketCall(_vec(p["alpha"], d), _vec(p["strike"], d))
    if kind == "log_square":
        return LogSquare(float(p["mu"]), float(p["sigma"]), float(p["T"]))
    return HestonCall(float(p["strike"]))


def train_config(cfg: dict, seed: int | None = None) -> TrainConfig:
    t = cfg["training"]
    return TrainConfig(
        model=build_model(cfg), payoff=build_payoff(cfg),
        kind=cfg["policy"]["parametrization"], epochs=int(t["epochs"]),
        train_batch=int(t["train_batch"]), eval_batch=int(t["eval_batch"]),
        optimizer=t["optimizer"], lr=None if t["lr"] is None else float(t["lr"]),
        betas=tuple(t["betas"]), seed=int(t["seed"] if seed is None else seed),
        eval_seed=int(cfg["evaluation"]["seed"]), hidden=tuple(cfg["policy"]["hidden"]),
        update=t["update"])


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)
