"""Command-line driver: ``train``, ``eval``, ``table`` and ``check``.

Exit codes: 0 success, 1 configuration error, 2 oracle check failure,
3 numeric failure (non-finite state or gradient).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

from . import config as cfgmod
from .errors import ConfigError, NumericError
from .oracle import ALL_CHECKS, run_checks
from .policy import load_checkpoint, reference_agent, save_checkpoint
from .trainer import evaluate_variance, train, trajectory_dump

log = logging.getLogger("coupledmc")

SCHEMAS = {"history.csv": "history/v1", "trajectories.csv": "trajectories/v1",
           "table.csv": "table/v1", "run.json": "run/v1"}
HISTORY_FIELDS = ["epoch", "eval_variance", "eval_mean", "train_seconds"]

# (label, preset for the model/payoff, minus-plus defined, diag preset, ortho preset)
TABLE_ROWS = [
    ("Black-Scholes d1=1", "bs_d1_diag", False, "bs_d1_diag", None),
    ("Heston d1'=1", "heston_d1_diag", True, "heston_d1_diag", "heston_d1_ortho"),
    ("Black-Scholes d1=2", "bs_d2_diag", True, "bs_d2_diag", "bs_d2_ortho"),
    ("Black-Scholes d1=5", "bs_d5_diag", False, "bs_d5_diag", "bs_d5_ortho"),
]
TABLE_COLUMNS = ["model", "baseline", "antithetic", "minus_plus", "diag", "ortho"]
NA = "—"


def _load(args) -> dict:
    if getattr(args, "preset", None):
        return cfgmod.load_preset(args.preset)
    if getattr(args, "config", None):
        return cfgmod.load_config(args.config)
    raise ConfigError("one of --config or --preset is required")


def _out_dir(args, cfg: dict | None = None) -> Path:
    out = Path(args.out or (cfg["output"]["directory"] if cfg else "runs"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc: dict):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, fields, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def _thread_limit():
    n = os.environ.get("COUPLEDMC_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(int(n))


def train_run(cfg: dict, out: Path, seed: int | None = None):
    """Train from a resolved config and write history, checkpoint and run report."""
    if seed is not None:
        cfg["training"]["seed"] = int(seed)
    tc = cfgmod.train_config(cfg)
    t0 = time.perf_counter()
    params, history = train(tc)
    wall = time.perf_counter() - t0
    _write_csv(out / "history.csv", HISTORY_FIELDS, [vars(r) for r in history])
    save_checkpoint(params, out / "policy.ckpt")
    ev = cfg["evaluation"]
    report = evaluate_variance(params, tc.model, tc.payoff, int(ev["n_paths"]), int(ev["seed"]))
    _write_json(out / "run.json", {
        "format": cfgmod.RUN_MARKER, "schemas": SCHEMAS, "command": "train",
        "config": cfg, "seed": tc.seed,
        "final_epoch": vars(history[-1]), "evaluation": report.to_dict(),
        "wall_seconds": wall,
    })
    return params, history, report


def cmd_train(args) -> int:
    cfg = _load(args)
    if args.epochs is not None:
        cfg["training"]["epochs"] = args.epochs
        cfg = cfgmod.resolve(cfg)
    out = _out_dir(args, cfg)
    _, history, report = train_run(cfg, out, args.seed)
    print(f"final eval variance {history[-1].eval_variance:.6e}; "
          f"{report.n_paths}-path variance {report.estimator.variance:.6e}; wrote {out}")
    return 0


def _agent_for(args, cfg, model):
    if args.checkpoint:
        params = load_checkpoint(args.checkpoint)
        want = [2 * model.d1 + 1, *cfg["policy"]["hidden"]]
        if params.dims[:-1] != want or params.d2 != model.d2 \
                or params.kind != cfg["policy"]["parametrization"]:
            raise ConfigError(f"checkpoint architecture {params.kind} {params.dims} does not "
                              f"match config {cfg['policy']['parametrization']} "
                              f"{want + ['*']} with d2={model.d2}")
        return params
    return reference_agent(args.agent, model.d2)


def cmd_eval(args) -> int:
    cfg = _load(args)
    if args.seed is not None:
        cfg["evaluation"]["seed"] = int(args.seed)
    if args.n_paths is not None:
        cfg["evaluation"]["n_paths"] = int(args.n_paths)
    out = _out_dir(args, cfg)
    model, payoff = cfgmod.build_model(cfg), cfgmod.build_payoff(cfg)
    try:
        agent = _agent_for(args, cfg, model)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    ev = cfg["evaluation"]
    report = evaluate_variance(agent, model, payoff, int(ev["n_paths"]), int(ev["seed"]))
    rows = trajectory_dump(agent, model, int(ev["dump_trajectories"]), int(ev["seed"]))
    fields = list(rows[0].keys())
    _write_csv(out / "trajectories.csv", fields, rows)
    _write_json(out / "eval.json", {
        "format": cfgmod.RUN_MARKER, "schemas": SCHEMAS, "command": "eval",
        "config": cfg, "seed": int(ev["seed"]),
        "checkpoint": args.checkpoint, "evaluation": report.to_dict(),
    })
    print(f"{report.agent}: variance {report.estimator.variance:.6e} "
          f"mean {report.estimator.mean:.6f} (vanilla variance {report.vanilla.variance:.6e})")
    return 0


def _preset(name: str, config_dir: Path | None) -> dict:
    if config_dir is not None and (config_dir / f"{name}.yaml").is_file():
        return cfgmod.load_config(config_dir / f"{name}.yaml")
    return cfgmod.load_preset(name)


def build_table(n_paths: int, policy_paths: int, seed: int, runs: Path | None,
                config_dir: Path | None = None, train_missing: bool = False):
    """Variance (x100) of every reference/trained agent per model row."""
    rows, details = [], []
    for label, base, has_mp, diag, ortho in TABLE_ROWS:
        cfg = _preset(base, config_dir)
        model, payoff = cfgmod.build_model(cfg), cfgmod.build_payoff(cfg)
        row = {"model": label}
        agents = ["baseline", "antithetic"] + (["minus_plus"] if has_mp else [])
        for name in agents:
            rep = evaluate_variance(reference_agent(name, model.d2), model, payoff, n_paths, seed,
                                    vanilla=False)
            row[name] = rep.estimator.variance * 100
            details.append({"row": label, "agent": name, "report": rep.to_dict()})
        if not has_mp:
            row["minus_plus"] = NA
        for col, preset in (("diag", diag), ("ortho", ortho)):
            if preset is None:
                row[col] = NA
                continue
            ckpt = runs / preset / "policy.ckpt" if runs is not None else None
            if ckpt is None or not ckpt.is_file():
                if not train_missing or runs is None:
                    row[col] = "untrained"
                    continue
                (runs / preset).mkdir(parents=True, exist_ok=True)
                train_run(_preset(preset, config_dir), runs / preset)
            params = load_checkpoint(ckpt)
            rep = evaluate_variance(params, model, payoff, policy_paths, seed, vanilla=False)
            row[col] = rep.estimator.variance * 100
            details.append({"row": label, "agent": col, "checkpoint": str(ckpt),
                            "report": rep.to_dict()})
        rows.append(row)
    return rows, details


def cmd_table(args) -> int:
    out = _out_dir(args)
    config_dir = Path(args.config) if args.config else None
    if config_dir is not None and not config_dir.is_dir():
        raise ConfigError(f"--config for table must be a directory of presets: {config_dir}")
    runs = Path(args.runs) if args.runs else None
    seed = 12345 if args.seed is None else args.seed
    rows, details = build_table(args.n_paths, args.policy_paths, seed, runs, config_dir,
                                args.train)
    fmt = [{k: (f"{v:.5f}" if isinstance(v, float) else v) for k, v in r.items()} for r in rows]
    _write_csv(out / "table.csv", TABLE_COLUMNS, fmt)
    _write_json(out / "table.json", {"schemas": SCHEMAS, "command": "table", "seed": seed,
                                     "n_paths": args.n_paths, "policy_paths": args.policy_paths,
                                     "scale": 100, "rows": rows, "details": details})
    width = max(len(c) for c in TABLE_COLUMNS) + 2
    print("".join(c.ljust(20 if i == 0 else width) for i, c in enumerate(TABLE_COLUMNS)))
    for r in fmt:
        print("".join(str(r[c]).ljust(20 if i == 0 else width)
                      for i, c in enumerate(TABLE_COLUMNS)))
    return 0


def cmd_check(args) -> int:
    names = args.only or None
    if args.config:
        doc = cfgmod.parse_document(Path(args.config).read_text(), args.config)
        names = doc.get("checks", names)
    if names:
        bad = set(names) - set(ALL_CHECKS)
        if bad:
            raise ConfigError(f"unknown check(s): {', '.join(sorted(bad))}")
    results = run_checks(args.seed, names)
    doc = {"seed": args.seed, "passed": all(r.passed for r in results),
           "checks": [r.to_dict() for r in results]}
    if args.out:
        out = _out_dir(args)
        _write_json(out / "check.json", doc)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coupledmc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_help="experiment config (YAML/JSON, or a run.json)"):
        sp.add_argument("--config", help=config_help)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")

    t = sub.add_parser("train", help="train a correlation policy")
    common(t)
    t.add_argument("--preset", choices=cfgmod.preset_names())
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint or reference agent")
    common(e)
    e.add_argument("--preset", choices=cfgmod.preset_names())
    g = e.add_mutually_exclusive_group(required=True)
    g.add_argument("--checkpoint")
    g.add_argument("--agent", choices=["baseline", "antithetic", "minus_plus", "identity"])
    e.add_argument("--n-paths", type=int)
    e.set_defaults(func=cmd_eval)

    tb = sub.add_parser("table", help="variance table over all reference and trained agents")
    common(tb, "directory of preset overrides (<preset>.yaml)")
    tb.add_argument("--runs", help="directory holding <preset>/policy.ckpt")
    tb.add_argument("--train", action="store_true", help="train presets with no checkpoint")
    tb.add_argument("--n-paths", type=int, default=10 ** 6)
    tb.add_argument("--policy-paths", type=int, default=2 * 10 ** 5)
    tb.set_defaults(func=cmd_table)

    c = sub.add_parser("check", help="run the oracle suite")
    common(c, "YAML/JSON file with a 'checks' list")
    c.add_argument("--only", nargs="+", choices=sorted(ALL_CHECKS))
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
