"""Command-line entry point.

Four subcommands: check (built-in verification suites), train (one run,
either trainer), experiment (the fig1/fig2 studies), solve (closed-form
squared-nuclear-norm solver).  Every data-producing command writes a
RunManifest next to its outputs; feeding that manifest back through
--config replays the run with byte-identical CSVs.

Exit codes: 0 success, 1 verification or numerical failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, figures, selfcheck
from .core import (
    AdaptiveRate,
    CapacityError,
    ContractError,
    DimensionError,
    DropoutConfig,
    FixedRate,
    NumericalError,
    ParameterError,
)
from .experiments import (
    SynthSpec,
    TrainBudget,
    desk_equivalence_setup,
    desk_spectrum_setup,
    gen_synthetic,
    paper_equivalence_setup,
    paper_spectrum_setup,
    run_equivalence_study,
    run_spectrum_study,
    write_equivalence_csvs,
    write_spectrum_csvs,
)
from .manifest import RunManifest, is_manifest
from .solvers import nuclear_squared_solve, svd
from .trainers import train_deterministic, train_stochastic

CONFIG_ERRORS = (ParameterError, ContractError, DimensionError, CapacityError)


# ---------------------------------------------------------------- matrix io

def read_matrix_csv(path) -> np.ndarray:
    """Headerless CSV of reals; parse failures report row and column."""
    rows = []
    width = None
    with open(path, newline="") as fh:
        for ri, record in enumerate(csv.reader(fh), start=1):
            if not record or (len(record) == 1 and record[0].strip() == ""):
                continue
            vals = []
            for ci, tok in enumerate(record, start=1):
                try:
                    vals.append(float(tok))
                except ValueError:
                    raise ContractError(
                        f"{path}: row {ri}, column {ci}: {tok.strip()!r} is not a real number")
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ContractError(
                    f"{path}: row {ri} has {len(vals)} values, expected {width}")
            rows.append(vals)
    if not rows:
        raise ContractError(f"{path}: no numeric rows found")
    return np.array(rows, dtype=float)


def write_matrix_csv(path, X) -> None:
    with open(path, "w", newline="") as fh:
        for row in np.asarray(X, dtype=float):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


# ------------------------------------------------------------ config loading

def load_config_payload(path, expected_command: str) -> dict:
    """Read a JSON config; unwrap a RunManifest when one is supplied."""
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ContractError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")
    if not isinstance(payload, dict):
        raise ContractError(f"{path}: top-level JSON value must be an object")
    if is_manifest(payload):
        command = payload.get("command")
        if command != expected_command:
            raise ContractError(
                f"{path}: manifest was produced by {command!r}, not {expected_command!r}")
        resolved = payload["resolved_config"]
        if not isinstance(resolved, dict):
            raise ContractError(f"{path}: manifest resolved_config must be an object")
        return resolved
    return payload


def _take(cfg: dict, key, kind, *, required=True, default=None):
    if key not in cfg or cfg[key] is None:
        if required:
            raise ParameterError(f"config key {key!r} is required")
        return default
    val = cfg[key]
    try:
        if kind is int:
            if isinstance(val, bool) or int(val) != val:
                raise ValueError
            return int(val)
        if kind is float:
            return float(val)
        if kind is list:
            if not isinstance(val, list) or not val:
                raise ValueError
            return list(val)
    except (TypeError, ValueError):
        pass
    raise ParameterError(f"config key {key!r}: expected {kind.__name__}, got {val!r}")


def _reject_unknown(cfg: dict, allowed) -> None:
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise ParameterError(f"unknown config keys: {', '.join(unknown)}")


# ------------------------------------------------------------------- check

def cmd_check(args) -> int:
    results = selfcheck.run_all(inject_fault=args.inject_fault, seed=args.seed)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name}: {status} (max error {r.max_error:.3e}, tol {r.tolerance:g}, "
              f"{r.cases} cases)")
        failed += not r.passed
    if failed:
        print(f"{failed} of {len(results)} suites failed")
        return 1
    print(f"all {len(results)} suites passed")
    return 0


# ------------------------------------------------------------------- train

TRAIN_KEYS = ("m", "n", "true_d", "factor_std", "noise_std", "seed", "d",
              "theta", "theta_bar", "iterations", "step0", "step_tau", "mode")


def resolve_train_config(payload: dict) -> dict:
    _reject_unknown(payload, TRAIN_KEYS)
    out = {
        "m": _take(payload, "m", int),
        "n": _take(payload, "n", int),
        "true_d": _take(payload, "true_d", int),
        "factor_std": _take(payload, "factor_std", float, required=False, default=0.1),
        "noise_std": _take(payload, "noise_std", float, required=False, default=0.0),
        "seed": _take(payload, "seed", int, required=False, default=0),
        "d": _take(payload, "d", int),
        "iterations": _take(payload, "iterations", int, required=False, default=10000),
        "step0": _take(payload, "step0", float, required=False),
        "step_tau": _take(payload, "step_tau", float, required=False, default=1000.0),
        "mode": payload.get("mode", "stochastic"),
    }
    theta = _take(payload, "theta", float, required=False)
    theta_bar = _take(payload, "theta_bar", float, required=False)
    if (theta is None) == (theta_bar is None):
        raise ParameterError("config must set exactly one of 'theta' or 'theta_bar'")
    out["theta"] = theta
    out["theta_bar"] = theta_bar
    if out["mode"] not in ("stochastic", "deterministic"):
        raise ParameterError(f"mode must be stochastic or deterministic, got {out['mode']!r}")
    return out


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    resolved = resolve_train_config(load_config_payload(args.config, "train"))
    if args.seed is not None:
        resolved["seed"] = args.seed
    if args.mode is not None:
        resolved["mode"] = args.mode

    spec = SynthSpec(m=resolved["m"], n=resolved["n"], true_d=resolved["true_d"],
                     factor_std=resolved["factor_std"], noise_std=resolved["noise_std"],
                     seed=resolved["seed"])
    X, _ = gen_synthetic(spec)
    d = resolved["d"]
    policy = (FixedRate(resolved["theta"]) if resolved["theta"] is not None
              else AdaptiveRate(resolved["theta_bar"]))
    cfg = DropoutConfig(rate_policy=policy, seed=resolved["seed"],
                        iterations=resolved["iterations"], step0=resolved["step0"],
                        step_tau=resolved["step_tau"])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if resolved["mode"] == "stochastic":
        trace = train_stochastic(X, d, cfg)
    else:
        theta = policy.resolve(d)
        trace = train_deterministic(X, d, (1.0 - theta) / theta, cfg)
    trace_path = out / "trace.csv"
    trace.to_csv(trace_path)
    outputs = ["trace.csv"]
    if not args.no_figures:
        figures.render_trace_figure(trace, out / "trace.png",
                                    title=f"{resolved['mode']} run, d={d}")
        outputs.append("trace.png")

    man = RunManifest(command="train", resolved_config=resolved,
                      seeds={"master": resolved["seed"]}, outputs=outputs,
                      timings={"total_s": time.perf_counter() - t0})
    man.write(out / "manifest.json")
    print(f"wrote {trace_path} ({len(trace)} iterations)")
    return 0


# -------------------------------------------------------------- experiment

FIG1_KEYS = ("experiment", "m", "n", "factor_std", "noise_std", "seed",
             "theta_grid", "d_grid", "iterations", "step0", "step_tau")
FIG2_KEYS = ("experiment", "m", "n", "true_d", "factor_std", "noise_std", "seed",
             "theta_bar", "d_grid", "iterations", "step0", "step_tau")


def _default_experiment_config(name: str, scale: str) -> dict:
    setup = {
        ("fig1", "desk"): desk_equivalence_setup,
        ("fig1", "paper"): paper_equivalence_setup,
        ("fig2", "desk"): desk_spectrum_setup,
        ("fig2", "paper"): paper_spectrum_setup,
    }[(name, scale)]
    if name == "fig1":
        spec, theta_grid, d_grid, budget = setup()
        return {
            "experiment": "fig1", "m": spec.m, "n": spec.n,
            "factor_std": spec.factor_std, "noise_std": spec.noise_std,
            "seed": spec.seed, "theta_grid": theta_grid, "d_grid": d_grid,
            "iterations": budget.iterations, "step0": budget.step0,
            "step_tau": budget.step_tau,
        }
    spec, theta_bar, d_grid, budget = setup()
    return {
        "experiment": "fig2", "m": spec.m, "n": spec.n, "true_d": spec.true_d,
        "factor_std": spec.factor_std, "noise_std": spec.noise_std,
        "seed": spec.seed, "theta_bar": theta_bar, "d_grid": d_grid,
        "iterations": budget.iterations, "step0": budget.step0,
        "step_tau": budget.step_tau,
    }


def resolve_experiment_config(name: str, payload: dict) -> dict:
    got = payload.get("experiment", name)
    if got != name:
        raise ParameterError(f"config is for experiment {got!r}, command asked for {name!r}")
    keys = FIG1_KEYS if name == "fig1" else FIG2_KEYS
    _reject_unknown(payload, keys)
    out = {
        "experiment": name,
        "m": _take(payload, "m", int),
        "n": _take(payload, "n", int),
        "factor_std": _take(payload, "factor_std", float, required=False, default=0.1),
        "noise_std": _take(payload, "noise_std", float, required=False, default=0.0),
        "seed": _take(payload, "seed", int, required=False, default=0),
        "d_grid": [int(d) for d in _take(payload, "d_grid", list)],
        "iterations": _take(payload, "iterations", int),
        "step0": _take(payload, "step0", float, required=False),
        "step_tau": _take(payload, "step_tau", float, required=False, default=1000.0),
    }
    if name == "fig1":
        out["theta_grid"] = [float(t) for t in _take(payload, "theta_grid", list)]
    else:
        out["true_d"] = _take(payload, "true_d", int)
        out["theta_bar"] = _take(payload, "theta_bar", float)
    return out


def cmd_experiment(args) -> int:
    t0 = time.perf_counter()
    if args.config is not None:
        payload = load_config_payload(args.config, "experiment")
    else:
        payload = _default_experiment_config(args.name, args.scale)
    resolved = resolve_experiment_config(args.name, payload)
    if args.seed is not None:
        resolved["seed"] = args.seed

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    budget = TrainBudget(iterations=resolved["iterations"], step0=resolved["step0"],
                         step_tau=resolved["step_tau"], seed=resolved["seed"])
    outputs = []
    if args.name == "fig1":
        spec = SynthSpec(m=resolved["m"], n=resolved["n"], true_d=max(resolved["d_grid"]),
                         factor_std=resolved["factor_std"], noise_std=resolved["noise_std"],
                         seed=resolved["seed"])
        results = run_equivalence_study(spec, resolved["theta_grid"], resolved["d_grid"], budget)
        outputs += [p.name for p in write_equivalence_csvs(results, out)]
        if not args.no_figures:
            figures.render_equivalence_figure(results, out / "fig1.png")
            outputs.append("fig1.png")
    else:
        spec = SynthSpec(m=resolved["m"], n=resolved["n"], true_d=resolved["true_d"],
                         factor_std=resolved["factor_std"], noise_std=resolved["noise_std"],
                         seed=resolved["seed"])
        reports = run_spectrum_study(spec, resolved["theta_bar"], resolved["d_grid"], budget)
        outputs += [p.name for p in write_spectrum_csvs(reports, out)]
        if not args.no_figures:
            figures.render_spectrum_figure(reports, out / "fig2.png")
            outputs.append("fig2.png")

    man = RunManifest(command="experiment", resolved_config=resolved,
                      seeds={"master": resolved["seed"]}, outputs=outputs,
                      timings={"total_s": time.perf_counter() - t0})
    man.write(out / "manifest.json")
    print(f"wrote {len(outputs)} files to {out}")
    return 0


# ------------------------------------------------------------------- solve

def cmd_solve(args) -> int:
    t0 = time.perf_counter()
    if args.config is not None:
        resolved = load_config_payload(args.config, "solve")
        _reject_unknown(resolved, ("input", "lambda", "input_sha256"))
        input_path = resolved["input"]
        lam = _take(resolved, "lambda", float)
        expected_hash = resolved.get("input_sha256")
        if expected_hash is not None and _sha256(input_path) != expected_hash:
            raise ContractError(
                f"{input_path}: content changed since the manifest was written")
    else:
        if args.input is None:
            raise ParameterError("solve requires an input matrix file (or --config manifest)")
        input_path = args.input
        lam = args.lam
        if lam is None:
            raise ParameterError("solve requires --lambda")
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam}")

    X = read_matrix_csv(input_path)
    Y = nuclear_squared_solve(X, lam)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(out / "solution.csv", Y)
    s = svd(Y).singulars
    with open(out / "spectrum.csv", "w", newline="") as fh:
        fh.write("index,sigma\n")
        for i, sigma in enumerate(s, start=1):
            fh.write(f"{i},{float(sigma)!r}\n")

    resolved = {"input": str(Path(input_path).resolve()), "lambda": lam,
                "input_sha256": _sha256(input_path)}
    man = RunManifest(command="solve", resolved_config=resolved,
                      outputs=["solution.csv", "spectrum.csv"],
                      timings={"total_s": time.perf_counter() - t0})
    man.write(out / "manifest.json")
    print(f"wrote {out / 'solution.csv'} and {out / 'spectrum.csv'}")
    return 0


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dropfact",
        description="Dropout-regularized matrix factorization toolkit")
    p.add_argument("--version", action="version", version=f"dropfact {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="run the built-in verification suites")
    c.add_argument("--inject-fault", action="store_true",
                   help="negative control: perturb the penalty by 1e-3 and expect failure")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_check)

    t = sub.add_parser("train", help="run one training job from a JSON config")
    t.add_argument("--config", required=True, help="JSON config or a prior manifest.json")
    t.add_argument("--mode", choices=["stochastic", "deterministic"], default=None)
    t.add_argument("--out", default=".", help="output directory")
    t.add_argument("--seed", type=int, default=None, help="override the config seed")
    t.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("experiment", help="run a full study grid")
    e.add_argument("name", choices=["fig1", "fig2"])
    e.add_argument("--config", default=None, help="JSON config or a prior manifest.json")
    e.add_argument("--scale", choices=["desk", "paper"], default="desk")
    e.add_argument("--out", default=".")
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--no-figures", action="store_true")
    e.set_defaults(func=cmd_experiment)

    s = sub.add_parser("solve", help="closed-form squared-nuclear-norm shrinkage")
    s.add_argument("input", nargs="?", default=None, help="headerless CSV matrix")
    s.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="regularization weight, must be positive")
    s.add_argument("--config", default=None, help="replay a prior manifest.json")
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_solve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
