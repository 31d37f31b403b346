"""Scenario-driven batch front end.

``uspas run scenario.json --out DIR`` parses a scenario file, runs the
requested task (simulation, empirical checks, D-set estimation, schedule
checks, synthesis, validation, or the robot demonstration), and writes
``report.json`` plus plot-ready CSV artifacts into the output directory.

Exit codes: 0 = every asserted property held, 2 = something was falsified,
1 = execution or scenario error. ``--canonical`` omits wall-clock metadata
so a rerun with the same scenario and seed reproduces report.json
byte-identically.

Scenario schema (JSON, ``schema_version: 1``) is documented in the README;
validation errors carry the offending field path.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import pathlib
import sys

import numpy as np

from . import builtins as builtin_registry
from . import robotlab
from .cascade_synth import (
    LyapunovCertificate,
    synthesize_cascade_bound,
    validate_estimate,
)
from .certcheck import (
    BallPair,
    SamplingPlan,
    _jsonable,
    check_UA,
    check_UAS,
    check_UB,
    check_US,
    check_USPAS,
    estimate_dset,
)
from .compfn import GridKL, ProductKL, from_record
from .errors import (
    DegenerateEstimateError,
    DivergenceError,
    ScenarioError,
    UspasError,
)
from .sysmodel import compose_cascade, integrate

SCHEMA_VERSION = 1
SAMPLING_TASKS = {"check-us", "check-ua", "check-uas", "check-ub", "dset",
                  "uspas", "validate", "robot-demo"}


def _req(obj, key, path, types=None):
    if not isinstance(obj, dict) or key not in obj:
        raise ScenarioError(f"{path}.{key}", "required field is missing")
    val = obj[key]
    if types is not None and not isinstance(val, types):
        raise ScenarioError(f"{path}.{key}",
                            f"expected {types}, got {type(val).__name__}")
    return val


def _num(obj, key, path, default=None, positive=False):
    if key not in obj:
        if default is None:
            raise ScenarioError(f"{path}.{key}", "required number is missing")
        return default
    val = obj[key]
    if not isinstance(val, (int, float)) or isinstance(val, bool):
        raise ScenarioError(f"{path}.{key}", "expected a number")
    if positive and val <= 0:
        raise ScenarioError(f"{path}.{key}", "must be positive")
    return float(val)


def _balls(block, path):
    return BallPair(_num(block, "delta", path, positive=False),
                    _num(block, "Delta", path, positive=True))


def _plan(scenario, seed):
    block = scenario.get("sampling", {})
    if not isinstance(block, dict):
        raise ScenarioError("sampling", "expected an object")
    radii = block.get("radii")
    t0_grid = block.get("t0_grid")
    return SamplingPlan(
        n_directions=int(_num(block, "n_directions", "sampling", default=20)),
        n_radii=int(_num(block, "n_radii", "sampling", default=8)),
        radii=tuple(radii) if radii is not None else None,
        t0_grid=tuple(t0_grid) if t0_grid is not None else None,
        seed=seed)


def _method_kw(scenario):
    block = scenario.get("method", {})
    if not isinstance(block, dict):
        raise ScenarioError("method", "expected an object")
    name = block.get("name", "rk45")
    if name == "rk45":
        return {"method": "rk45",
                "rtol": _num(block, "rtol", "method", default=1e-8),
                "atol": _num(block, "atol", "method", default=1e-10)}
    if name == "rk4":
        return {"method": "rk4",
                "h": _num(block, "h", "method", positive=True)}
    raise ScenarioError("method.name", f"unknown integrator {name!r}")


def _kl_from_record(block, path):
    form = _req(block, "form", path, str)
    if form == "product":
        return ProductKL(from_record(_req(block, "eta", path, dict)),
                         rate=_num(block, "rate", path, positive=True),
                         t_shift=_num(block, "t_shift", path, default=0.0))
    if form == "grid":
        return GridKL(_req(block, "s", path, list),
                      _req(block, "t", path, list),
                      _req(block, "values", path, list))
    raise ScenarioError(f"{path}.form", f"unsupported KL form {form!r}")


def _certificate(block, path):
    annulus = _balls(_req(block, "annulus", path, dict), f"{path}.annulus")
    return LyapunovCertificate(
        V=lambda t, x: 0.0,
        alpha_lo=from_record(_req(block, "alpha_lo", path, dict)),
        alpha_hi=from_record(_req(block, "alpha_hi", path, dict)),
        annulus=annulus,
        c_bound=from_record(_req(block, "c_bound", path, dict)),
        decay_k=_num(block, "k", path, positive=True))


def _gamma(block, path):
    kind = _req(block, "kind", path, str)
    if kind == "min_of_Deltas":
        return lambda D1, D2: min(D1, D2)
    if kind == "value":
        val = _num(block, "value", path, positive=True)
        return lambda D1, D2: val
    if kind == "prop_bound":
        alpha_lo = from_record(_req(block, "alpha_lo", path, dict))
        alpha_hi = from_record(_req(block, "alpha_hi", path, dict))
        return lambda D1, D2: alpha_hi.invert(float(alpha_lo.eval(min(D1, D2))))
    raise ScenarioError(f"{path}.kind", f"unknown gamma kind {kind!r}")


def _write_envelope_csv(path, fn, s_max, n=200):
    s = np.linspace(0.0, s_max, n)
    vals = [float(fn.eval(si)) for si in s]
    with open(path, "w") as fh:
        fh.write("s,value\n")
        for si, vi in zip(s, vals):
            fh.write(f"{si!r},{vi!r}\n")


def _write_beta_csv(path, beta, s_max, t_max, n=40):
    with open(path, "w") as fh:
        fh.write("s,t,value\n")
        for si in np.linspace(0.0, s_max, n):
            for ti in np.linspace(0.0, t_max, n):
                fh.write(f"{si!r},{ti!r},{float(beta(si, ti))!r}\n")


def _write_witness_envelopes(verdict, out_dir, s_max, t_max):
    env_dir = out_dir / "envelopes"
    written = []
    for name, fn in verdict.witnesses.items():
        if name in ("eta", "gamma", "sigma"):
            env_dir.mkdir(exist_ok=True)
            target = env_dir / f"{name}.csv"
            _write_envelope_csv(target, fn,
                                s_max if name != "sigma" else t_max)
            written.append(str(target.relative_to(out_dir)))
        elif name == "beta":
            env_dir.mkdir(exist_ok=True)
            target = env_dir / "beta.csv"
            _write_beta_csv(target, fn, s_max, t_max)
            written.append(str(target.relative_to(out_dir)))
    return written


# -- task runners ------------------------------------------------------------


def _task_simulate(scenario, seed, out_dir):
    sys_obj = builtin_registry.build_system(_req(scenario, "system", "", dict))
    if hasattr(sys_obj, "f1"):
        sys_obj = compose_cascade(sys_obj)
    theta = builtin_registry.theta_for(scenario["system"], sys_obj)
    init = _req(scenario, "initial", "", dict)
    x0 = np.asarray(_req(init, "x0", "initial", list), dtype=float)
    t0 = _num(init, "t0", "initial", default=0.0)
    T = _num(scenario, "horizon", "", positive=True)
    kw = _method_kw(scenario)
    try:
        tr = integrate(sys_obj, t0, x0, theta, T, **kw)
    except DivergenceError as err:
        return 2, {"diverged": True,
                   "counterexample": _jsonable({"t": err.t, "state": err.state})}, []
    traj_dir = out_dir / "trajectories"
    traj_dir.mkdir(exist_ok=True)
    tr.to_csv(traj_dir / "traj_000.csv")
    return 0, {"diverged": False, "final_state": _jsonable(tr.states[-1]),
               "final_time": float(tr.times[-1])}, ["trajectories/traj_000.csv"]


def _task_check(scenario, seed, out_dir, task):
    sys_obj = builtin_registry.build_system(_req(scenario, "system", "", dict))
    if hasattr(sys_obj, "f1"):
        sys_obj = compose_cascade(sys_obj)
    theta = builtin_registry.theta_for(scenario["system"], sys_obj)
    T = _num(scenario, "horizon", "", positive=True)
    plan = _plan(scenario, seed)
    kw = _method_kw(scenario)
    if task == "check-ub":
        radius = _num(scenario, "A_radius", "", positive=True)
        verdict = check_UB(sys_obj, theta, radius, T, plan, **kw)
        s_max, t_max = radius, T
    else:
        balls = _balls(_req(scenario, "balls", "", dict), "balls")
        tail_tol = scenario.get("tail_tol")
        runner = {"check-us": check_US, "check-ua": check_UA,
                  "check-uas": check_UAS}[task]
        if task == "check-us":
            verdict = runner(sys_obj, theta, balls, T, plan, **kw)
        else:
            verdict = runner(sys_obj, theta, balls, T, plan, tail_tol, **kw)
        s_max, t_max = balls.Delta, T
    artifacts = _write_witness_envelopes(verdict, out_dir, s_max, t_max)
    return (0 if verdict.holds else 2), {"verdict": verdict.to_record()}, artifacts


def _task_dset(scenario, seed, out_dir):
    sys_obj = builtin_registry.build_system(_req(scenario, "system", "", dict))
    balls = _balls(_req(scenario, "balls", "", dict), "balls")
    grid = _req(scenario, "param_grid", "", list)
    T = _num(scenario, "horizon", "", positive=True)
    plan = _plan(scenario, seed)
    results = estimate_dset(sys_obj, balls, grid, T, plan,
                            scenario.get("tail_tol"), **_method_kw(scenario))
    records = [{"theta": _jsonable(theta), "holds": v.holds,
                "status": v.status} for theta, v in results]
    passing = [r["theta"] for r in records if r["holds"]]
    return 0, {"grid": records, "passing": passing}, []


def _task_uspas(scenario, seed, out_dir):
    sys_obj = builtin_registry.build_system(_req(scenario, "system", "", dict))
    oracle = builtin_registry.build_oracle(_req(scenario, "oracle", "", dict))
    schedule = [_balls(b, f"ball_schedule[{i}]")
                for i, b in enumerate(_req(scenario, "ball_schedule", "", list))]
    T = _num(scenario, "horizon", "", positive=True)
    verdict = check_USPAS(sys_obj, oracle, schedule, T, _plan(scenario, seed),
                          scenario.get("tail_tol"), **_method_kw(scenario))
    return (0 if verdict.holds else 2), {"verdict": verdict.to_record()}, []


def _synthesize_from_scenario(scenario):
    cert = _certificate(_req(scenario, "certificate", "", dict), "certificate")
    beta2 = _kl_from_record(_req(scenario, "beta2", "", dict), "beta2")
    balls2 = _balls(_req(scenario, "balls2", "", dict), "balls2")
    G_of = from_record(_req(scenario, "interconnection_bound", "", dict))
    gamma = _gamma(_req(scenario, "gamma", "", dict), "gamma")
    Delta0 = _num(scenario, "Delta0", "", positive=True)
    return synthesize_cascade_bound(cert, beta2, balls2, G_of, gamma, Delta0)


def _task_synthesize(scenario, seed, out_dir):
    try:
        est = _synthesize_from_scenario(scenario)
    except DegenerateEstimateError as err:
        return 2, {"synthesized": False, "reason": str(err)}, []
    env_dir = out_dir / "envelopes"
    env_dir.mkdir(exist_ok=True)
    _write_envelope_csv(env_dir / "eta.csv", est.eta, est.Delta)
    _write_beta_csv(env_dir / "beta.csv", est.beta, est.Delta,
                    max(4.0 * est.t2, 1.0))
    artifacts = ["envelopes/eta.csv", "envelopes/beta.csv"]
    result = {"synthesized": True, "estimate": est.to_record()}
    code = 0
    if "validate" in scenario:
        code, vrec = _validate_estimate_block(scenario, est, seed)
        result["validation"] = vrec
    return code, result, artifacts


def _validate_estimate_block(scenario, est, seed):
    block = scenario["validate"]
    sys_obj = builtin_registry.build_system(
        _req(scenario, "system", "", dict))
    theta = builtin_registry.theta_for(
        scenario["system"],
        compose_cascade(sys_obj) if hasattr(sys_obj, "f1") else sys_obj)
    verdict = validate_estimate(
        sys_obj, theta, est,
        T=_num(block, "horizon", "validate", positive=True),
        n_samples=int(_num(block, "n_samples", "validate", default=500)),
        seed=seed,
        t0_grid=tuple(block.get("t0_grid", (0.0,))))
    return (0 if verdict.holds else 2), verdict.to_record()


def _task_validate(scenario, seed, out_dir):
    try:
        est = _synthesize_from_scenario(scenario)
    except DegenerateEstimateError as err:
        return 2, {"synthesized": False, "reason": str(err)}, []
    if "validate" not in scenario:
        raise ScenarioError("validate", "required block is missing")
    code, vrec = _validate_estimate_block(scenario, est, seed)
    return code, {"synthesized": True, "estimate": est.to_record(),
                  "validation": vrec}, []


def _task_robot_demo(scenario, seed, out_dir):
    block = scenario.get("demo", {})
    Delta1_list = tuple(block.get("Delta1_list", (1.0, 5.0, 10.0)))
    out = robotlab.semiglobal_demo(
        Delta1_list=Delta1_list,
        n_samples=int(_num(block, "n_samples", "demo", default=200)),
        seed=seed,
        conv_tol=_num(block, "conv_tol", "demo", default=1e-3),
        h=_num(block, "h", "demo", default=1e-3))
    ok = all(rec["fraction_converged"] == 1.0 for rec in out.values())
    return (0 if ok else 2), {"demo": {str(k): _jsonable(v)
                                       for k, v in out.items()}}, []


TASKS = {
    "simulate": _task_simulate,
    "check-us": lambda s, seed, o: _task_check(s, seed, o, "check-us"),
    "check-ua": lambda s, seed, o: _task_check(s, seed, o, "check-ua"),
    "check-uas": lambda s, seed, o: _task_check(s, seed, o, "check-uas"),
    "check-ub": lambda s, seed, o: _task_check(s, seed, o, "check-ub"),
    "dset": _task_dset,
    "uspas": _task_uspas,
    "synthesize": _task_synthesize,
    "validate": _task_validate,
    "robot-demo": _task_robot_demo,
}


def run_scenario(path, out_dir=None, seed_override=None, canonical=False,
                 threads=None):
    """Execute one scenario file; returns (exit_code, report_dict)."""
    path = pathlib.Path(path)
    try:
        scenario = json.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError(str(path), "scenario file not found") from None
    except json.JSONDecodeError as err:
        raise ScenarioError(str(path), f"not valid JSON: {err}") from None
    if not isinstance(scenario, dict):
        raise ScenarioError("", "top level must be an object")
    version = scenario.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError("schema_version",
                            f"expected {SCHEMA_VERSION}, got {version!r}")
    task = _req(scenario, "task", "", str)
    if task not in TASKS:
        raise ScenarioError("task", f"unknown task {task!r}; available: "
                                    f"{sorted(TASKS)}")
    seed = seed_override if seed_override is not None else scenario.get("seed")
    if seed is None and task in SAMPLING_TASKS:
        raise ScenarioError("seed", "sampling tasks need a seed (field or "
                                    "--seed)")
    seed = int(seed) if seed is not None else 0

    out_dir = pathlib.Path(out_dir) if out_dir else path.parent / "out"
    out_dir.mkdir(parents=True, exist_ok=True)

    code, results, artifacts = TASKS[task](scenario, seed, out_dir)
    report = {
        "schema_version": SCHEMA_VERSION,
        "task": task,
        "seed": seed,
        "scenario": scenario,
        "results": results,
        "artifacts": artifacts,
        "exit_code": code,
        "threads": threads if threads is not None else 1,
    }
    if not canonical:
        report["generated_at"] = datetime.datetime.now(
            datetime.timezone.utc).isoformat()
    (out_dir / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n")
    return code, report


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="uspas",
        description="Simulate cascaded ODE systems and check or synthesize "
                    "ball-stability certificates from scenario files.")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="execute a scenario file")
    run_p.add_argument("scenario", help="path to the scenario JSON file")
    run_p.add_argument("--out", default=None, help="output directory "
                       "(default: <scenario dir>/out)")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
    run_p.add_argument("--threads", type=int,
                       default=int(os.environ.get("USPAS_THREADS", "1")),
                       help="worker budget recorded in the report (execution "
                            "is currently single-threaded)")
    run_p.add_argument("--canonical", action="store_true",
                       help="omit wall-clock metadata for byte-identical "
                            "reruns")
    args = parser.parse_args(argv)

    try:
        code, _ = run_scenario(args.scenario, args.out, args.seed,
                               args.canonical, args.threads)
    except ScenarioError as err:
        print(f"scenario error: {err}", file=sys.stderr)
        return 1
    except UspasError as err:
        print(f"execution error: {err}", file=sys.stderr)
        return 1
    return code


if __name__ == "__main__":
    sys.exit(main())
