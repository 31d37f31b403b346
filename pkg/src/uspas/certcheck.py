"""Sampling-based stability verdicts for balls.

Checks uniform stability (US), uniform attractivity (UA), their conjunction
(UAS), uniform boundedness (UB), semiglobal-practical schedules (USPAS),
and parameter D-set estimation, all by integrating seeded trajectory
ensembles and fitting comparison-function witnesses over them.

Verdicts are explicitly empirical: ``holds=True`` means "not falsified on
the sampled data and a dominating witness was fitted", never a proof.
Every verdict records its sample counts, seed, and probed initial times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import compfn
from .compfn import fit_K_envelope, fit_L_envelope, kl_from_US_UA
from .errors import StabilityAtZeroError
from .sysmodel import (
    EnsembleResult,
    ParameterizedSystem,
    SphereShellSampler,
    default_t0_grid,
    ensemble,
    geometric_radii,
)

# US anchoring test: the fitted envelope at the smallest sampled radius must
# stay below ANCHOR_FACTOR * radius + delta, otherwise sampling cannot rule
# out instability at the origin.
ANCHOR_FACTOR = 3.0


@dataclass(frozen=True)
class BallPair:
    """Target ball of radius delta inside the startup ball of radius Delta."""

    delta: float
    Delta: float

    def __post_init__(self):
        if self.delta < 0 or not self.Delta > self.delta:
            raise ValueError("need Delta > delta >= 0")

    @property
    def is_global(self):
        return math.isinf(self.Delta)


def set_distance(x, delta: float):
    """Distance from x to the ball of radius delta: max(||x|| - delta, 0).

    Accepts a single vector or an array of row vectors.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    x = np.asarray(x, dtype=float)
    norms = np.linalg.norm(x, axis=-1) if x.ndim > 1 else np.linalg.norm(x)
    return np.maximum(norms - delta, 0.0)


@dataclass
class StabilityVerdict:
    """Outcome of one empirical check.

    ``holds=True`` implies dominating witnesses are present; ``holds=False``
    implies a counterexample record is present.
    """

    prop: str
    holds: bool
    status: str
    witnesses: dict = field(default_factory=dict)
    counterexample: dict | None = None
    meta: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        rec = {"property": self.prop, "holds": self.holds, "status": self.status,
               "meta": _jsonable(self.meta)}
        rec["witnesses"] = {k: v.to_record() for k, v in self.witnesses.items()
                            if hasattr(v, "to_record")}
        rec["witnesses"].update({k: _jsonable(v) for k, v in self.witnesses.items()
                                 if not hasattr(v, "to_record")})
        rec["counterexample"] = _jsonable(self.counterexample)
        return rec


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)  # strict JSON has no Infinity/NaN literals
    return obj


@dataclass(frozen=True)
class SamplingPlan:
    """How initial conditions are drawn for a check.

    Radii default to a geometric ladder from Delta/100 to Delta (8 shells,
    20 directions each) and t0 probes to {0, T/3, 2T/3, T, 10T}. The paper
    quantifies over all t0 >= 0; sampling cannot exhaust that, so verdicts
    report the probed set. A global check (Delta = inf) must set radii
    explicitly.
    """

    n_directions: int = 20
    n_radii: int = 8
    radii: tuple | None = None
    t0_grid: tuple | None = None
    seed: int = 0

    def make_sampler(self, dim: int, Delta: float, T: float) -> SphereShellSampler:
        radii = self.radii
        if radii is None:
            if math.isinf(Delta):
                raise ValueError("global check (Delta = inf) needs explicit radii")
            radii = geometric_radii(Delta, self.n_radii)
        t0_grid = self.t0_grid if self.t0_grid is not None else default_t0_grid(T)
        return SphereShellSampler(dim, tuple(radii), tuple(t0_grid),
                                  self.n_directions, self.seed)


def _run_ensemble(sys, theta, balls, T, plan, method, method_kw) -> EnsembleResult:
    sampler = plan.make_sampler(sys.n, balls.Delta, T)
    return ensemble(sys, sampler.samples(), theta, T, method=method, **method_kw)


def _failure_counterexample(failure):
    return {"t0": failure["t0"], "x0": failure["x0"], "t": failure["t"],
            "margin": math.inf, "kind": failure["kind"]}


def _base_meta(result: EnsembleResult, balls, plan, T):
    return {"samples": len(result.samples), "failed": len(result.failures),
            "seed": plan.seed, "t0_probes": sorted({t0 for t0, _ in result.samples}),
            "delta": balls.delta, "Delta": balls.Delta, "T": T,
            "empirical": True}


def evaluate_US(result: EnsembleResult, balls: BallPair, plan: SamplingPlan,
                T: float) -> StabilityVerdict:
    """Fit a stability witness over an already-integrated ensemble."""
    meta = _base_meta(result, balls, plan, T)
    if result.failures:
        return StabilityVerdict("US", False, "diverged", {},
                                _failure_counterexample(result.failures[0]), meta)
    pairs = []
    sups = []
    for tr in result.trajectories:
        sup = float(np.max(set_distance(tr.states, balls.delta)))
        pairs.append((float(np.linalg.norm(tr.x0)), sup))
        sups.append(sup)
    try:
        eta = fit_K_envelope(pairs)
    except StabilityAtZeroError as err:
        worst = int(np.argmax(sups))
        tr = result.trajectories[worst]
        return StabilityVerdict("US", False, f"anchor-failed: {err}", {},
                                {"t0": tr.t0, "x0": tr.x0, "t": tr.t0,
                                 "margin": sups[worst]}, meta)
    r_min = min(s for s, _ in pairs)
    anchor_limit = ANCHOR_FACTOR * r_min + balls.delta
    if eta.eval(r_min) > anchor_limit:
        worst = int(np.argmax([v for s, v in pairs if s == r_min]))
        small = [tr for tr in result.trajectories
                 if abs(np.linalg.norm(tr.x0) - r_min) < 1e-12]
        tr = small[worst] if small else result.trajectories[0]
        k = int(np.argmax(set_distance(tr.states, balls.delta)))
        return StabilityVerdict(
            "US", False, "inconclusive-unstable", {},
            {"t0": tr.t0, "x0": tr.x0, "t": float(tr.times[k]),
             "margin": float(eta.eval(r_min) - anchor_limit)}, meta)
    return StabilityVerdict("US", True, "not-falsified", {"eta": eta}, None, meta)


def restrict_ensemble(result: EnsembleResult, Delta: float) -> EnsembleResult:
    """Sub-ensemble of samples starting inside the Delta-ball.

    Lets stored trajectories be re-scored for a smaller ball pair without
    re-integration.
    """
    keep = [i for i, (_, x0) in enumerate(result.samples)
            if np.linalg.norm(x0) <= Delta * (1 + 1e-12)]
    return EnsembleResult(
        samples=[result.samples[i] for i in keep],
        trajectories=[result.trajectories[i] for i in keep],
        failures=[f for f in result.failures if f["index"] in set(keep)],
        meta=result.meta)


def evaluate_UA(result: EnsembleResult, balls: BallPair, plan: SamplingPlan,
                T: float, tail_tol: float | None = None) -> StabilityVerdict:
    """Fit an attractivity witness over an already-integrated ensemble."""
    if tail_tol is None:
        if balls.is_global:
            raise ValueError("global check (Delta = inf) needs explicit tail_tol")
        tail_tol = 1e-3 * balls.Delta
    meta = _base_meta(result, balls, plan, T)
    meta["tail_tol"] = tail_tol
    if result.failures:
        return StabilityVerdict("UA", False, "diverged", {},
                                _failure_counterexample(result.failures[0]), meta)
    pts = []
    for tr in result.trajectories:
        vals = set_distance(tr.states, balls.delta)
        pts.append(np.column_stack([tr.elapsed(), vals]))
    sigma = fit_L_envelope(np.vstack(pts))
    tail = sigma.tail_value()
    if tail > tail_tol:
        worst_tr, worst_k, worst_v = None, 0, -1.0
        for tr in result.trajectories:
            vals = set_distance(tr.states, balls.delta)
            if vals[-1] > worst_v:
                worst_tr, worst_k, worst_v = tr, len(vals) - 1, float(vals[-1])
        return StabilityVerdict(
            "UA", False, "tail-above-tolerance", {"sigma": sigma},
            {"t0": worst_tr.t0, "x0": worst_tr.x0,
             "t": float(worst_tr.times[worst_k]), "margin": tail - tail_tol},
            meta)
    return StabilityVerdict("UA", True, "not-falsified", {"sigma": sigma},
                            None, meta)


def evaluate_UAS(result: EnsembleResult, balls: BallPair, plan: SamplingPlan,
                 T: float, tail_tol: float | None = None) -> StabilityVerdict:
    """US and UA over one stored ensemble, with the witnesses merged into a
    KL bound whose domination of the samples is re-verified pointwise."""
    us = evaluate_US(result, balls, plan, T)
    ua = evaluate_UA(result, balls, plan, T, tail_tol)
    meta = _base_meta(result, balls, plan, T)
    meta["us_status"] = us.status
    meta["ua_status"] = ua.status
    if not us.holds:
        return StabilityVerdict("UAS", False, f"US failed: {us.status}",
                                {}, us.counterexample, meta)
    if not ua.holds:
        return StabilityVerdict("UAS", False, f"UA failed: {ua.status}",
                                ua.witnesses, ua.counterexample, meta)
    beta = kl_from_US_UA(us.witnesses["eta"], ua.witnesses["sigma"])
    max_margin = -math.inf
    for tr in result.trajectories:
        vals = set_distance(tr.states, balls.delta)
        bound = beta(np.linalg.norm(tr.x0), tr.elapsed())
        max_margin = max(max_margin, float(np.max(vals - bound)))
    meta["kl_max_margin"] = max_margin
    if max_margin > 0:
        return StabilityVerdict("UAS", False, "kl-domination-failed", {},
                                {"t0": None, "x0": None, "t": None,
                                 "margin": max_margin}, meta)
    witnesses = {"eta": us.witnesses["eta"], "sigma": ua.witnesses["sigma"],
                 "beta": beta}
    return StabilityVerdict("UAS", True, "not-falsified", witnesses, None, meta)


def check_US(sys: ParameterizedSystem, theta, balls: BallPair, T: float,
             plan: SamplingPlan = SamplingPlan(), method: str = "rk45",
             **method_kw) -> StabilityVerdict:
    """Empirical uniform stability of the delta-ball on the Delta-ball."""
    result = _run_ensemble(sys, theta, balls, T, plan, method, method_kw)
    return evaluate_US(result, balls, plan, T)


def check_UA(sys: ParameterizedSystem, theta, balls: BallPair, T: float,
             plan: SamplingPlan = SamplingPlan(), tail_tol: float | None = None,
             method: str = "rk45", **method_kw) -> StabilityVerdict:
    """Empirical uniform attractivity of the delta-ball on the Delta-ball."""
    result = _run_ensemble(sys, theta, balls, T, plan, method, method_kw)
    return evaluate_UA(result, balls, plan, T, tail_tol)


def check_UAS(sys: ParameterizedSystem, theta, balls: BallPair, T: float,
              plan: SamplingPlan = SamplingPlan(), tail_tol: float | None = None,
              method: str = "rk45", **method_kw) -> StabilityVerdict:
    """Empirical uniform asymptotic stability (US and UA) of a ball.

    Integrates the ensemble once and evaluates both sub-properties on it.
    """
    result = _run_ensemble(sys, theta, balls, T, plan, method, method_kw)
    return evaluate_UAS(result, balls, plan, T, tail_tol)


def check_UB(sys: ParameterizedSystem, theta, A_radius: float, T: float,
             plan: SamplingPlan = SamplingPlan(), method: str = "rk45",
             **method_kw) -> StabilityVerdict:
    """Uniform boundedness on the ball of radius A_radius.

    Fits ||x(t)|| <= gamma(||x0||) + mu with mu the envelope value at the
    smallest sampled radius.
    """
    balls = BallPair(0.0, A_radius)
    result = _run_ensemble(sys, theta, balls, T, plan, method, method_kw)
    meta = _base_meta(result, balls, plan, T)
    if result.failures:
        return StabilityVerdict("UB", False, "diverged", {},
                                _failure_counterexample(result.failures[0]), meta)
    pairs = np.array([[np.linalg.norm(tr.x0), float(np.max(tr.norms()))]
                      for tr in result.trajectories])
    r_min = pairs[:, 0].min()
    mu = float(pairs[pairs[:, 0] == r_min, 1].max())
    gamma = fit_K_envelope(np.column_stack([pairs[:, 0],
                                            np.maximum(pairs[:, 1] - mu, 0.0)]))
    meta["mu"] = mu
    return StabilityVerdict("UB", True, "not-falsified",
                            {"gamma": gamma, "mu": mu}, None, meta)


def estimate_dset(sys: ParameterizedSystem, balls: BallPair, param_grid,
                  T: float, plan: SamplingPlan = SamplingPlan(),
                  tail_tol: float | None = None, method: str = "rk45",
                  **method_kw) -> list:
    """Run check_UAS per parameter; the passing subset inner-approximates
    the D-set intersected with the grid."""
    param_grid = list(param_grid)
    if not param_grid:
        raise ValueError("parameter grid is empty")
    out = []
    for theta in param_grid:
        out.append((np.asarray(theta, dtype=float),
                    check_UAS(sys, theta, balls, T, plan, tail_tol, method,
                              **method_kw)))
    return out


def dset_passing(results) -> list:
    return [theta for theta, verdict in results if verdict.holds]


def check_USPAS(sys: ParameterizedSystem, param_oracle, ball_schedule,
                T: float, plan: SamplingPlan = SamplingPlan(),
                tail_tol: float | None = None, param_validator=None,
                method: str = "rk45", **method_kw) -> StabilityVerdict:
    """Semiglobal-practical schedule check.

    For each ball pair in the schedule (delta decreasing, Delta increasing)
    the oracle supplies a tuning parameter, and UAS of the pair is checked
    for it; the verdict records the full (delta, Delta, theta) table, which
    is the operational meaning of "for any target pair there is a tuning".
    """
    table = []
    all_hold = True
    first_counterexample = None
    for balls in ball_schedule:
        theta = np.asarray(param_oracle(balls.delta, balls.Delta), dtype=float)
        if param_validator is not None and not param_validator(theta):
            raise ValueError(f"oracle returned a parameter outside the declared "
                             f"set: {theta}")
        verdict = check_UAS(sys, theta, balls, T, plan, tail_tol, method,
                            **method_kw)
        table.append({"delta": balls.delta, "Delta": balls.Delta,
                      "theta": theta, "holds": verdict.holds,
                      "status": verdict.status})
        if not verdict.holds and first_counterexample is None:
            first_counterexample = verdict.counterexample
            all_hold = False
    meta = {"table": table, "seed": plan.seed, "T": T, "empirical": True}
    status = "not-falsified" if all_hold else "schedule-entry-falsified"
    return StabilityVerdict("USPAS", all_hold, status,
                            {"schedule": table} if all_hold else {},
                            first_counterexample, meta)
