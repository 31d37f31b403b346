"""Constructive stability estimates for cascades.

Given an exponential-decrease Lyapunov certificate for the driven
subsystem, a KL bound for the driving subsystem, a bound on the
interconnection gain, and a boundedness radius map, the synthesis pipeline
produces explicit balls (delta, Delta) and a KL trajectory bound for the
full cascade, together with every intermediate constant for audit. The
companion pieces are the certificate transformation to exponential form
(with its invariance guarantee), the comparison-lemma trajectory bound,
the non-positive-derivative boundedness radius, and sampling falsifiers for
the Lyapunov sufficient conditions.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import compfn
from .compfn import (
    ComparisonFunction,
    ComposedFn,
    FormulaFn,
    KLBound,
    MaxKL,
    ProductKL,
)
from .certcheck import BallPair, StabilityVerdict, set_distance
from .errors import (
    DegenerateEstimateError,
    PreconditionError,
    RootFindError,
    TransformError,
)
from .sysmodel import BallSampler, compose_cascade, ensemble


def finite_difference_grad(V, t, x):
    """Central-difference (dV/dt, dV/dx) with step 1e-6 * (1 + |coord|)."""
    x = np.asarray(x, dtype=float)
    ht = 1e-6 * (1.0 + abs(t))
    dvdt = (V(t + ht, x) - V(t - ht, x)) / (2.0 * ht)
    dvdx = np.empty_like(x)
    for i in range(x.size):
        h = 1e-6 * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        dvdx[i] = (V(t, xp) - V(t, xm)) / (2.0 * h)
    return float(dvdt), dvdx


@dataclass
class LyapunovCertificate:
    """V with its sandwich bounds, decrease form, gradient bound, and
    validity annulus.

    ``rate_fn`` holds the decrease -rate_fn(||x||) (rate form);
    ``decay_k`` holds the decrease -decay_k * V (exponential form).
    Exactly one of the two must be set. ``theta_star`` is the parameter for
    which the certificate holds.
    """

    V: object
    alpha_lo: ComparisonFunction
    alpha_hi: ComparisonFunction
    annulus: BallPair
    c_bound: ComparisonFunction | None = None
    rate_fn: ComparisonFunction | None = None
    decay_k: float | None = None
    grad: object | None = None
    theta_star: np.ndarray | None = None

    def __post_init__(self):
        if (self.rate_fn is None) == (self.decay_k is None):
            raise PreconditionError("set exactly one of rate_fn / decay_k")
        if self.decay_k is not None and self.decay_k <= 0:
            raise PreconditionError("exponential decay rate must be positive")
        lo = self.annulus.delta if self.annulus.delta > 0 else self.annulus.Delta / 100.0
        for s in np.linspace(lo, self.annulus.Delta, 17):
            if self.alpha_lo.eval(s) > self.alpha_hi.eval(s) * (1 + 1e-9):
                raise PreconditionError(
                    f"alpha_lo exceeds alpha_hi at s={s:g}; the sandwich bound"
                    " is vacuous")

    @property
    def form(self) -> str:
        return "exponential" if self.decay_k is not None else "rate"

    def grad_at(self, t, x):
        if self.grad is not None:
            dvdt, dvdx = self.grad(t, x)
            return float(dvdt), np.asarray(dvdx, dtype=float)
        return finite_difference_grad(self.V, t, x)

    def vdot(self, sys_rhs, t, x, theta):
        dvdt, dvdx = self.grad_at(t, x)
        return dvdt + float(np.dot(dvdx, sys_rhs(t, x, theta)))


# ---------------------------------------------------------------------------
# Certificate transformation to exponential decrease.


def _adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, depth=40):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
        return left + right + (left + right - whole) / 15.0
    half = 0.5 * tol
    return (_adaptive_simpson(f, a, m, fa, flm, fm, left, half, depth - 1)
            + _adaptive_simpson(f, m, b, fm, frm, fb, right, half, depth - 1))


def _segment_integral(f, a, b, rel_tol):
    fa, fb = f(a), f(b)
    fm = f(0.5 * (a + b))
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    tol = rel_tol * max(abs(whole), 1e-300)
    return _adaptive_simpson(f, a, b, fa, fm, fb, whole, tol)


class ExpGridK(ComparisonFunction):
    """Strictly increasing K-infinity function stored as log-value over
    log-argument nodes (robust to very large dynamic ranges); tends to 0 at
    0 through the extrapolated left tail."""

    kind = "Kinf"

    def __init__(self, q_nodes: np.ndarray, log_vals: np.ndarray):
        self.logq = np.log(q_nodes)
        self.logv = np.asarray(log_vals, dtype=float)
        if np.any(np.diff(self.logq) <= 0) or np.any(np.diff(self.logv) <= 0):
            raise TransformError("transformed-scale nodes must strictly increase")
        self._slope_lo = (self.logv[1] - self.logv[0]) / (self.logq[1] - self.logq[0])
        self._slope_hi = (self.logv[-1] - self.logv[-2]) / (self.logq[-1] - self.logq[-2])

    def _log_eval(self, logq):
        out = np.interp(logq, self.logq, self.logv)
        out = np.where(logq < self.logq[0],
                       self.logv[0] + self._slope_lo * (logq - self.logq[0]), out)
        out = np.where(logq > self.logq[-1],
                       self.logv[-1] + self._slope_hi * (logq - self.logq[-1]), out)
        return out

    def eval(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            out = np.where(s > 0, np.exp(self._log_eval(np.log(np.maximum(s, 1e-300)))), 0.0)
        return out if out.ndim else float(out)

    def invert(self, y):
        y = float(y)
        if y <= 0:
            return 0.0
        logy = math.log(y)
        out = np.interp(logy, self.logv, self.logq)
        if logy < self.logv[0]:
            out = self.logq[0] + (logy - self.logv[0]) / self._slope_lo
        elif logy > self.logv[-1]:
            out = self.logq[-1] + (logy - self.logv[-1]) / self._slope_hi
        return math.exp(out)

    def to_record(self):
        return {"family": "exp_grid_k", "logq": self.logq.tolist(),
                "logv": self.logv.tolist()}


def transform_lyapunov(cert: LyapunovCertificate, k_target: float = 1.0,
                       quad_rel_tol: float = 1e-9, n_nodes: int = 400,
                       invariance_tol: float = 1e-8) -> LyapunovCertificate:
    """Rescale a rate-form certificate into exponential form at ``k_target``.

    Uses the warp rho(s) = exp(int_1^s k_target dq / a(q)) with
    a(q) = rate(alpha_hi^{-1}(q)) (the choice that turns the decrease
    -rate(||x||) into -a(V)), giving Vdot <= -k_target * V for rho o V. The
    sandwich bounds become rho o alpha_lo and rho o alpha_hi, the gradient
    bound picks up the factor k_target * rho(alpha_hi(s)) / a(alpha_lo(delta)),
    and the gap map alpha_lo^{-1} o alpha_hi is preserved exactly; this is
    verified numerically after construction.
    """
    if cert.form != "rate":
        raise PreconditionError("certificate is already in exponential form")
    if k_target <= 0:
        raise PreconditionError("k_target must be positive")
    delta, Delta = cert.annulus.delta, cert.annulus.Delta
    if delta <= 0:
        raise PreconditionError("transformation needs a positive inner radius "
                                "(the gradient-bound constant divides by "
                                "a(alpha_lo(delta)))")

    rate, alpha_hi, alpha_lo = cert.rate_fn, cert.alpha_hi, cert.alpha_lo

    def a_of(q):
        return float(rate.eval(alpha_hi.invert(q)))

    lo = min(alpha_lo.eval(delta) * 1e-3, 1.0)
    hi = max(alpha_hi.eval(Delta), 1.0)
    if not lo > 0:
        raise TransformError("alpha_lo(delta) must be positive")
    q_nodes = np.geomspace(lo, hi, n_nodes)
    q_nodes = np.unique(np.concatenate([q_nodes, [1.0]]))

    def integrand(q):
        aq = a_of(q)
        if aq <= 0:
            raise TransformError(f"decrease rate vanished at V-level {q:g}")
        return k_target / aq

    increments = [_segment_integral(integrand, q_nodes[i], q_nodes[i + 1],
                                    quad_rel_tol)
                  for i in range(len(q_nodes) - 1)]
    I = np.concatenate([[0.0], np.cumsum(increments)])
    I -= np.interp(1.0, q_nodes, I)  # anchor rho(1) = 1
    rho = ExpGridK(q_nodes, I)

    alpha_lo_t = ComposedFn(rho, alpha_lo)
    alpha_hi_t = ComposedFn(rho, alpha_hi)

    a_delta = a_of(float(alpha_lo.eval(delta)))
    c_old = cert.c_bound

    def c_tilde(s):
        s = np.asarray(s, dtype=float)
        base = rho.eval(alpha_hi.eval(s)) * (k_target / a_delta)
        return base * c_old.eval(s) if c_old is not None else base

    V_old = cert.V

    def V_new(t, x):
        return float(rho.eval(V_old(t, x)))

    def grad_new(t, x):
        dvdt, dvdx = cert.grad_at(t, x)
        q = V_old(t, x)
        scale = k_target * float(rho.eval(q)) / a_of(q)
        return scale * dvdt, scale * dvdx

    out = LyapunovCertificate(
        V=V_new, alpha_lo=alpha_lo_t, alpha_hi=alpha_hi_t,
        annulus=cert.annulus,
        c_bound=FormulaFn(c_tilde, kind="K", name="c_transformed",
                          s_hint=Delta) if c_old is not None else None,
        decay_k=k_target, grad=grad_new, theta_star=cert.theta_star)

    for s in np.geomspace(delta, Delta, 10):
        before = alpha_lo.invert(float(alpha_hi.eval(s)))
        after = alpha_lo_t.invert(float(alpha_hi_t.eval(s)))
        if abs(after - before) > invariance_tol * max(1.0, abs(before)):
            raise TransformError(
                f"gap-map invariance violated at s={s:g}: {before:g} vs {after:g}")
    return out


# ---------------------------------------------------------------------------
# Comparison-lemma trajectory bound.


def lemma2_bound(alpha_lo: ComparisonFunction, alpha_hi: ComparisonFunction,
                 k: float, c: float, delta: float, x0_norm: float,
                 t_elapsed: float) -> float:
    """Explicit bound on ||x(t)||_delta from Vdot <= -k V + c outside the
    delta-ball:

        alpha_lo^{-1}(alpha_hi(delta) + c/k)
      + alpha_lo^{-1}(alpha_hi(||x0||) e^{-k (t - t0)} + c/k)
    """
    if k <= 0:
        raise PreconditionError("k must be positive")
    resid = c / k
    first = alpha_lo.invert(float(alpha_hi.eval(delta)) + resid)
    second = alpha_lo.invert(
        float(alpha_hi.eval(x0_norm)) * math.exp(-k * t_elapsed) + resid)
    return first + second


# ---------------------------------------------------------------------------
# Boundedness radius (non-positive derivative on a large annulus).


def prop_bound(cert: LyapunovCertificate, a: float, b: float) -> float:
    """Safe startup radius alpha_hi^{-1}(alpha_lo(b)) under the standing
    hypothesis alpha_hi(a) < alpha_lo(b). Trajectories starting inside it
    stay inside the b-ball provided Vdot <= 0 on the annulus H(a, b)."""
    if not (float(cert.alpha_hi.eval(a)) < float(cert.alpha_lo.eval(b))):
        raise PreconditionError(
            "hypothesis alpha_hi(a) < alpha_lo(b) fails: the annulus where "
            "the derivative must be non-positive does not separate the levels")
    return cert.alpha_hi.invert(float(cert.alpha_lo.eval(b)))


def prop_bound_falsify(sys, theta, cert: LyapunovCertificate, a: float,
                       b: float, n_samples: int = 200,
                       t_grid=(0.0, 1.0, 10.0), seed: int = 0,
                       slack: float = 1e-9) -> list:
    """Sample H(a, b) x t-grid looking for Vdot > 0 witnesses."""
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_samples, _cert_dim(sys)))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = rng.uniform(a, b, n_samples)
    violations = []
    for x, r in zip(dirs * radii[:, None], radii):
        for t in t_grid:
            vdot = cert.vdot(sys.rhs, t, x, theta)
            if vdot > slack * (1.0 + abs(vdot)):
                violations.append({"t": float(t), "x": x.copy(),
                                   "vdot": float(vdot)})
    return violations


def _cert_dim(sys):
    return sys.n


# ---------------------------------------------------------------------------
# Lyapunov sufficient-condition checker (falsification + limit sequences).


@dataclass
class LyapunovUspasReport:
    """Falsification results per annulus plus the two limit sequences."""

    pairs: list
    gap_to_zero: list       # alpha_lo^{-1} o alpha_hi (delta) along delta_seq
    gap_to_infinity: list   # alpha_hi^{-1} o alpha_lo (Delta) along Delta_seq
    passed: bool

    def to_record(self):
        from .certcheck import _jsonable
        return _jsonable({"pairs": self.pairs, "gap_to_zero": self.gap_to_zero,
                          "gap_to_infinity": self.gap_to_infinity,
                          "passed": self.passed})


def check_lyapunov_uspas(sys, cert_family, delta_seq, Delta_seq,
                         n_space: int = 60, t_grid=(0.0, 1.0, 10.0, 100.0),
                         limit_tol: float = 1e-3, seed: int = 0) -> LyapunovUspasReport:
    """Falsify the sandwich and decrease conditions on each annulus and
    evaluate the two tuning-limit sequences.

    ``cert_family(delta, Delta)`` must return a rate-form certificate valid
    on H(delta, Delta). The gap alpha_lo^{-1} o alpha_hi (delta) must fall
    below ``limit_tol`` along ``delta_seq`` (decreasing) and
    alpha_hi^{-1} o alpha_lo (Delta) must rise above 1/limit_tol along
    ``Delta_seq`` (increasing); a bounded alpha_hi fails the second by a
    range error, which is recorded, not raised.
    """
    delta_seq = list(delta_seq)
    Delta_seq = list(Delta_seq)
    if any(d2 >= d1 for d1, d2 in zip(delta_seq, delta_seq[1:])):
        raise PreconditionError("delta_seq must strictly decrease")
    if any(D2 <= D1 for D1, D2 in zip(Delta_seq, Delta_seq[1:])):
        raise PreconditionError("Delta_seq must strictly increase")

    rng = np.random.default_rng(seed)
    pairs = []
    all_ok = True
    for Delta in Delta_seq:
        for delta in delta_seq:
            cert = cert_family(delta, Delta)
            theta = cert.theta_star if cert.theta_star is not None else np.zeros(sys.m)
            dirs = rng.standard_normal((n_space, sys.n))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            radii = rng.uniform(delta, Delta, n_space)
            pilot1_bad, pilot2_bad = [], []
            for x in dirs * radii[:, None]:
                sd = set_distance(x, delta)
                nx = float(np.linalg.norm(x))
                for t in t_grid:
                    v = float(cert.V(t, x))
                    lo = float(cert.alpha_lo.eval(sd))
                    hi = float(cert.alpha_hi.eval(nx))
                    tol = 1e-9 * (1.0 + abs(v))
                    if v < lo - tol or v > hi + tol:
                        pilot1_bad.append({"t": t, "x": x.copy(), "V": v,
                                           "lo": lo, "hi": hi})
                        continue
                    vdot = cert.vdot(sys.rhs, t, x, theta)
                    target = -float(cert.rate_fn.eval(nx))
                    if vdot > target + 1e-9 * (1.0 + abs(target)):
                        pilot2_bad.append({"t": t, "x": x.copy(),
                                           "vdot": vdot, "target": target})
            ok = not pilot1_bad and not pilot2_bad
            all_ok = all_ok and ok
            pairs.append({"delta": delta, "Delta": Delta,
                          "pilot1_ok": not pilot1_bad,
                          "pilot2_ok": not pilot2_bad,
                          "pilot1_counterexamples": pilot1_bad[:3],
                          "pilot2_counterexamples": pilot2_bad[:3]})

    gap_to_zero = []
    for Delta in Delta_seq:
        vals = []
        for delta in delta_seq:
            cert = cert_family(delta, Delta)
            vals.append(cert.alpha_lo.invert(float(cert.alpha_hi.eval(delta))))
        decreasing = all(b < a + 1e-15 for a, b in zip(vals, vals[1:]))
        limit_ok = vals[-1] < limit_tol
        gap_to_zero.append({"Delta": Delta, "values": vals,
                            "decreasing": decreasing, "limit_ok": limit_ok})
        all_ok = all_ok and decreasing and limit_ok

    gap_to_infinity = []
    for delta in delta_seq:
        vals = []
        error = None
        for Delta in Delta_seq:
            cert = cert_family(delta, Delta)
            try:
                vals.append(cert.alpha_hi.invert(float(cert.alpha_lo.eval(Delta))))
            except compfn.RangeError as err:
                error = str(err)
                break
        if error is None:
            increasing = all(b > a - 1e-15 for a, b in zip(vals, vals[1:]))
            limit_ok = vals[-1] > 1.0 / limit_tol
        else:
            increasing = limit_ok = False
        gap_to_infinity.append({"delta": delta, "values": vals,
                                "increasing": increasing,
                                "limit_ok": limit_ok, "error": error})
        all_ok = all_ok and increasing and limit_ok

    return LyapunovUspasReport(pairs, gap_to_zero, gap_to_infinity, all_ok)


# ---------------------------------------------------------------------------
# Cascade synthesis pipeline.


@dataclass
class SynthesizedEstimate:
    """Synthesized balls, waiting times, stability gain, and KL bound, with
    every input constant echoed for audit."""

    delta: float
    Delta: float
    delta3: float
    delta4: float
    t1: float
    t2: float
    c3: ComparisonFunction
    eta: ComparisonFunction
    beta: KLBound
    audit: dict = field(default_factory=dict)

    def to_record(self):
        from .certcheck import _jsonable
        rec = {"delta": self.delta, "Delta": self.Delta, "delta3": self.delta3,
               "delta4": self.delta4, "t1": self.t1, "t2": self.t2,
               "audit": _jsonable(self.audit)}
        rec["c3"] = self.c3.to_record()
        rec["eta"] = self.eta.to_record()
        rec["beta"] = self.beta.to_record()
        return rec


def find_decay_time(beta2: KLBound, s: float, level: float,
                    t_max: float = 1e4, tol: float = 1e-6) -> float:
    """First time the non-increasing map t -> beta2(s, t) falls to ``level``.

    Bisection on [0, t_max]; returns the upper end of the final bracket so
    the returned time is on the safe side. Raises ``RootFindError`` when the
    level is never reached within t_max.
    """
    if float(beta2(s, 0.0)) <= level:
        return 0.0
    lo, hi = 0.0, t_max
    if float(beta2(s, t_max)) > level:
        raise RootFindError(
            f"driving-subsystem bound never falls to {level:g} within "
            f"t={t_max:g}; cannot certify attractivity")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if float(beta2(s, mid)) <= level:
            hi = mid
        else:
            lo = mid
    return hi


def synthesize_cascade_bound(cert1: LyapunovCertificate, beta2: KLBound,
                             balls2: BallPair, G_of: ComparisonFunction,
                             gamma, Delta0: float,
                             t1_tmax: float = 1e4,
                             t1_tol: float = 1e-6) -> SynthesizedEstimate:
    """Build the cascade's (delta, Delta, beta) from subsystem certificates.

    ``cert1`` is an exponential-form certificate for the driven subsystem
    on H(delta1, Delta1); ``beta2``/``balls2`` bound the driving subsystem;
    ``G_of`` bounds the interconnection gain; ``gamma(Delta1, Delta2)`` is
    the boundedness radius map with threshold constant ``Delta0``.
    """
    if cert1.form != "exponential":
        raise PreconditionError("cert1 must be in exponential form "
                                "(apply transform_lyapunov first)")
    if cert1.c_bound is None:
        raise PreconditionError("cert1 needs a gradient bound")
    delta1, Delta1 = cert1.annulus.delta, cert1.annulus.Delta
    delta2, Delta2 = balls2.delta, balls2.Delta
    k1 = cert1.decay_k
    if not Delta1 > max(delta1, Delta0):
        raise PreconditionError(
            f"need Delta1 > max(delta1, Delta0) = {max(delta1, Delta0):g}")
    if delta1 <= 0:
        raise PreconditionError(
            "delta1 must be positive (the waiting time t2 diverges at "
            "delta1 = 0); regularize via usas_variant_check")

    alpha_lo, alpha_hi = cert1.alpha_lo, cert1.alpha_hi
    gamma_val = float(gamma(Delta1, Delta2))
    Delta = min(Delta1, Delta2, gamma_val)

    cG = float(cert1.c_bound.eval(Delta1)) * float(G_of.eval(Delta1))

    def c3_fn(s):
        s = np.asarray(s, dtype=float)
        return cG * (beta2(s, 0.0) + delta2)

    c3 = FormulaFn(c3_fn, kind="K", name="forcing-level", s_hint=Delta)

    resid = cG * delta2 / k1
    hi_d1 = float(alpha_hi.eval(delta1))
    delta3 = (delta1 + alpha_lo.invert(hi_d1 + resid) + alpha_lo.invert(resid))

    c3_zero = float(c3_fn(0.0))

    def eta_scalar(s):
        cs = float(c3_fn(s)) / k1
        return (alpha_lo.invert(hi_d1 + cs)
                + alpha_lo.invert(float(alpha_hi.eval(s)) + cs)
                - alpha_lo.invert(hi_d1 + c3_zero / k1)
                - alpha_lo.invert(c3_zero / k1))

    def eta_fn(s):
        s = np.asarray(s, dtype=float)
        if s.ndim:
            return np.array([eta_scalar(float(si)) for si in s])
        return eta_scalar(float(s))

    eta = FormulaFn(eta_fn, kind="K", name="stability-gain", s_hint=Delta)

    t1 = find_decay_time(beta2, Delta, delta2, t1_tmax, t1_tol)
    t2 = t1 + math.log(float(alpha_hi.eval(Delta1)) / hi_d1) / k1
    delta4 = delta1 + 2.0 * alpha_lo.invert(hi_d1 + 2.0 * resid)

    delta = max(delta2, delta3, delta4)
    if not delta < Delta:
        raise DegenerateEstimateError(
            f"synthesized delta={delta:g} >= Delta={Delta:g}; certificate "
            "inputs are too coarse for a usable estimate")

    beta = MaxKL([ProductKL(eta, rate=1.0, t_shift=t2), beta2])
    audit = {"delta1": delta1, "Delta1": Delta1, "delta2": delta2,
             "Delta2": Delta2, "k1": k1,
             "c1_at_Delta1": float(cert1.c_bound.eval(Delta1)),
             "G_at_Delta1": float(G_of.eval(Delta1)),
             "gamma_value": gamma_val, "cG": cG, "c3_at_zero": c3_zero}
    return SynthesizedEstimate(delta, Delta, delta3, delta4, t1, t2, c3, eta,
                               beta, audit)


def validate_estimate(cascade, theta, est: SynthesizedEstimate, T: float,
                      n_samples: int = 500, seed: int = 0,
                      t0_grid=(0.0,), method: str = "rk45",
                      **method_kw) -> StabilityVerdict:
    """Monte-Carlo check that the synthesized KL bound dominates
    ||x(t)||_delta pointwise along trajectories from the Delta-ball."""
    sys = compose_cascade(cascade) if hasattr(cascade, "f1") else cascade
    per_probe = max(1, int(math.ceil(n_samples / len(t0_grid))))
    sampler = BallSampler(sys.n, est.Delta, per_probe, tuple(t0_grid), seed)
    result = ensemble(sys, sampler.samples(), theta, T, method=method,
                      **method_kw)
    violations = []
    max_margin = -math.inf
    for idx, tr in enumerate(result.trajectories):
        if tr is None:
            violations.append({"index": idx, "kind": "integration-failure"})
            continue
        vals = set_distance(tr.states, est.delta)
        bound = est.beta(float(np.linalg.norm(tr.x0)), tr.elapsed())
        margin = float(np.max(vals - bound))
        max_margin = max(max_margin, margin)
        if margin > 0:
            k = int(np.argmax(vals - bound))
            violations.append({"index": idx, "t0": tr.t0, "x0": tr.x0,
                               "t": float(tr.times[k]), "margin": margin})
    meta = {"samples": len(result.samples), "max_margin": max_margin,
            "violations": len(violations), "seed": seed, "T": T,
            "delta": est.delta, "Delta": est.Delta}
    holds = not violations
    counterexample = None if holds else _first_violation(violations)
    return StabilityVerdict("SYNTH-KL-BOUND", holds,
                            "not-falsified" if holds else "bound-violated",
                            {"beta": est.beta} if holds else {},
                            counterexample, meta)


def _first_violation(violations):
    v = violations[0]
    return {"t0": v.get("t0"), "x0": v.get("x0"), "t": v.get("t"),
            "margin": v.get("margin", math.inf), "kind": v.get("kind", "bound")}


@dataclass
class UsasVariantReport:
    """Sequence of practical estimates whose target balls shrink with the
    regularization level, demonstrating the asymptotic (delta -> 0) variant."""

    eps_seq: list
    estimates: list
    deltas_decreasing: bool

    def to_record(self):
        return {"eps_seq": list(self.eps_seq),
                "estimates": [e.to_record() for e in self.estimates],
                "deltas_decreasing": self.deltas_decreasing}


def usas_variant_check(cert1: LyapunovCertificate, beta2: KLBound,
                       balls2: BallPair, G_of: ComparisonFunction, gamma,
                       Delta0: float, eps_seq=(1e-1, 1e-2, 1e-3),
                       t1_tmax: float = 1e4) -> UsasVariantReport:
    """Asymptotic variant of the synthesis for exponential certificates.

    Inner radii delta1 = delta2 = 0 are admitted by substituting a
    regularization level eps > 0 for them (the waiting times t1, t2 diverge
    at exactly zero); running the pipeline along a decreasing eps sequence
    produces estimates whose delta shrinks toward zero, which is the
    operational content of the asymptotic claim. The certificate must
    already be in exponential form (no transformation step is applied).
    """
    if cert1.form != "exponential":
        raise PreconditionError("the asymptotic variant needs an "
                                "exponential-form certificate")
    Delta1 = cert1.annulus.Delta
    if not Delta1 > Delta0:
        raise PreconditionError(f"need Delta1 > Delta0 = {Delta0:g}")
    eps_seq = sorted(set(float(e) for e in eps_seq), reverse=True)
    if eps_seq[-1] <= 0:
        raise PreconditionError("regularization levels must be positive")
    estimates = []
    for eps in eps_seq:
        cert_eps = dataclasses.replace(
            cert1, annulus=BallPair(max(cert1.annulus.delta, eps), Delta1))
        balls2_eps = BallPair(max(balls2.delta, eps), balls2.Delta)
        estimates.append(synthesize_cascade_bound(
            cert_eps, beta2, balls2_eps, G_of, gamma, Delta0, t1_tmax=t1_tmax))
    deltas = [e.delta for e in estimates]
    decreasing = all(b < a + 1e-15 for a, b in zip(deltas, deltas[1:]))
    return UsasVariantReport(eps_seq, estimates, decreasing)
