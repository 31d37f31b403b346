"""Parameterized time-varying vector fields, cascades, and ODE integration.

Systems are immutable; integration is deterministic for fixed inputs.
``rhs`` callables take ``(t, x, theta)`` and return the state derivative.
Systems flagged ``vectorized`` accept states of shape ``(..., n)`` and
broadcast over leading axes, which the fixed-step integrator exploits to
run whole ensembles as one batch.

The right-hand side is assumed continuous along integration steps; systems
with discontinuous time dependence need user-supplied breakpoints (split
the horizon at them).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DivergenceError, StiffnessError

# Norm beyond which a trajectory is treated as escaped.
ESCAPE_NORM = 1e8

# Default output density: at most T/400 between stored points.
OUT_POINTS = 400


@dataclass(frozen=True)
class ParameterizedSystem:
    """dx/dt = rhs(t, x, theta) with state dim ``n`` and parameter dim ``m``."""

    n: int
    m: int
    rhs: Callable
    name: str = ""
    lipschitz_hint: float | None = None
    vectorized: bool = False

    def __post_init__(self):
        if self.n <= 0 or self.m < 0:
            raise ValueError("need n > 0 and m >= 0")

    def __call__(self, t, x, theta):
        return self.rhs(t, x, theta)


@dataclass(frozen=True)
class CascadeSystem:
    """Driving/driven pair: dx1 = f1(t,x1,th1) + g(t,x,th) x2, dx2 = f2(t,x2,th2)."""

    f1: ParameterizedSystem
    f2: ParameterizedSystem
    g: Callable  # (t, x, theta) -> (n1, n2) matrix
    name: str = ""

    @property
    def n(self):
        return self.f1.n + self.f2.n

    @property
    def m(self):
        return self.f1.m + self.f2.m

    def split_state(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., :self.f1.n], x[..., self.f1.n:]

    def split_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        return theta[:self.f1.m], theta[self.f1.m:]


def compose_cascade(cascade: CascadeSystem) -> ParameterizedSystem:
    """Stack a cascade into a single system of dimension n1 + n2.

    The x2 block evolves independently of x1 by construction.
    """
    n1, n2 = cascade.f1.n, cascade.f2.n
    m1 = cascade.f1.m
    vectorized = cascade.f1.vectorized and cascade.f2.vectorized

    def rhs(t, x, theta):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., :n1], x[..., n1:]
        th1, th2 = theta[:m1], theta[m1:]
        inter = cascade.g(t, x, theta)
        dx1 = cascade.f1.rhs(t, x1, th1) + np.einsum("...ij,...j->...i", inter, x2)
        dx2 = cascade.f2.rhs(t, x2, th2)
        return np.concatenate([dx1, dx2], axis=-1)

    return ParameterizedSystem(n=n1 + n2, m=cascade.m, rhs=rhs,
                               name=cascade.name or "cascade",
                               vectorized=vectorized)


@dataclass(frozen=True)
class Trajectory:
    """Solution samples on a strictly increasing time grid starting at t0."""

    t0: float
    times: np.ndarray
    states: np.ndarray
    theta: np.ndarray
    method: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.times[0] != self.t0:
            raise ValueError("time grid must start at t0")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must strictly increase")
        if self.states.shape[0] != self.times.shape[0]:
            raise ValueError("states row count must match times")

    @property
    def x0(self):
        return self.states[0]

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    def elapsed(self) -> np.ndarray:
        return self.times - self.t0

    def to_csv(self, path):
        n = self.states.shape[1]
        header = "t," + ",".join(f"x{i + 1}" for i in range(n))
        data = np.column_stack([self.times, self.states])
        np.savetxt(path, data, delimiter=",", header=header, comments="",
                   fmt="%.17g")


def _output_grid(t0: float, T: float, h_out_max: float | None) -> np.ndarray:
    if h_out_max is None:
        n_out = OUT_POINTS
    else:
        n_out = max(OUT_POINTS, int(math.ceil(T / h_out_max)))
    return t0 + np.linspace(0.0, T, n_out + 1)


def integrate(sys: ParameterizedSystem, t0: float, x0, theta, T: float,
              method: str = "rk45", h: float | None = None,
              rtol: float = 1e-8, atol: float = 1e-10,
              h_out_max: float | None = None,
              escape_norm: float = ESCAPE_NORM) -> Trajectory:
    """Integrate over [t0, t0+T] and return a densely sampled trajectory.

    ``rk45`` uses adaptive Dormand-Prince with per-step local error control;
    ``rk4`` is the classic fixed-step scheme with step ``h``. Escape beyond
    ``escape_norm`` or a non-finite right-hand side raises
    ``DivergenceError`` carrying the last valid time/state; adaptive step
    underflow raises ``StiffnessError``.
    """
    if T <= 0:
        raise ValueError("horizon T must be positive")
    x0 = np.asarray(x0, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if x0.shape != (sys.n,):
        raise ValueError(f"x0 must have shape ({sys.n},)")
    f0 = np.asarray(sys.rhs(t0, x0, theta), dtype=float)
    if f0.shape != (sys.n,):
        raise ValueError("rhs output dimension mismatch")
    if not np.all(np.isfinite(f0)):
        raise DivergenceError("rhs non-finite at the initial state", t0, x0)

    if method == "rk45":
        return _integrate_rk45(sys, t0, x0, theta, T, rtol, atol, h_out_max,
                               escape_norm)
    if method == "rk4":
        if h is None or h <= 0:
            raise ValueError("rk4 needs a positive step h")
        times, states, status, _ = _rk4_batch(sys, t0, x0[None, :], theta, T,
                                              h, h_out_max, escape_norm)
        if status[0] >= 0:
            k = status[0]
            last = max(k - 1, 0)
            partial = _partial_traj(t0, times, states[0], theta, "rk4", last)
            raise DivergenceError("trajectory escaped", float(times[last]),
                                  states[0, last].copy(), partial)
        return Trajectory(t0, times, states[0], theta, "rk4", {"h": h})
    raise ValueError(f"unknown method {method!r}")


def _partial_traj(t0, times, states, theta, method, last):
    if last < 1:
        return None
    return Trajectory(t0, times[:last + 1], states[:last + 1], theta, method,
                      {"truncated": True})


def _integrate_rk45(sys, t0, x0, theta, T, rtol, atol, h_out_max, escape_norm):
    t_eval = _output_grid(t0, T, h_out_max)
    last_good = [t0, x0]
    saw_nonfinite = [False]

    def wrapped(t, x):
        dx = np.asarray(sys.rhs(t, x, theta), dtype=float)
        if np.all(np.isfinite(dx)) and np.all(np.isfinite(x)):
            last_good[0] = t
            last_good[1] = np.array(x)
        else:
            saw_nonfinite[0] = True
        return dx

    def escape(t, x):
        return escape_norm - float(np.linalg.norm(x))

    escape.terminal = True
    escape.direction = -1.0

    try:
        sol = solve_ivp(wrapped, (t0, t0 + T), x0, method="RK45",
                        t_eval=t_eval, rtol=rtol, atol=atol, events=escape,
                        dense_output=False)
    except (FloatingPointError, OverflowError):
        raise DivergenceError("rhs overflowed during integration",
                              last_good[0], last_good[1]) from None
    if sol.status == 1:  # escape event
        te = float(sol.t_events[0][0])
        xe = sol.y_events[0][0]
        k = sol.t.size
        partial = None
        if k > 1:
            partial = Trajectory(t0, sol.t, sol.y.T, theta, "rk45",
                                 {"truncated": True})
        raise DivergenceError("trajectory escaped", te, xe, partial)
    if sol.status != 0:
        if saw_nonfinite[0]:
            raise DivergenceError("rhs non-finite: " + sol.message,
                                  last_good[0], last_good[1])
        raise StiffnessError(sol.message)
    states = sol.y.T
    if not np.all(np.isfinite(states)):
        raise DivergenceError("non-finite state in output", last_good[0],
                              last_good[1])
    return Trajectory(t0, sol.t, states, theta, "rk45",
                      {"rtol": rtol, "atol": atol})


def _rk4_batch(sys, t0, X0, theta, T, h, h_out_max, escape_norm,
               stop_when=None, check_every=1000):
    """Classic RK4 on a batch of initial states.

    Returns (times, states (N, K, n), status, first_bad) where status[i] is
    -1 for a clean run or the output index at which sample i first became
    non-finite / escaped. ``stop_when(X)``, if given, is polled every
    ``check_every`` steps and ends integration early when it returns True
    (used for convergence-triggered stops; the stored grid is truncated).
    """
    X0 = np.asarray(X0, dtype=float)
    n_steps = int(math.ceil(T / h))
    if h_out_max is None:
        h_out_max = T / OUT_POINTS
    out_every = max(1, int(round(h_out_max / h)))
    n_out = n_steps // out_every + 2

    N, n = X0.shape
    times = np.empty(n_out + 1)
    states = np.empty((N, n_out + 1, n))
    status = np.full(N, -1, dtype=int)

    if sys.vectorized:
        rhs = sys.rhs
    else:
        def rhs(t, X, th):
            return np.stack([np.asarray(sys.rhs(t, xi, th), dtype=float)
                             for xi in X])

    X = X0.copy()
    times[0] = t0
    states[:, 0, :] = X
    k_out = 0
    t_end = t0 + T

    with np.errstate(invalid="ignore", over="ignore"):
        for i in range(1, n_steps + 1):
            t_prev = t0 + (i - 1) * h
            t_next = min(t0 + i * h, t_end)
            dt = t_next - t_prev
            k1 = rhs(t_prev, X, theta)
            k2 = rhs(t_prev + 0.5 * dt, X + 0.5 * dt * k1, theta)
            k3 = rhs(t_prev + 0.5 * dt, X + 0.5 * dt * k2, theta)
            k4 = rhs(t_next, X + dt * k3, theta)
            X = X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if i % out_every == 0 or i == n_steps:
                k_out += 1
                times[k_out] = t_next
                states[:, k_out, :] = X
                norms = np.linalg.norm(X, axis=-1)
                bad = ~np.isfinite(norms) | (norms > escape_norm)
                newly = bad & (status < 0)
                if np.any(newly):
                    status[newly] = k_out
                    X[newly] = 0.0  # freeze escaped members, keep batch finite
            if stop_when is not None and i % check_every == 0 and i < n_steps:
                if stop_when(X):
                    if i % out_every != 0:
                        k_out += 1
                        times[k_out] = t_next
                        states[:, k_out, :] = X
                    break
    return times[:k_out + 1], states[:, :k_out + 1, :], status, None


def integrate_batch_rk4(sys: ParameterizedSystem, t0: float, X0, theta,
                        T: float, h: float, h_out_max: float | None = None,
                        escape_norm: float = ESCAPE_NORM, stop_when=None,
                        check_every: int = 1000):
    """Fixed-step RK4 over a batch of initial states of a vectorized system.

    Identical arithmetic to per-sample RK4 (elementwise batch operations),
    so single-sample and batched integration agree to roundoff.
    """
    if not sys.vectorized:
        raise ValueError("batch integration needs a vectorized system")
    X0 = np.asarray(X0, dtype=float)
    theta = np.asarray(theta, dtype=float)
    return _rk4_batch(sys, t0, X0, theta, T, h, h_out_max, escape_norm,
                      stop_when=stop_when, check_every=check_every)


# ---------------------------------------------------------------------------
# Initial-condition sampling.


def geometric_radii(Delta: float, n_radii: int = 8, ratio: float = 100.0):
    """Geometric radius ladder from Delta/ratio up to Delta."""
    return tuple(np.geomspace(Delta / ratio, Delta, n_radii))


def default_t0_grid(T: float):
    """Initial-time probes covering phase and late-start uniformity."""
    return (0.0, T / 3.0, 2.0 * T / 3.0, T, 10.0 * T)


def sphere_directions(dim: int, count: int, seed: int = 0) -> np.ndarray:
    """Unit directions: deterministic grids up to dim 4, seeded beyond.

    dim 1 uses both signs; dim 2 a uniform angle fan; dim 3 a Fibonacci
    sphere; dim 4 a Halton-based low-discrepancy set.
    """
    if dim == 1:
        return np.array([[1.0], [-1.0]])[:max(1, min(count, 2))]
    if dim == 2:
        ang = 2.0 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(ang), np.sin(ang)])
    if dim == 3:
        i = np.arange(count) + 0.5
        phi = np.arccos(1.0 - 2.0 * i / count)
        golden = np.pi * (1.0 + 5.0 ** 0.5)
        theta = golden * i
        return np.column_stack([np.sin(phi) * np.cos(theta),
                                np.sin(phi) * np.sin(theta),
                                np.cos(phi)])
    if dim == 4:
        from scipy.stats import norm, qmc
        sampler = qmc.Halton(d=4, scramble=False)
        sampler.fast_forward(1)  # skip the origin point
        u = sampler.random(count)
        z = norm.ppf(np.clip(u, 1e-9, 1 - 1e-9))
        return z / np.linalg.norm(z, axis=1, keepdims=True)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


@dataclass(frozen=True)
class SphereShellSampler:
    """(t0, x0) pairs with x0 on spheres of prescribed radii and t0 from a
    probe grid. Deterministic given the seed."""

    dim: int
    radii: tuple
    t0_grid: tuple
    n_directions: int = 20
    seed: int = 0

    def samples(self) -> list:
        dirs = sphere_directions(self.dim, self.n_directions, self.seed)
        out = []
        for t0 in self.t0_grid:
            for r in self.radii:
                for d in dirs:
                    out.append((float(t0), r * d))
        return out


@dataclass(frozen=True)
class BallSampler:
    """x0 uniform in the ball of given radius, t0 from a probe grid."""

    dim: int
    radius: float
    count: int
    t0_grid: tuple = (0.0,)
    seed: int = 0

    def samples(self) -> list:
        rng = np.random.default_rng(self.seed)
        out = []
        for t0 in self.t0_grid:
            z = rng.standard_normal((self.count, self.dim))
            z /= np.linalg.norm(z, axis=1, keepdims=True)
            r = self.radius * rng.uniform(0.0, 1.0, self.count) ** (1.0 / self.dim)
            for i in range(self.count):
                out.append((float(t0), r[i] * z[i]))
        return out


@dataclass
class EnsembleResult:
    """Per-sample trajectories (None where integration failed) plus failure
    records, ordered by sample index."""

    samples: list
    trajectories: list
    failures: list
    meta: dict = field(default_factory=dict)

    @property
    def n_ok(self):
        return sum(tr is not None for tr in self.trajectories)


def ensemble(sys: ParameterizedSystem, samples: Sequence, theta, T: float,
             method: str = "rk45", **kw) -> EnsembleResult:
    """Integrate one trajectory per (t0, x0) sample.

    Integration errors are recorded per sample without aborting the rest;
    each member is independent, so the loop is embarrassingly parallel, and
    results are keyed by sample index either way.
    """
    trajectories = []
    failures = []
    for idx, (t0, x0) in enumerate(samples):
        try:
            trajectories.append(integrate(sys, t0, x0, theta, T,
                                          method=method, **kw))
        except DivergenceError as err:
            trajectories.append(None)
            failures.append({"index": idx, "kind": "divergence",
                             "t0": float(t0), "x0": np.asarray(x0, dtype=float),
                             "t": float(err.t), "message": str(err)})
        except StiffnessError as err:
            trajectories.append(None)
            failures.append({"index": idx, "kind": "stiffness",
                             "t0": float(t0), "x0": np.asarray(x0, dtype=float),
                             "t": float(t0), "message": str(err)})
    return EnsembleResult(samples=list(samples), trajectories=trajectories,
                          failures=failures,
                          meta={"method": method, "T": T, **kw})
