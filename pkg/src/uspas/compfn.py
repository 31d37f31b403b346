"""Algebra of comparison functions (class K, K-infinity, L) and KL bounds.

Construction, evaluation, numeric inversion, composition, and envelope
fitting from sampled trajectory data. Every object is immutable after
construction and every operation is pure, so values can be evaluated from
concurrent workers without coordination.

Conventions:
  * kind "K"    -- zero at zero, strictly increasing (possibly bounded)
  * kind "Kinf" -- class K and unbounded
  * kind "L"    -- non-increasing, tending to zero
  * ``offset``  -- nondecreasing bounds on gradients are represented as a
    K-kind core plus a nonnegative value at zero.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import KindError, OutOfDomainError, RangeError, StabilityAtZeroError

# Relative inversion tolerance; the synthesis formulas chain up to four
# inversions, which keeps the accumulated error below ~1e-8.
TOL_INV = 1e-10
MAX_BISECT = 200

# Tie-break bump that keeps fitted grids strictly monotone (invertible).
EPS_STRICT = 1e-12

# Slope given to degenerate (all-zero) envelopes so they stay class K.
EPS_REG = 1e-9

K_KINDS = ("K", "Kinf")
ALL_KINDS = ("K", "Kinf", "L")


def _as_float_array(s):
    return np.asarray(s, dtype=float)


class ComparisonFunction:
    """Base class: a scalar monotone function with a declared kind."""

    kind: str = "K"

    def eval(self, s):
        """Evaluate at ``s`` (scalar or array, nonnegative)."""
        raise NotImplementedError

    def __call__(self, s):
        return self.eval(s)

    def invert(self, y: float) -> float:
        """Return s with f(s) = y to relative tolerance ``TOL_INV``.

        Only meaningful for K/Kinf kinds. Raises ``RangeError`` when ``y``
        exceeds the range of a bounded function.
        """
        raise NotImplementedError

    @property
    def offset(self) -> float:
        """Value at zero (0 for strict class K)."""
        return float(self.eval(0.0))

    def is_kind(self, kind: str) -> bool:
        if kind == "K":
            return self.kind in K_KINDS
        return self.kind == kind

    def to_record(self) -> dict:
        raise NotImplementedError

    def _require_invertible(self):
        if self.kind not in K_KINDS:
            raise KindError(f"cannot invert a function of kind {self.kind!r}")


def _check_kind(kind):
    if kind not in ALL_KINDS:
        raise KindError(f"unknown kind {kind!r}")


class LinearFn(ComparisonFunction):
    """a*s + offset. Class K-infinity for a > 0 and offset 0."""

    def __init__(self, a: float, offset: float = 0.0):
        if a < 0:
            raise ValueError("slope must be nonnegative")
        if offset < 0:
            raise ValueError("offset must be nonnegative")
        self.a = float(a)
        self._offset = float(offset)
        self.kind = "Kinf" if a > 0 else "K"

    def eval(self, s):
        return self.a * _as_float_array(s) + self._offset

    def invert(self, y):
        self._require_invertible()
        if y < self._offset:
            raise RangeError(f"target {y} below value at zero {self._offset}")
        if self.a == 0:
            raise RangeError("constant function is not invertible")
        return (float(y) - self._offset) / self.a

    def to_record(self):
        return {"family": "linear", "a": self.a, "offset": self._offset}

    def __repr__(self):
        return f"LinearFn(a={self.a})"


class PowerFn(ComparisonFunction):
    """a*s**p + offset. Class K-infinity for a, p > 0 and offset 0."""

    def __init__(self, a: float, p: float, offset: float = 0.0):
        if a <= 0 or p <= 0:
            raise ValueError("need a > 0 and p > 0")
        if offset < 0:
            raise ValueError("offset must be nonnegative")
        self.a = float(a)
        self.p = float(p)
        self._offset = float(offset)
        self.kind = "Kinf"

    def eval(self, s):
        return self.a * _as_float_array(s) ** self.p + self._offset

    def invert(self, y):
        if y < self._offset:
            raise RangeError(f"target {y} below value at zero {self._offset}")
        return ((float(y) - self._offset) / self.a) ** (1.0 / self.p)

    def to_record(self):
        return {"family": "power", "a": self.a, "p": self.p, "offset": self._offset}

    def __repr__(self):
        return f"PowerFn(a={self.a}, p={self.p})"


class SatExpFn(ComparisonFunction):
    """a*(1 - exp(-lam*s)): class K, bounded by a (not K-infinity)."""

    def __init__(self, a: float, lam: float):
        if a <= 0 or lam <= 0:
            raise ValueError("need a > 0 and lam > 0")
        self.a = float(a)
        self.lam = float(lam)
        self.kind = "K"

    def eval(self, s):
        return self.a * -np.expm1(-self.lam * _as_float_array(s))

    def invert(self, y):
        y = float(y)
        if y < 0:
            raise RangeError("negative target")
        if y >= self.a:
            raise RangeError(f"target {y} at or above the bound {self.a}")
        return -math.log1p(-y / self.a) / self.lam

    def to_record(self):
        return {"family": "satexp", "a": self.a, "lam": self.lam}

    def __repr__(self):
        return f"SatExpFn(a={self.a}, lam={self.lam})"


class ExpDecayFn(ComparisonFunction):
    """a*exp(-lam*t) + b: non-increasing decay, class L when b = 0."""

    kind = "L"

    def __init__(self, a: float, lam: float, b: float = 0.0):
        if a < 0 or lam <= 0 or b < 0:
            raise ValueError("need a >= 0, lam > 0, b >= 0")
        self.a = float(a)
        self.lam = float(lam)
        self.b = float(b)

    def eval(self, t):
        return self.a * np.exp(-self.lam * _as_float_array(t)) + self.b

    def invert(self, y):
        raise KindError("cannot invert a class-L function")

    def tail_value(self) -> float:
        return self.b

    def to_record(self):
        return {"family": "expdecay", "a": self.a, "lam": self.lam, "b": self.b}

    def __repr__(self):
        return f"ExpDecayFn(a={self.a}, lam={self.lam}, b={self.b})"


class ConstantFn(ComparisonFunction):
    """Constant nondecreasing function (used for interconnection bounds)."""

    kind = "K"

    def __init__(self, value: float):
        if value < 0:
            raise ValueError("value must be nonnegative")
        self.value = float(value)

    def eval(self, s):
        s = _as_float_array(s)
        return np.full_like(s, self.value) if s.ndim else self.value

    def invert(self, y):
        raise RangeError("constant function is not invertible")

    def to_record(self):
        return {"family": "constant", "value": self.value}

    def __repr__(self):
        return f"ConstantFn({self.value})"


def _strictify(s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Break ties in a nondecreasing table so values strictly increase."""
    out = v.copy()
    for i in range(1, len(out)):
        if out[i] <= out[i - 1]:
            out[i] = out[i - 1] + EPS_STRICT * (1.0 + s[i])
    return out


class GridK(ComparisonFunction):
    """Monotone increasing breakpoint table with linear interpolation.

    Breakpoints start at s = 0. Beyond the last breakpoint the declared
    extrapolation slope is used (defaults to the last-segment slope); a
    positive slope makes the function unbounded (K-infinity behaviour).
    """

    def __init__(self, s: Sequence[float], v: Sequence[float],
                 extrap_slope: float | None = None, kinf: bool = False,
                 strictify: bool = False):
        s = np.asarray(s, dtype=float)
        v = np.asarray(v, dtype=float)
        if s.ndim != 1 or s.shape != v.shape or len(s) < 2:
            raise ValueError("need matching 1-D breakpoint arrays, length >= 2")
        if s[0] != 0.0:
            raise ValueError("breakpoints must start at s = 0")
        if np.any(np.diff(s) <= 0):
            raise ValueError("breakpoint abscissae must strictly increase")
        if np.any(v < 0):
            raise ValueError("breakpoint values must be nonnegative")
        if strictify:
            v = _strictify(s, v)
        if np.any(np.diff(v) <= 0):
            raise ValueError("breakpoint values must strictly increase "
                             "(use strictify=True to bump ties)")
        self.s = s
        self.v = v
        if extrap_slope is None:
            extrap_slope = (v[-1] - v[-2]) / (s[-1] - s[-2])
        self.extrap_slope = float(extrap_slope)
        if kinf and self.extrap_slope <= 0:
            raise KindError("K-infinity grid needs a positive extrapolation slope")
        self.kind = "Kinf" if kinf else "K"

    def eval(self, s):
        s = _as_float_array(s)
        out = np.interp(s, self.s, self.v)
        beyond = s > self.s[-1]
        if np.any(beyond):
            out = np.where(beyond, self.v[-1] + self.extrap_slope * (s - self.s[-1]), out)
        if np.any(s < 0):
            raise OutOfDomainError("negative argument")
        return out if out.ndim else float(out)

    def invert(self, y):
        y = float(y)
        if y < self.v[0]:
            if y >= self.v[0] - 1e-12 * (1.0 + abs(y)):
                return float(self.s[0])
            raise RangeError(f"target {y} below value at zero {self.v[0]}")
        if y <= self.v[-1]:
            return float(np.interp(y, self.v, self.s))
        if self.extrap_slope > 0:
            return float(self.s[-1] + (y - self.v[-1]) / self.extrap_slope)
        raise RangeError(f"target {y} above range bound {self.v[-1]}")

    @property
    def offset(self):
        return float(self.v[0])

    def to_record(self):
        return {"family": "grid_k", "s": self.s.tolist(), "v": self.v.tolist(),
                "extrap_slope": self.extrap_slope, "kinf": self.kind == "Kinf"}

    def __repr__(self):
        return f"GridK({len(self.s)} pts on [0, {self.s[-1]:g}])"


class GridL(ComparisonFunction):
    """Non-increasing breakpoint table with linear interpolation.

    Beyond the last breakpoint an exponential tail is fitted through the
    last two points (constant when they are level, zero when the tail hits
    zero).
    """

    kind = "L"

    def __init__(self, t: Sequence[float], v: Sequence[float]):
        t = np.asarray(t, dtype=float)
        v = np.asarray(v, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or len(t) < 1:
            raise ValueError("need matching 1-D breakpoint arrays")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("breakpoint abscissae must strictly increase")
        if np.any(np.diff(v) > 0):
            raise ValueError("breakpoint values must be non-increasing")
        if np.any(v < 0):
            raise ValueError("breakpoint values must be nonnegative")
        self.t = t
        self.v = v
        # Exponential tail rate from the last two points.
        if len(v) > 1 and v[-1] > 0 and v[-2] > v[-1]:
            self._tail_rate = math.log(v[-2] / v[-1]) / (t[-1] - t[-2])
        else:
            self._tail_rate = 0.0

    def eval(self, t):
        t = _as_float_array(t)
        if np.any(t < 0):
            raise OutOfDomainError("negative argument")
        out = np.interp(t, self.t, self.v)
        beyond = t > self.t[-1]
        if np.any(beyond):
            tail = self.v[-1] * np.exp(-self._tail_rate * (t - self.t[-1]))
            out = np.where(beyond, tail, out)
        return out if out.ndim else float(out)

    def invert(self, y):
        raise KindError("cannot invert a class-L function")

    def tail_value(self) -> float:
        return float(self.v[-1])

    def to_record(self):
        return {"family": "grid_l", "t": self.t.tolist(), "v": self.v.tolist()}

    def __repr__(self):
        return f"GridL({len(self.t)} pts, tail={self.tail_value():g})"


def _infer_composed_kind(outer: ComparisonFunction, inner: ComparisonFunction) -> str:
    ok, ik = outer.kind, inner.kind
    if ok in K_KINDS and ik in K_KINDS:
        return "Kinf" if (ok == "Kinf" and ik == "Kinf") else "K"
    if ok == "L" and ik in K_KINDS:
        return "L"
    if ok in K_KINDS and ik == "L":
        return "L"
    raise KindError(f"cannot compose kinds {ok!r} o {ik!r}")


class ComposedFn(ComparisonFunction):
    """Lazy exact composition outer(inner(s)).

    Inversion chains the member inverses, so round trips stay exact instead
    of accumulating resampling error.
    """

    def __init__(self, outer: ComparisonFunction, inner: ComparisonFunction):
        self.outer = outer
        self.inner = inner
        self.kind = _infer_composed_kind(outer, inner)

    def eval(self, s):
        return self.outer.eval(self.inner.eval(s))

    def invert(self, y):
        self._require_invertible()
        return self.inner.invert(self.outer.invert(y))

    def to_record(self):
        return {"family": "composed", "outer": self.outer.to_record(),
                "inner": self.inner.to_record()}

    def __repr__(self):
        return f"ComposedFn({self.outer!r} o {self.inner!r})"


class InverseFn(ComparisonFunction):
    """Inverse view of a K/Kinf function (itself class K on the range)."""

    def __init__(self, fn: ComparisonFunction):
        fn._require_invertible()
        self.fn = fn
        self.kind = fn.kind

    def eval(self, s):
        s = _as_float_array(s)
        if s.ndim:
            return np.array([self.fn.invert(float(si)) for si in s])
        return self.fn.invert(float(s))

    def invert(self, y):
        return float(self.fn.eval(y))

    def to_record(self):
        return {"family": "inverse", "of": self.fn.to_record()}

    def __repr__(self):
        return f"InverseFn({self.fn!r})"


class FormulaFn(ComparisonFunction):
    """Monotone function backed by an arbitrary callable.

    Used for synthesized bounds whose closed form mixes several comparison
    functions; inversion brackets the target then bisects. Serialized by
    sampling onto a grid.
    """

    def __init__(self, fn: Callable, kind: str = "K", name: str = "",
                 s_hint: float = 1.0):
        _check_kind(kind)
        self._fn = fn
        self.kind = kind
        self.name = name
        self.s_hint = float(s_hint)

    def eval(self, s):
        return self._fn(_as_float_array(s))

    def invert(self, y):
        self._require_invertible()
        y = float(y)
        f0 = float(self._fn(np.asarray(0.0)))
        if y < f0:
            if y >= f0 - 1e-12 * (1.0 + abs(y)):
                return 0.0
            raise RangeError(f"target {y} below value at zero {f0}")
        return bisect_increasing(lambda s: float(self._fn(np.asarray(s))), y,
                                 hi_hint=self.s_hint)

    def to_grid(self, s_max: float, n: int = 256) -> GridK:
        s = np.linspace(0.0, s_max, n)
        vals = np.maximum(np.asarray(self.eval(s), dtype=float), 0.0)
        return GridK(s, np.maximum.accumulate(vals), strictify=True)

    def to_record(self):
        grid = self.to_grid(max(self.s_hint, 1.0))
        rec = grid.to_record()
        rec["family"] = "formula_sampled"
        rec["name"] = self.name
        return rec

    def __repr__(self):
        return f"FormulaFn({self.name or 'anonymous'})"


def bisect_increasing(f: Callable[[float], float], y: float, lo: float = 0.0,
                      hi_hint: float = 1.0, tol: float = TOL_INV,
                      max_iter: int = MAX_BISECT) -> float:
    """Solve f(s) = y for an increasing f with f(lo) <= y.

    Expands the upper bracket geometrically, then bisects until the residual
    satisfies |f(s) - y| <= tol * max(1, y).
    """
    target_tol = tol * max(1.0, abs(y))
    if abs(f(lo) - y) <= target_tol:
        return lo
    hi = max(hi_hint, lo + 1.0)
    for _ in range(200):
        if f(hi) >= y:
            break
        lo, hi = hi, hi * 2.0
    else:
        raise RangeError(f"could not bracket target {y}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm - y) <= target_tol:
            return mid
        if fm < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Composition with closed-form collapsing.

def compose(f: ComparisonFunction, g: ComparisonFunction,
            kind: str | None = None) -> ComparisonFunction:
    """Return f o g.

    Compatible closed-form families are collapsed symbolically; anything
    else becomes a lazy exact composition. ``kind`` optionally asserts the
    expected kind of the result (raises ``KindError`` on mismatch).
    """
    out = _compose_symbolic(f, g)
    if out is None:
        out = ComposedFn(f, g)
    if kind is not None and not out.is_kind(kind):
        raise KindError(f"composition has kind {out.kind!r}, requested {kind!r}")
    return out


def _compose_symbolic(f, g):
    if getattr(f, "_offset", 0.0) or getattr(g, "_offset", 0.0):
        return None
    if isinstance(f, LinearFn) and isinstance(g, LinearFn):
        return LinearFn(f.a * g.a)
    if isinstance(f, LinearFn) and isinstance(g, PowerFn):
        return PowerFn(f.a * g.a, g.p)
    if isinstance(f, PowerFn) and isinstance(g, LinearFn):
        if g.a == 0:
            return None
        return PowerFn(f.a * g.a ** f.p, f.p)
    if isinstance(f, PowerFn) and isinstance(g, PowerFn):
        return PowerFn(f.a * g.a ** f.p, f.p * g.p)
    return None


def inverse(f: ComparisonFunction) -> ComparisonFunction:
    """Inverse of a K/Kinf function, collapsing closed forms when exact."""
    if isinstance(f, LinearFn) and f.a > 0 and f._offset == 0.0:
        return LinearFn(1.0 / f.a)
    if isinstance(f, PowerFn) and f._offset == 0.0:
        return PowerFn(f.a ** (-1.0 / f.p), 1.0 / f.p)
    if isinstance(f, InverseFn):
        return f.fn
    return InverseFn(f)


# ---------------------------------------------------------------------------
# Envelope fitting.

def fit_K_envelope(samples, eps_reg: float = EPS_REG) -> GridK:
    """Smallest grid class-K function dominating all (s, value) samples.

    Upper envelope per abscissa, running-max monotone regularization,
    anchored at (0, 0). A sample at s = 0 with positive value cannot be
    dominated by any class-K function and raises ``StabilityAtZeroError``.
    All-zero samples are promoted to an ``eps_reg``-sloped grid so the
    result stays strictly increasing (invertible).
    """
    pts = np.asarray(list(samples), dtype=float)
    if pts.size == 0:
        raise ValueError("need at least one sample")
    pts = pts.reshape(-1, 2)
    if np.any(pts[:, 0] < 0) or np.any(~np.isfinite(pts)):
        raise ValueError("samples must be finite with s >= 0")
    zero_mask = pts[:, 0] == 0.0
    if np.any(pts[zero_mask, 1] > 0):
        raise StabilityAtZeroError(
            "sample at radius 0 has positive value "
            f"{pts[zero_mask, 1].max():g}; cannot anchor a class-K envelope")
    s_unique, inv = np.unique(pts[:, 0], return_inverse=True)
    v_max = np.full(len(s_unique), -np.inf)
    np.maximum.at(v_max, inv, pts[:, 1])
    if s_unique[0] != 0.0:
        s_unique = np.concatenate(([0.0], s_unique))
        v_max = np.concatenate(([0.0], v_max))
    v_env = np.maximum.accumulate(v_max)
    if v_env[-1] == 0.0:
        s_top = max(s_unique[-1], 1.0)
        return GridK([0.0, s_top], [0.0, eps_reg * s_top],
                     extrap_slope=eps_reg, kinf=True)
    if len(s_unique) == 1:
        # single sample at s=0 with value 0
        return GridK([0.0, 1.0], [0.0, eps_reg], extrap_slope=eps_reg, kinf=True)
    grid = GridK(s_unique, v_env, strictify=True, kinf=False)
    if grid.extrap_slope > 0:
        grid.kind = "Kinf"
    return grid


def fit_L_envelope(samples) -> GridL:
    """Non-increasing upper envelope of (t, value) samples.

    Dual of ``fit_K_envelope``: maximum per abscissa followed by a running
    max from the right. Interpreting the tail (attractivity) is left to
    callers.
    """
    pts = np.asarray(list(samples), dtype=float)
    if pts.size == 0:
        raise ValueError("need at least one sample")
    pts = pts.reshape(-1, 2)
    if np.any(pts[:, 0] < 0) or np.any(~np.isfinite(pts)):
        raise ValueError("samples must be finite with t >= 0")
    t_unique, inv = np.unique(pts[:, 0], return_inverse=True)
    v_max = np.full(len(t_unique), -np.inf)
    np.maximum.at(v_max, inv, pts[:, 1])
    v_env = np.maximum.accumulate(v_max[::-1])[::-1]
    return GridL(t_unique, v_env)


# ---------------------------------------------------------------------------
# KL bounds.

class KLBound:
    """Two-argument bound beta(s, t): class K in s, class L in t."""

    smax: float = math.inf
    tmax: float = math.inf

    def eval(self, s, t):
        raise NotImplementedError

    def __call__(self, s, t):
        return self.eval(s, t)

    def to_record(self) -> dict:
        raise NotImplementedError

    def check_grid_invariants(self, smax: float, tmax: float, n: int = 50,
                              slack: float = 1e-12) -> bool:
        """Nondecreasing in s with beta(0,t)=0, non-increasing in t, on an
        n-by-n grid."""
        s = np.linspace(0.0, smax, n)
        t = np.linspace(0.0, tmax, n)
        vals = np.array([[float(self.eval(si, tj)) for tj in t] for si in s])
        tol = slack * (1.0 + np.abs(vals).max())
        if np.any(vals[0, :] > tol):
            return False
        if np.any(np.diff(vals, axis=0) < -tol):
            return False
        if np.any(np.diff(vals, axis=1) > tol):
            return False
        return True


class ProductKL(KLBound):
    """eta(s) * exp(-rate * (t - t_shift))."""

    def __init__(self, eta: ComparisonFunction, rate: float, t_shift: float = 0.0):
        if not eta.is_kind("K"):
            raise KindError("s-part of a product KL bound must be class K")
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.eta = eta
        self.rate = float(rate)
        self.t_shift = float(t_shift)

    def eval(self, s, t):
        # exponent capped so heavily conservative shifts stay finite; the
        # capped value (~1e304) still dominates any simulated trajectory
        e = -self.rate * (np.asarray(t, dtype=float) - self.t_shift)
        return self.eta.eval(s) * np.exp(np.minimum(e, 700.0))

    def to_record(self):
        return {"form": "product", "eta": self.eta.to_record(),
                "rate": self.rate, "t_shift": self.t_shift}


class MinPlusRegKL(KLBound):
    """min(eta(s), sigma(t)) + eps_reg * min(s, 1) * exp(-t).

    Dominates any trajectory family separately dominated by eta (class K)
    and sigma (class L); the regularization term makes the s-monotonicity
    strict near zero.
    """

    def __init__(self, eta: ComparisonFunction, sigma: ComparisonFunction,
                 eps_reg: float = EPS_REG):
        if not eta.is_kind("K"):
            raise KindError("eta must be class K")
        if not sigma.is_kind("L"):
            raise KindError("sigma must be class L")
        self.eta = eta
        self.sigma = sigma
        self.eps_reg = float(eps_reg)

    def eval(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        core = np.minimum(self.eta.eval(s), self.sigma.eval(t))
        return core + self.eps_reg * np.minimum(s, 1.0) * np.exp(-t)

    def to_record(self):
        return {"form": "min_plus_reg", "eta": self.eta.to_record(),
                "sigma": self.sigma.to_record(), "eps_reg": self.eps_reg}


class MaxKL(KLBound):
    """Pointwise maximum of KL bounds."""

    def __init__(self, parts: Sequence[KLBound]):
        if not parts:
            raise ValueError("need at least one part")
        self.parts = list(parts)

    def eval(self, s, t):
        vals = [p.eval(s, t) for p in self.parts]
        out = vals[0]
        for v in vals[1:]:
            out = np.maximum(out, v)
        return out

    def to_record(self):
        return {"form": "max", "parts": [p.to_record() for p in self.parts]}


class GridKL(KLBound):
    """Bilinear surface over (s, t) breakpoints."""

    def __init__(self, s: Sequence[float], t: Sequence[float], values):
        self.s = np.asarray(s, dtype=float)
        self.t = np.asarray(t, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (len(self.s), len(self.t)):
            raise ValueError("values shape must be (len(s), len(t))")
        self.smax = float(self.s[-1])
        self.tmax = float(self.t[-1])

    def eval(self, s, t):
        s = np.clip(np.asarray(s, dtype=float), self.s[0], self.s[-1])
        t = np.clip(np.asarray(t, dtype=float), self.t[0], self.t[-1])
        i = np.clip(np.searchsorted(self.s, s) - 1, 0, len(self.s) - 2)
        j = np.clip(np.searchsorted(self.t, t) - 1, 0, len(self.t) - 2)
        ws = (s - self.s[i]) / (self.s[i + 1] - self.s[i])
        wt = (t - self.t[j]) / (self.t[j + 1] - self.t[j])
        v = (self.values[i, j] * (1 - ws) * (1 - wt)
             + self.values[i + 1, j] * ws * (1 - wt)
             + self.values[i, j + 1] * (1 - ws) * wt
             + self.values[i + 1, j + 1] * ws * wt)
        return v

    def to_record(self):
        return {"form": "grid", "s": self.s.tolist(), "t": self.t.tolist(),
                "values": self.values.tolist()}


def kl_from_US_UA(eta: ComparisonFunction, sigma: ComparisonFunction,
                  eps_reg: float = EPS_REG) -> KLBound:
    """Combine a stability witness eta (class K) and an attractivity witness
    sigma (class L) into a KL bound dominating both."""
    return MinPlusRegKL(eta, sigma, eps_reg)


# ---------------------------------------------------------------------------
# Serialization of closed forms / grids (scenario files, reports).

_FAMILY_PARSERS = {
    "linear": lambda r: LinearFn(r["a"], r.get("offset", 0.0)),
    "power": lambda r: PowerFn(r["a"], r["p"], r.get("offset", 0.0)),
    "satexp": lambda r: SatExpFn(r["a"], r["lam"]),
    "expdecay": lambda r: ExpDecayFn(r["a"], r["lam"], r.get("b", 0.0)),
    "constant": lambda r: ConstantFn(r["value"]),
    "grid_k": lambda r: GridK(r["s"], r["v"], r.get("extrap_slope"),
                              r.get("kinf", False)),
    "grid_l": lambda r: GridL(r["t"], r["v"]),
}


def from_record(record: dict) -> ComparisonFunction:
    """Rebuild a comparison function from its tagged record."""
    family = record.get("family")
    if family == "composed":
        return ComposedFn(from_record(record["outer"]), from_record(record["inner"]))
    if family == "inverse":
        return InverseFn(from_record(record["of"]))
    try:
        return _FAMILY_PARSERS[family](record)
    except KeyError:
        raise ValueError(f"unknown comparison-function family {family!r}") from None
