import dataclasses
import math
import time

import numpy as np
import pytest

from uspas.cascade_synth import (
    LyapunovCertificate,
    SynthesizedEstimate,
    check_lyapunov_uspas,
    find_decay_time,
    finite_difference_grad,
    lemma2_bound,
    prop_bound,
    prop_bound_falsify,
    synthesize_cascade_bound,
    transform_lyapunov,
    usas_variant_check,
    validate_estimate,
)
from uspas.certcheck import BallPair
from uspas.compfn import (
    ConstantFn,
    GridKL,
    KLBound,
    LinearFn,
    PowerFn,
    ProductKL,
    SatExpFn,
)
from uspas.errors import (
    DegenerateEstimateError,
    PreconditionError,
    RangeError,
    RootFindError,
)
from uspas.sysmodel import CascadeSystem, ParameterizedSystem, integrate


def quadratic_cert(delta=0.1, Delta=5.0, rate_scale=1.0):
    """V = ||x||^2 / 2 with its exact bounds and decrease -rate_scale*||x||^2."""
    return LyapunovCertificate(
        V=lambda t, x: 0.5 * float(np.dot(x, x)),
        alpha_lo=PowerFn(0.5, 2.0),
        alpha_hi=PowerFn(0.5, 2.0),
        annulus=BallPair(delta, Delta),
        c_bound=LinearFn(1.0),
        rate_fn=PowerFn(rate_scale, 2.0),
        grad=lambda t, x: (0.0, np.asarray(x, dtype=float)),
    )


class TestTransform:
    def test_identity_transform(self):
        # a(q) = rate(alpha_hi^-1(q)) = 2q, k_target = 2:
        # rho(s) = exp(int_1^s 2dq/2q) = s, the identity warp
        cert = quadratic_cert()
        out = transform_lyapunov(cert, k_target=2.0)
        assert out.decay_k == 2.0
        for s in np.geomspace(0.1, 5.0, 12):
            assert out.alpha_lo.eval(s) == pytest.approx(0.5 * s * s, rel=1e-9)
            assert out.alpha_hi.eval(s) == pytest.approx(0.5 * s * s, rel=1e-9)
        x = np.array([1.3])
        assert out.V(0.0, x) == pytest.approx(0.5 * 1.69, rel=1e-9)

    def test_sqrt_transform(self):
        # k_target = 1 gives rho(s) = sqrt(s), so script-V = |x| / sqrt(2)
        cert = quadratic_cert()
        out = transform_lyapunov(cert, k_target=1.0)
        for s in [0.2, 1.0, 4.0]:
            assert out.alpha_lo.eval(s) == pytest.approx(s / math.sqrt(2.0),
                                                         rel=1e-8)

    def test_gap_map_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            p = rng.uniform(0.8, 3.0)
            a1 = rng.uniform(0.2, 2.0)
            a2 = a1 * rng.uniform(1.0, 4.0)
            delta = rng.uniform(0.02, 0.3)
            Delta = rng.uniform(2.0, 20.0)
            cert = LyapunovCertificate(
                V=lambda t, x: 0.0, alpha_lo=PowerFn(a1, p),
                alpha_hi=PowerFn(a2, p), annulus=BallPair(delta, Delta),
                c_bound=LinearFn(1.0),
                rate_fn=PowerFn(rng.uniform(0.1, 2.0), rng.uniform(0.9, 1.1) * p))
            out = transform_lyapunov(cert, k_target=float(rng.uniform(0.5, 2.0)))
            for s in np.geomspace(delta, Delta, 10):
                before = cert.alpha_lo.invert(float(cert.alpha_hi.eval(s)))
                after = out.alpha_lo.invert(float(out.alpha_hi.eval(s)))
                assert abs(after - before) <= 1e-8 * max(1.0, before)

    def test_exponential_decrease_along_trajectory(self):
        # finite-difference check of script-Vdot <= -k script-V on dx = -x
        cert = quadratic_cert()
        out = transform_lyapunov(cert, k_target=1.5)
        sys = ParameterizedSystem(1, 0, lambda t, x, th: -x, vectorized=True)
        tr = integrate(sys, 0.0, [2.0], [], 1.0, rtol=1e-11, atol=1e-13)
        v = np.array([out.V(t, x) for t, x in zip(tr.times, tr.states)])
        dt = np.diff(tr.times)
        vdot = np.diff(v) / dt
        vmid = 0.5 * (v[1:] + v[:-1])
        assert np.all(vdot <= -1.5 * vmid + 1e-3 * (1.0 + vmid))

    def test_transformed_gradient_bound_dominates(self):
        cert = quadratic_cert()
        out = transform_lyapunov(cert, k_target=2.0)
        for s in np.geomspace(cert.annulus.delta, cert.annulus.Delta, 8):
            x = np.array([s])
            _, dvdx = out.grad_at(0.0, x)
            assert np.linalg.norm(dvdx) <= float(out.c_bound.eval(s)) * (1 + 1e-8)

    def test_rejects_exponential_input(self):
        cert = dataclasses.replace(quadratic_cert(), rate_fn=None, decay_k=1.0)
        with pytest.raises(PreconditionError):
            transform_lyapunov(cert)

    def test_rejects_zero_inner_radius(self):
        cert = quadratic_cert(delta=0.0)
        with pytest.raises(PreconditionError):
            transform_lyapunov(cert)


class TestLemma2:
    def test_substitution_trivial(self):
        # c=0, delta=0, identity bounds, k=1, x0=1, t=0 -> 0 + 1
        val = lemma2_bound(LinearFn(1.0), LinearFn(1.0), 1.0, 0.0, 0.0, 1.0, 0.0)
        assert val == pytest.approx(1.0)

    def test_limit_residual_term(self):
        val = lemma2_bound(LinearFn(1.0), LinearFn(1.0), 1.0, 0.0, 0.3, 1.0, 60.0)
        assert val == pytest.approx(0.3, abs=1e-12)

    def test_hand_evaluated(self):
        # alpha = s^2, k=2, c=2, delta=0.5, x0=2, t=1
        expected = math.sqrt(0.25 + 1.0) + math.sqrt(4.0 * math.exp(-2.0) + 1.0)
        val = lemma2_bound(PowerFn(1.0, 2.0), PowerFn(1.0, 2.0), 2.0, 2.0,
                           0.5, 2.0, 1.0)
        assert val == pytest.approx(expected, rel=1e-10)

    def test_exponential_decay_shape(self):
        ts = np.linspace(0.0, 5.0, 11)
        xs = np.linspace(0.1, 3.0, 7)
        vals = np.array([[lemma2_bound(LinearFn(1.0), LinearFn(1.0), 1.0,
                                       0.0, 0.0, x, t) for t in ts] for x in xs])
        for i, x in enumerate(xs):
            np.testing.assert_allclose(vals[i], x * np.exp(-ts), rtol=1e-12)
        assert np.all(np.diff(vals, axis=1) < 0)
        assert np.all(np.diff(vals, axis=0) > 0)

    def test_bounded_alpha_range_error(self):
        with pytest.raises(RangeError):
            lemma2_bound(SatExpFn(1.0, 1.0), LinearFn(1.0), 1.0, 5.0, 0.0,
                         1.0, 0.0)


class TestPropBound:
    def test_equal_bounds(self):
        cert = quadratic_cert()
        assert prop_bound(cert, 0.5, 2.0) == pytest.approx(2.0, rel=1e-10)

    def test_hand_derived(self):
        cert = LyapunovCertificate(
            V=lambda t, x: float(np.dot(x, x)), alpha_lo=PowerFn(1.0, 2.0),
            alpha_hi=PowerFn(2.0, 2.0), annulus=BallPair(0.0, 10.0),
            rate_fn=LinearFn(1.0))
        assert prop_bound(cert, 0.1, 1.0) == pytest.approx(1.0 / math.sqrt(2.0),
                                                           rel=1e-10)

    def test_precondition(self):
        cert = LyapunovCertificate(
            V=lambda t, x: float(np.dot(x, x)), alpha_lo=PowerFn(1.0, 2.0),
            alpha_hi=PowerFn(2.0, 2.0), annulus=BallPair(0.0, 10.0),
            rate_fn=LinearFn(1.0))
        with pytest.raises(PreconditionError):
            prop_bound(cert, 0.9, 1.0)

    def test_falsifier_finds_unstable_witnesses(self):
        sys = ParameterizedSystem(1, 0, lambda t, x, th: x, vectorized=True)
        cert = LyapunovCertificate(
            V=lambda t, x: float(np.dot(x, x)), alpha_lo=PowerFn(1.0, 2.0),
            alpha_hi=PowerFn(1.0, 2.0), annulus=BallPair(0.0, 10.0),
            rate_fn=LinearFn(1.0), grad=lambda t, x: (0.0, 2.0 * np.asarray(x)))
        start = time.perf_counter()
        violations = prop_bound_falsify(sys, [], cert, 0.5, 2.0, seed=3)
        assert time.perf_counter() - start < 1.0
        assert violations
        assert all(v["vdot"] > 0 for v in violations)

    def test_falsifier_silent_on_stable(self):
        sys = ParameterizedSystem(1, 0, lambda t, x, th: -x, vectorized=True)
        cert = quadratic_cert()
        assert prop_bound_falsify(sys, [], cert, 0.5, 2.0, seed=3) == []


def practical_family(delta, Delta):
    """Certificate family for dx = -x + 0.01*theta with theta* = delta."""
    return LyapunovCertificate(
        V=lambda t, x: 0.5 * float(np.dot(x, x)),
        alpha_lo=PowerFn(0.5, 2.0), alpha_hi=PowerFn(0.5, 2.0),
        annulus=BallPair(delta, Delta), c_bound=LinearFn(1.0),
        rate_fn=PowerFn(0.99, 2.0),
        grad=lambda t, x: (0.0, np.asarray(x, dtype=float)),
        theta_star=np.array([delta]))


class TestLyapunovUspasCheck:
    def test_practical_bundled_family(self):
        sys = ParameterizedSystem(1, 1, lambda t, x, th: -x + 0.01 * th[0],
                                  vectorized=True)
        report = check_lyapunov_uspas(sys, practical_family,
                                      delta_seq=[0.1, 0.01, 5e-4],
                                      Delta_seq=[10.0, 100.0, 2000.0], seed=5)
        assert report.passed
        gz = report.gap_to_zero[0]
        np.testing.assert_allclose(gz["values"], [0.1, 0.01, 5e-4], rtol=1e-9)
        assert gz["limit_ok"]
        gi = report.gap_to_infinity[0]
        np.testing.assert_allclose(gi["values"], [10.0, 100.0, 2000.0],
                                   rtol=1e-9)
        assert gi["limit_ok"]

    def test_bounded_upper_bound_fails_growth_limit(self):
        def family(delta, Delta):
            return LyapunovCertificate(
                V=lambda t, x: 0.5 * (1.0 - math.exp(-float(np.linalg.norm(x)))),
                alpha_lo=SatExpFn(0.5, 1.0), alpha_hi=SatExpFn(1.0, 1.0),
                annulus=BallPair(delta, Delta), rate_fn=PowerFn(1e-4, 1.0),
                theta_star=np.array([]))

        sys = ParameterizedSystem(1, 0, lambda t, x, th: -x, vectorized=True)
        report = check_lyapunov_uspas(sys, family, delta_seq=[0.1, 0.01],
                                      Delta_seq=[10.0, 1e4], seed=5)
        assert not report.passed
        assert not report.gap_to_infinity[0]["limit_ok"]

    def test_decrease_violation_reported(self):
        def family(delta, Delta):
            # claims a much faster decrease than the system delivers
            return dataclasses.replace(practical_family(delta, Delta),
                                       rate_fn=PowerFn(10.0, 2.0))

        sys = ParameterizedSystem(1, 1, lambda t, x, th: -x + 0.01 * th[0],
                                  vectorized=True)
        report = check_lyapunov_uspas(sys, family, delta_seq=[0.1, 0.01],
                                      Delta_seq=[10.0, 100.0], seed=5)
        assert not report.passed
        assert any(not p["pilot2_ok"] for p in report.pairs)
        bad = [p for p in report.pairs if not p["pilot2_ok"]]
        assert bad[0]["pilot2_counterexamples"]


def exp_cert(delta1=0.05, Delta1=2.0):
    """Exponential-form certificate for dx1 = -x1 with V = x^2/2, k = 2."""
    return LyapunovCertificate(
        V=lambda t, x: 0.5 * float(np.dot(x, x)),
        alpha_lo=PowerFn(0.5, 2.0), alpha_hi=PowerFn(0.5, 2.0),
        annulus=BallPair(delta1, Delta1), c_bound=LinearFn(1.0),
        decay_k=2.0, grad=lambda t, x: (0.0, np.asarray(x, dtype=float)))


def unit_beta2():
    return ProductKL(LinearFn(1.0), rate=1.0)


def linear_cascade():
    f1 = ParameterizedSystem(1, 0, lambda t, x, th: -x, vectorized=True)
    f2 = ParameterizedSystem(1, 0, lambda t, x, th: -x, vectorized=True)

    def g(t, x, th):
        return np.ones(np.shape(x)[:-1] + (1, 1))

    return CascadeSystem(f1, f2, g)


class TestFindDecayTime:
    def test_product_form(self):
        beta2 = unit_beta2()
        t1 = find_decay_time(beta2, 2.0, 0.05)
        assert t1 == pytest.approx(math.log(2.0 / 0.05), abs=1e-5)

    def test_immediate(self):
        assert find_decay_time(unit_beta2(), 0.01, 0.05) == 0.0

    def test_unreachable_level(self):
        with pytest.raises(RootFindError):
            find_decay_time(unit_beta2(), 2.0, 0.0, t_max=50.0)


class TestSynthesize:
    def test_zero_delta2_substitution(self):
        # delta2 = 0 with equal bounds: delta3 = 2*delta1, delta4 = 3*delta1
        beta2 = GridKL([0.0, 3.0], [0.0, 5.0, 10.0],
                       [[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
        est = synthesize_cascade_bound(
            exp_cert(delta1=0.1, Delta1=2.0), beta2, BallPair(0.0, 2.0),
            ConstantFn(1.0), lambda D1, D2: min(D1, D2), Delta0=0.5)
        assert est.delta3 == pytest.approx(0.2, rel=1e-9)
        assert est.delta4 == pytest.approx(0.3, rel=1e-9)
        assert est.delta == pytest.approx(0.3, rel=1e-9)

    def test_linear_cascade_hand_computed(self):
        # every constant derived by hand from the closed forms
        est = synthesize_cascade_bound(
            exp_cert(0.05, 2.0), unit_beta2(), BallPair(0.05, 2.0),
            ConstantFn(1.0), lambda D1, D2: D1, Delta0=0.5)
        sqrt, log = math.sqrt, math.log
        assert est.audit["cG"] == pytest.approx(2.0)
        assert est.Delta == pytest.approx(2.0)
        assert est.delta3 == pytest.approx(
            0.05 + sqrt(2 * (0.00125 + 0.05)) + sqrt(2 * 0.05), rel=1e-9)
        assert est.delta4 == pytest.approx(0.05 + 2 * sqrt(2 * (0.00125 + 0.1)),
                                           rel=1e-9)
        assert est.delta == pytest.approx(0.95, rel=1e-9)
        assert est.t1 == pytest.approx(log(40.0), abs=1e-5)
        assert est.t2 == pytest.approx(2 * log(40.0), abs=1e-5)
        # eta at s = 1, from the definition
        c3_1 = 2.0 * (1.0 + 0.05)
        eta_1 = (sqrt(2 * (0.00125 + c3_1 / 2)) + sqrt(2 * (0.5 + c3_1 / 2))
                 - sqrt(2 * (0.00125 + 0.05)) - sqrt(2 * 0.05))
        assert est.eta.eval(1.0) == pytest.approx(eta_1, rel=1e-9)
        assert est.eta.eval(0.0) == pytest.approx(0.0, abs=1e-12)
        # c3 has the forcing floor cG * delta2 at zero
        assert est.c3.eval(0.0) == pytest.approx(0.1, rel=1e-12)

    def test_shrinkage_in_inner_radii(self):
        deltas = []
        d1, d2 = 0.05, 0.05
        for _ in range(3):
            est = synthesize_cascade_bound(
                exp_cert(d1, 2.0), unit_beta2(), BallPair(d2, 2.0),
                ConstantFn(1.0), lambda D1, D2: D1, Delta0=0.01)
            deltas.append(est.delta)
            d1, d2 = d1 / 2.0, d2 / 2.0
        assert deltas[1] < deltas[0]
        assert deltas[2] < deltas[1]

    def test_monotone_in_ball_radii(self):
        d1s = [0.02, 0.04, 0.08, 0.16]
        d2s = [0.02, 0.04, 0.08, 0.16]
        prev_by_d2 = None
        for d1 in d1s:
            row = []
            for d2 in d2s:
                est = synthesize_cascade_bound(
                    exp_cert(d1, 4.0), unit_beta2(), BallPair(d2, 4.0),
                    ConstantFn(1.0), lambda D1, D2: D1, Delta0=0.01)
                row.append(est.delta)
            assert all(b >= a for a, b in zip(row, row[1:]))
            if prev_by_d2 is not None:
                assert all(r >= p for p, r in zip(prev_by_d2, row))
            prev_by_d2 = row
        Deltas = []
        for scale in [1.0, 2.0, 4.0]:
            est = synthesize_cascade_bound(
                exp_cert(0.02, 2.0 * scale), unit_beta2(),
                BallPair(0.02, 2.0 * scale), ConstantFn(1.0),
                lambda D1, D2: min(D1, D2), Delta0=0.01)
            Deltas.append(est.Delta)
        assert Deltas[0] < Deltas[1] < Deltas[2]

    def test_beta_dominates_beta2_and_kl_invariants(self):
        est = synthesize_cascade_bound(
            exp_cert(0.05, 2.0), unit_beta2(), BallPair(0.05, 2.0),
            ConstantFn(1.0), lambda D1, D2: D1, Delta0=0.5)
        beta2 = unit_beta2()
        for s in np.linspace(0.0, 2.0, 9):
            for t in np.linspace(0.0, 20.0, 9):
                assert est.beta(s, t) >= beta2(s, t) - 1e-15
        assert est.beta.check_grid_invariants(smax=2.0, tmax=30.0, n=40)

    def test_degenerate_inputs_rejected(self):
        cert = dataclasses.replace(exp_cert(0.05, 2.0),
                                   c_bound=LinearFn(50.0))
        with pytest.raises(DegenerateEstimateError):
            synthesize_cascade_bound(cert, unit_beta2(), BallPair(0.4, 2.0),
                                     ConstantFn(1.0), lambda D1, D2: D1,
                                     Delta0=0.5)

    def test_rate_form_rejected(self):
        with pytest.raises(PreconditionError):
            synthesize_cascade_bound(quadratic_cert(), unit_beta2(),
                                     BallPair(0.05, 2.0), ConstantFn(1.0),
                                     lambda D1, D2: D1, Delta0=0.01)


class _Scaled(KLBound):
    def __init__(self, inner, factor):
        self.inner = inner
        self.factor = factor

    def eval(self, s, t):
        return self.factor * self.inner.eval(s, t)

    def to_record(self):
        return {"form": "scaled", "factor": self.factor,
                "inner": self.inner.to_record()}


class TestValidate:
    def make_estimate(self):
        return synthesize_cascade_bound(
            exp_cert(0.05, 2.0), unit_beta2(), BallPair(0.05, 2.0),
            ConstantFn(1.0), lambda D1, D2: D1, Delta0=0.5)

    def test_no_violations_on_linear_cascade(self):
        est = self.make_estimate()
        v = validate_estimate(linear_cascade(), [], est, T=20.0,
                              n_samples=150, seed=9, t0_grid=(0.0, 5.0))
        assert v.holds
        assert v.meta["max_margin"] <= 0

    def test_scaled_bound_is_falsified(self):
        est = self.make_estimate()
        broken = dataclasses.replace(est, beta=_Scaled(est.beta, 1e-8))
        v = validate_estimate(linear_cascade(), [], broken, T=20.0,
                              n_samples=60, seed=9)
        assert not v.holds
        assert v.counterexample is not None

    def test_decoupled_usas_variant(self):
        # g = 0: forcing vanishes, the asymptotic variant's deltas shrink
        cert = exp_cert(0.0, 2.0)
        report = usas_variant_check(cert, unit_beta2(), BallPair(0.0, 2.0),
                                    ConstantFn(0.0), lambda D1, D2: D1,
                                    Delta0=0.5, eps_seq=(1e-1, 1e-2, 1e-3))
        assert report.deltas_decreasing
        assert report.estimates[-1].delta < 0.01
        v = validate_estimate(
            CascadeSystem(linear_cascade().f1, linear_cascade().f2,
                          lambda t, x, th: np.zeros(np.shape(x)[:-1] + (1, 1))),
            [], report.estimates[0], T=15.0, n_samples=60, seed=2)
        assert v.holds

    def test_usas_variant_rejects_bad_threshold(self):
        with pytest.raises(PreconditionError):
            usas_variant_check(exp_cert(0.0, 2.0), unit_beta2(),
                               BallPair(0.0, 2.0), ConstantFn(1.0),
                               lambda D1, D2: D1, Delta0=5.0)


class TestFiniteDifferenceGrad:
    def test_matches_analytic(self):
        V = lambda t, x: math.sin(t) + float(np.dot(x, x))
        dvdt, dvdx = finite_difference_grad(V, 0.3, np.array([1.0, -2.0]))
        assert dvdt == pytest.approx(math.cos(0.3), rel=1e-6)
        np.testing.assert_allclose(dvdx, [2.0, -4.0], rtol=1e-6)
