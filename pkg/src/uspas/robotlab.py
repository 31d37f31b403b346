"""Rigid-joint manipulator with DC-motor actuators under PID set-point
control, in both its physical form and the cascaded error form used by the
stability machinery.

Conventions for the cascade form: the driven state is x1 = (qtilde, qdot, s)
where qtilde = q - q_star and s = qtilde/eps1 + (g(q_star) - nu)/ki folds
the PID integrator into a damped coordinate; the driving state is the
current tracking error x2 = itilde, which the voltage law steers as
ditilde/dt = -(R + R')/L * itilde. All model evaluators broadcast over
leading batch axes.

Plant bounds (d_m, d_M, k_c, k_g) and the gain-schedule constants are
calibration data produced by scripts/calibrate_robot.py and shipped in
data/robot_constants.json.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .certcheck import BallPair
from .cascade_synth import LyapunovCertificate, prop_bound
from .compfn import ConstantFn, fit_K_envelope
from .errors import GainConfigError
from .sysmodel import CascadeSystem, ParameterizedSystem, integrate_batch_rk4


def _load_constants() -> dict:
    with resources.files("uspas.data").joinpath("robot_constants.json").open() as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Plant.


@dataclass(frozen=True)
class ManipulatorModel:
    """Evaluators for the joint-space Lagrangian model plus its standing
    bounds: d_m <= ||D(q)|| <= d_M, ||C(q, qd)|| <= k_c ||qd||,
    ||dg/dq|| <= k_g."""

    n: int
    inertia: object          # q -> (..., n, n)
    coriolis: object         # q, qd -> (..., n, n)
    gravity: object          # q -> (..., n)
    potential: object        # q -> (...)
    inertia_jac: object      # q -> (..., n, n, n), [..., k, i, j] = dD_ij/dq_k
    d_m: float
    d_M: float
    k_c: float
    k_g: float

    def inertia_dot(self, q, qd):
        dD = self.inertia_jac(q)
        return np.einsum("...kij,...k->...ij", dD, qd)


@dataclass(frozen=True)
class TwoLinkParams:
    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    lc1: float = 0.5
    lc2: float = 0.5
    grav: float = 9.81

    @property
    def I1(self):
        return self.m1 * self.l1 ** 2 / 12.0

    @property
    def I2(self):
        return self.m2 * self.l2 ** 2 / 12.0


def two_link_arm(params: TwoLinkParams | None = None,
                 bounds: dict | None = None) -> ManipulatorModel:
    """Planar 2R arm with uniform-rod links; joint angles measured from the
    horizontal, gravity along -y."""
    p = params or TwoLinkParams()
    if bounds is None:
        bounds = _load_constants()["bounds"]
    a1 = p.m1 * p.lc1 ** 2 + p.I1 + p.m2 * (p.l1 ** 2 + p.lc2 ** 2) + p.I2
    a2 = p.m2 * p.l1 * p.lc2
    a3 = p.m2 * p.lc2 ** 2 + p.I2
    b1 = (p.m1 * p.lc1 + p.m2 * p.l1) * p.grav
    b2 = p.m2 * p.lc2 * p.grav

    def inertia(q):
        q = np.asarray(q, dtype=float)
        c2 = np.cos(q[..., 1])
        d11 = a1 + 2.0 * a2 * c2
        d12 = a3 + a2 * c2
        d22 = np.broadcast_to(a3, c2.shape)
        row1 = np.stack([d11, d12], axis=-1)
        row2 = np.stack([d12, d22], axis=-1)
        return np.stack([row1, row2], axis=-2)

    def coriolis(q, qd):
        q = np.asarray(q, dtype=float)
        qd = np.asarray(qd, dtype=float)
        h = -a2 * np.sin(q[..., 1])
        qd1, qd2 = qd[..., 0], qd[..., 1]
        row1 = np.stack([h * qd2, h * (qd1 + qd2)], axis=-1)
        row2 = np.stack([-h * qd1, np.zeros_like(qd1)], axis=-1)
        return np.stack([row1, row2], axis=-2)

    def gravity(q):
        q = np.asarray(q, dtype=float)
        q1, q12 = q[..., 0], q[..., 0] + q[..., 1]
        return np.stack([b1 * np.cos(q1) + b2 * np.cos(q12),
                         b2 * np.cos(q12)], axis=-1)

    def potential(q):
        q = np.asarray(q, dtype=float)
        return b1 * np.sin(q[..., 0]) + b2 * np.sin(q[..., 0] + q[..., 1])

    def inertia_jac(q):
        q = np.asarray(q, dtype=float)
        s2 = np.sin(q[..., 1])
        z = np.zeros_like(s2)
        dq1 = np.stack([np.stack([z, z], axis=-1),
                        np.stack([z, z], axis=-1)], axis=-2)
        dq2 = np.stack([np.stack([-2.0 * a2 * s2, -a2 * s2], axis=-1),
                        np.stack([-a2 * s2, z], axis=-1)], axis=-2)
        return np.stack([dq1, dq2], axis=-3)

    return ManipulatorModel(2, inertia, coriolis, gravity, potential,
                            inertia_jac, **bounds)


@dataclass(frozen=True)
class MotorModel:
    """n identical DC motors: L di/dt + R i + k_b qd = v, torque u = k_t i.
    R_prime is the current-error feedback gain of the voltage law."""

    L: float = 0.01
    R: float = 1.0
    R_prime: float = 9.0
    k_b: float = 0.1
    k_t: float = 1.0

    def __post_init__(self):
        if min(self.L, self.R, self.R_prime, self.k_b, self.k_t) <= 0:
            raise ValueError("motor constants must be positive")

    @property
    def error_rate(self):
        return (self.R + self.R_prime) / self.L


# ---------------------------------------------------------------------------
# Control law and gains.


@dataclass(frozen=True)
class PidGains:
    kp: float
    kd: float
    ki: float
    eps1: float
    eps2: float

    def __post_init__(self):
        if min(self.kp, self.kd, self.ki, self.eps1, self.eps2) <= 0:
            raise GainConfigError("gains and analysis constants must be positive")
        if self.kp_prime <= 0:
            raise GainConfigError(
                f"kp' = kp - ki/eps1 = {self.kp_prime:g} must be positive")

    @property
    def kp_prime(self):
        return self.kp - self.ki / self.eps1

    @classmethod
    def from_kp_prime(cls, kp_prime, kd, ki, eps1, eps2):
        return cls(kp_prime + ki / eps1, kd, ki, eps1, eps2)


@dataclass(frozen=True)
class ScheduleConstants:
    """Affine gain schedule: gain = a + b * Delta1."""

    a_d: float
    b_d: float
    a_p: float
    b_p: float
    a_i: float
    b_i: float

    @classmethod
    def from_data(cls):
        return cls(**_load_constants()["schedule"])


def analysis_epsilons(Delta1: float):
    """Smallness rule for the analysis constants (calibrated on the 2-link
    benchmark)."""
    eps1 = min(0.1, 1.0 / (4.0 * Delta1))
    return eps1, eps1 / 4.0


def gain_schedule(Delta1: float, consts: ScheduleConstants | None = None) -> PidGains:
    """Gains affine in the startup radius: kd = a_d + b_d*Delta1,
    kp' = a_p + b_p*Delta1, ki = a_i + b_i*Delta1."""
    if Delta1 < 0:
        raise ValueError("Delta1 must be nonnegative")
    c = consts or ScheduleConstants.from_data()
    eps1, eps2 = analysis_epsilons(max(Delta1, 1e-9))
    return PidGains.from_kp_prime(c.a_p + c.b_p * Delta1,
                                  c.a_d + c.b_d * Delta1,
                                  c.a_i + c.b_i * Delta1, eps1, eps2)


def pid_torque(gains: PidGains, qtilde, qd, nu):
    """u* = -kp*qtilde - kd*qd + nu."""
    return -gains.kp * np.asarray(qtilde) - gains.kd * np.asarray(qd) + np.asarray(nu)


def pid_integrator_rhs(gains: PidGains, qtilde):
    """nu_dot = -ki * qtilde."""
    return -gains.ki * np.asarray(qtilde)


def voltage_law(motor: MotorModel, itilde, i_star, qd, di_star_dt):
    """Voltage command steering the current toward its reference.

    Negative feedback on the tracking error plus exact feedforward of the
    reference dynamics and back-emf; substituted into the motor equation it
    leaves ditilde/dt = -(R + R')/L * itilde.
    """
    return (-motor.R_prime * np.asarray(itilde) + motor.R * np.asarray(i_star)
            + motor.k_b * np.asarray(qd) + motor.L * np.asarray(di_star_dt))


def default_gravity_guess(model: ManipulatorModel, q_star):
    """Best-guess gravity vector: true value with +10% error on joint 1."""
    g = np.array(model.gravity(np.asarray(q_star, dtype=float)))
    g[0] *= 1.1
    return g


# ---------------------------------------------------------------------------
# Dynamics.


def robot_rhs(model: ManipulatorModel, t, state, u):
    """Manipulator acceleration under applied torques:
    qdd = D(q)^{-1} (u - C(q,qd) qd - g(q))."""
    state = np.asarray(state, dtype=float)
    n = model.n
    q, qd = state[..., :n], state[..., n:]
    rhs = (np.asarray(u, dtype=float)
           - np.einsum("...ij,...j->...i", model.coriolis(q, qd), qd)
           - model.gravity(q))
    qdd = np.linalg.solve(model.inertia(q), rhs[..., None])[..., 0]
    return np.concatenate([qd, qdd], axis=-1)


def unforced_arm(model: ManipulatorModel) -> ParameterizedSystem:
    return ParameterizedSystem(2 * model.n, 0,
                               lambda t, x, th: robot_rhs(model, t, x, 0.0),
                               name="unforced-arm", vectorized=True)


def arm_energy(model: ManipulatorModel, state):
    state = np.asarray(state, dtype=float)
    n = model.n
    q, qd = state[..., :n], state[..., n:]
    kinetic = 0.5 * np.einsum("...i,...ij,...j->...", qd, model.inertia(q), qd)
    return kinetic + model.potential(q)


def x1_theta(gains: PidGains) -> np.ndarray:
    """Parameter vector of the driven subsystem: (kd, kp', ki, eps1)."""
    return np.array([gains.kd, gains.kp_prime, gains.ki, gains.eps1])


def _x1_accel(model, q_star, qt, qd, s, th1, extra_torque=None):
    kd, kpp, ki = th1[0], th1[1], th1[2]
    q = q_star + qt
    torque = (-np.einsum("...ij,...j->...i", model.coriolis(q, qd), qd)
              - (model.gravity(q) - model.gravity(q_star))
              - kpp * qt - kd * qd - ki * s)
    if extra_torque is not None:
        torque = torque + extra_torque
    return np.linalg.solve(model.inertia(q), torque[..., None])[..., 0]


def closed_loop_cascade(model: ManipulatorModel, motor: MotorModel,
                        gains: PidGains, q_star) -> CascadeSystem:
    """Closed loop in cascaded error coordinates.

    x1 = (qtilde, qdot, s) obeys the s-form PID loop
        D qdd + C qd + g(q) - g(q*) + kp' qtilde + kd qd + ki s = k_t itilde
        s_dot = qtilde + qd / eps1
    and is driven by x2 = itilde through the acceleration channel with
    interconnection matrix k_t D(q)^{-1}; x2 obeys
    ditilde/dt = -(R + R')/L itilde. theta1 = (kd, kp', ki, eps1),
    theta2 = (R_prime,).
    """
    if gains.kp_prime <= 0:
        raise GainConfigError("kp' must be positive")
    q_star = np.asarray(q_star, dtype=float)
    n = model.n

    def f1_rhs(t, x1, th1):
        x1 = np.asarray(x1, dtype=float)
        qt, qd, s = x1[..., :n], x1[..., n:2 * n], x1[..., 2 * n:]
        qdd = _x1_accel(model, q_star, qt, qd, s, th1)
        sdot = qt + qd / th1[3]
        return np.concatenate([qd, qdd, sdot], axis=-1)

    def f2_rhs(t, x2, th2):
        return -((motor.R + th2[0]) / motor.L) * np.asarray(x2, dtype=float)

    def interconnection(t, x, theta):
        x = np.asarray(x, dtype=float)
        q = q_star + x[..., :n]
        Dinv = np.linalg.inv(model.inertia(q))
        shape = x.shape[:-1]
        block = np.zeros(shape + (3 * n, n))
        block[..., n:2 * n, :] = motor.k_t * Dinv
        return block

    f1 = ParameterizedSystem(3 * n, 4, f1_rhs, name="pid-arm", vectorized=True)
    f2 = ParameterizedSystem(n, 1, f2_rhs, name="current-error", vectorized=True)
    return CascadeSystem(f1, f2, interconnection, name="robot-cascade")


def robot_cascade_theta(gains: PidGains, motor: MotorModel) -> np.ndarray:
    return np.concatenate([x1_theta(gains), [motor.R_prime]])


def robot_stacked_system(model: ManipulatorModel, motor: MotorModel,
                         gains: PidGains, q_star) -> ParameterizedSystem:
    """Flat stacked form of the cascade (single inertia solve per
    evaluation); agrees with composing `closed_loop_cascade` exactly."""
    q_star = np.asarray(q_star, dtype=float)
    n = model.n
    th1 = x1_theta(gains)

    def rhs(t, x, theta):
        x = np.asarray(x, dtype=float)
        qt, qd = x[..., :n], x[..., n:2 * n]
        s, it = x[..., 2 * n:3 * n], x[..., 3 * n:]
        qdd = _x1_accel(model, q_star, qt, qd, s, th1,
                        extra_torque=motor.k_t * it)
        sdot = qt + qd / gains.eps1
        itdot = -motor.error_rate * it
        return np.concatenate([qd, qdd, sdot, itdot], axis=-1)

    return ParameterizedSystem(4 * n, 0, rhs, name="robot-stacked",
                               vectorized=True)


def two_link_fast_stacked(params: TwoLinkParams, motor: MotorModel,
                          gains: PidGains, q_star) -> ParameterizedSystem:
    """Hand-fused stacked closed loop for the 2-link benchmark.

    Same vector field as ``robot_stacked_system`` over ``two_link_arm``
    (asserted in tests), written as flat elementwise operations with a
    determinant-form inertia solve so large batches integrate fast.
    """
    p = params
    a1 = p.m1 * p.lc1 ** 2 + p.I1 + p.m2 * (p.l1 ** 2 + p.lc2 ** 2) + p.I2
    a2 = p.m2 * p.l1 * p.lc2
    a3 = p.m2 * p.lc2 ** 2 + p.I2
    b1 = (p.m1 * p.lc1 + p.m2 * p.l1) * p.grav
    b2 = p.m2 * p.lc2 * p.grav
    q_star = np.asarray(q_star, dtype=float)
    kd, kpp, ki = gains.kd, gains.kp_prime, gains.ki
    inv_e1 = 1.0 / gains.eps1
    kt, err_rate = motor.k_t, motor.error_rate
    gs1 = b1 * math.cos(q_star[0]) + b2 * math.cos(q_star[0] + q_star[1])
    gs2 = b2 * math.cos(q_star[0] + q_star[1])

    def rhs(t, x, theta):
        x = np.asarray(x, dtype=float)
        qt1, qt2 = x[..., 0], x[..., 1]
        qd1, qd2 = x[..., 2], x[..., 3]
        s1, s2 = x[..., 4], x[..., 5]
        it1, it2 = x[..., 6], x[..., 7]
        q1, q2 = q_star[0] + qt1, q_star[1] + qt2
        c2, sn2 = np.cos(q2), np.sin(q2)
        d11, d12 = a1 + 2.0 * a2 * c2, a3 + a2 * c2
        h = -a2 * sn2
        cg2 = b2 * np.cos(q1 + q2)
        g1 = b1 * np.cos(q1) + cg2
        tau1 = (-(h * qd2 * qd1 + h * (qd1 + qd2) * qd2) - (g1 - gs1)
                - kpp * qt1 - kd * qd1 - ki * s1 + kt * it1)
        tau2 = (h * qd1 * qd1 - (cg2 - gs2)
                - kpp * qt2 - kd * qd2 - ki * s2 + kt * it2)
        det = d11 * a3 - d12 * d12
        return np.stack([qd1, qd2,
                         (a3 * tau1 - d12 * tau2) / det,
                         (d11 * tau2 - d12 * tau1) / det,
                         qt1 + qd1 * inv_e1, qt2 + qd2 * inv_e1,
                         -err_rate * it1, -err_rate * it2], axis=-1)

    return ParameterizedSystem(8, 0, rhs, name="robot-stacked-fast",
                               vectorized=True)


def direct_closed_loop(model: ManipulatorModel, motor: MotorModel,
                       gains: PidGains, q_star) -> ParameterizedSystem:
    """Physical closed loop in (q, qd, nu, i) coordinates: the PID law
    shapes the torque reference, the voltage law tracks the corresponding
    current reference (its feedforward uses the model acceleration)."""
    q_star = np.asarray(q_star, dtype=float)
    n = model.n

    def rhs(t, x, theta):
        x = np.asarray(x, dtype=float)
        q, qd = x[..., :n], x[..., n:2 * n]
        nu, i = x[..., 2 * n:3 * n], x[..., 3 * n:]
        qt = q - q_star
        u_star = pid_torque(gains, qt, qd, nu)
        i_star = u_star / motor.k_t
        u = motor.k_t * i
        qdd = robot_rhs(model, t, x[..., :2 * n], u)[..., n:]
        nu_dot = pid_integrator_rhs(gains, qt)
        di_star = (-gains.kp * qd - gains.kd * qdd + nu_dot) / motor.k_t
        v = voltage_law(motor, i - i_star, i_star, qd, di_star)
        di = (v - motor.R * i - motor.k_b * qd) / motor.L
        return np.concatenate([qd, qdd, nu_dot, di], axis=-1)

    return ParameterizedSystem(4 * n, 0, rhs, name="robot-direct",
                               vectorized=True)


def cascade_state_from_direct(model, motor, gains, q_star, state):
    """Exact change of variables (q, qd, nu, i) -> (qtilde, qd, s, itilde)."""
    state = np.asarray(state, dtype=float)
    n = model.n
    q_star = np.asarray(q_star, dtype=float)
    q, qd = state[..., :n], state[..., n:2 * n]
    nu, i = state[..., 2 * n:3 * n], state[..., 3 * n:]
    qt = q - q_star
    s = qt / gains.eps1 + (model.gravity(q_star) - nu) / gains.ki
    i_star = pid_torque(gains, qt, qd, nu) / motor.k_t
    return np.concatenate([qt, qd, s, i - i_star], axis=-1)


def direct_state_from_cascade(model, motor, gains, q_star, state):
    """Inverse change of variables (qtilde, qd, s, itilde) -> (q, qd, nu, i)."""
    state = np.asarray(state, dtype=float)
    n = model.n
    q_star = np.asarray(q_star, dtype=float)
    qt, qd = state[..., :n], state[..., n:2 * n]
    s, it = state[..., 2 * n:3 * n], state[..., 3 * n:]
    nu = model.gravity(q_star) - gains.ki * s + (gains.ki / gains.eps1) * qt
    i = it + pid_torque(gains, qt, qd, nu) / motor.k_t
    return np.concatenate([q_star + qt, qd, nu, i], axis=-1)


def initial_direct_state(model, motor, gains, q_star, q0, qd0, g_hat=None,
                         itilde0=None):
    """Physical startup: nu(0) = g_hat (the gravity guess) and, unless an
    initial current error is given, i(0) on the reference manifold."""
    q_star = np.asarray(q_star, dtype=float)
    q0 = np.asarray(q0, dtype=float)
    qd0 = np.asarray(qd0, dtype=float)
    nu0 = np.asarray(g_hat, dtype=float) if g_hat is not None \
        else default_gravity_guess(model, q_star)
    i_star = pid_torque(gains, q0 - q_star, qd0, nu0) / motor.k_t
    i0 = i_star + (np.zeros_like(i_star) if itilde0 is None
                   else np.asarray(itilde0, dtype=float))
    return np.concatenate([q0, qd0, nu0, i0])


# ---------------------------------------------------------------------------
# Robot Lyapunov function for the driven subsystem.


def robot_lyapunov(model: ManipulatorModel, gains: PidGains, q_star, x1):
    """Energy-like function for the x1 = (qtilde, qd, s) loop:

    V1 = qd' D qd / 2 + kp' |qt|^2 / 2 + U(q) - U(q*) - qt' g(q*)
         + eps1 ki |s|^2 / 2 + eps1 qt' D qd + eps2 s' D qd
    """
    x1 = np.asarray(x1, dtype=float)
    n = model.n
    q_star = np.asarray(q_star, dtype=float)
    qt, qd, s = x1[..., :n], x1[..., n:2 * n], x1[..., 2 * n:]
    q = q_star + qt
    D = model.inertia(q)
    Dqd = np.einsum("...ij,...j->...i", D, qd)
    sq = lambda a: np.einsum("...i,...i->...", a, a)
    dot = lambda a, b: np.einsum("...i,...i->...", a, b)
    return (0.5 * dot(qd, Dqd) + 0.5 * gains.kp_prime * sq(qt)
            + model.potential(q) - model.potential(q_star)
            - dot(qt, model.gravity(q_star))
            + 0.5 * gains.eps1 * gains.ki * sq(s)
            + gains.eps1 * dot(qt, Dqd) + gains.eps2 * dot(s, Dqd))


def robot_lyapunov_grad(model: ManipulatorModel, gains: PidGains, q_star, x1):
    """Analytic gradient of V1 with respect to (qtilde, qd, s)."""
    x1 = np.asarray(x1, dtype=float)
    n = model.n
    q_star = np.asarray(q_star, dtype=float)
    qt, qd, s = x1[..., :n], x1[..., n:2 * n], x1[..., 2 * n:]
    q = q_star + qt
    D = model.inertia(q)
    dD = model.inertia_jac(q)
    Dqd = np.einsum("...ij,...j->...i", D, qd)
    quad = np.einsum("...kij,...i,...j->...k", dD, qd, qd)
    mixed_qt = np.einsum("...kij,...i,...j->...k", dD, qt, qd)
    mixed_s = np.einsum("...kij,...i,...j->...k", dD, s, qd)
    d_qt = (0.5 * quad + gains.kp_prime * qt
            + model.gravity(q) - model.gravity(q_star)
            + gains.eps1 * (Dqd + mixed_qt) + gains.eps2 * mixed_s)
    d_qd = (Dqd + gains.eps1 * np.einsum("...ij,...j->...i", D, qt)
            + gains.eps2 * np.einsum("...ij,...j->...i", D, s))
    d_s = gains.eps1 * gains.ki * s + gains.eps2 * Dqd
    return np.concatenate([d_qt, d_qd, d_s], axis=-1)


def robot_lyapunov_rate(model: ManipulatorModel, gains: PidGains, q_star, x1,
                        itilde=None, motor: MotorModel | None = None):
    """V1_dot along the closed loop, by chain rule through the analytic
    gradient; itilde (with the motor's torque constant) adds the
    interconnection forcing."""
    x1 = np.asarray(x1, dtype=float)
    n = model.n
    q_star = np.asarray(q_star, dtype=float)
    qt, qd, s = x1[..., :n], x1[..., n:2 * n], x1[..., 2 * n:]
    th1 = x1_theta(gains)
    extra = None
    if itilde is not None:
        k_t = (motor or MotorModel()).k_t
        extra = k_t * np.asarray(itilde, dtype=float)
    qdd = _x1_accel(model, q_star, qt, qd, s, th1, extra_torque=extra)
    sdot = qt + qd / gains.eps1
    flow = np.concatenate([qd, qdd, sdot], axis=-1)
    grad = robot_lyapunov_grad(model, gains, q_star, x1)
    return np.einsum("...i,...i->...", grad, flow)


def decrease_margin(model, gains, q_star, x1, rel_tol=0.0):
    """V1_dot + min(kd/2, eps1 kp'/2, eps2 ki/2) * |x1|^2 * (1 - rel_tol);
    non-positive where the calibrated decrease target holds (itilde = 0)."""
    rate = robot_lyapunov_rate(model, gains, q_star, x1)
    coeff = min(gains.kd / 2.0, gains.eps1 * gains.kp_prime / 2.0,
                gains.eps2 * gains.ki / 2.0)
    x1 = np.asarray(x1, dtype=float)
    return rate + coeff * (1.0 - rel_tol) * np.einsum("...i,...i->...", x1, x1)


# ---------------------------------------------------------------------------
# Sampled structural checks.


def skew_symmetry_probe(model: ManipulatorModel, n_probes: int = 10000,
                        seed: int = 0) -> float:
    """max |x' (Dd - 2C) x| over random (q, qd, x) probes; zero for a
    Christoffel-consistent Coriolis matrix."""
    rng = np.random.default_rng(seed)
    q = rng.uniform(-np.pi, np.pi, (n_probes, model.n))
    qd = rng.uniform(-3.0, 3.0, (n_probes, model.n))
    x = rng.standard_normal((n_probes, model.n))
    N = model.inertia_dot(q, qd) - 2.0 * model.coriolis(q, qd)
    vals = np.einsum("...i,...ij,...j->...", x, N, x)
    return float(np.max(np.abs(vals)))


def gravity_gradient_probe(model: ManipulatorModel, n_probes: int = 2000,
                           seed: int = 0) -> float:
    """max finite-difference residual |g(q) - dU/dq|."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for q in rng.uniform(-np.pi, np.pi, (n_probes, model.n)):
        g = model.gravity(q)
        for k in range(model.n):
            h = 1e-6
            qp, qm = q.copy(), q.copy()
            qp[k] += h
            qm[k] -= h
            fd = (model.potential(qp) - model.potential(qm)) / (2 * h)
            worst = max(worst, abs(fd - g[k]))
    return worst


def standing_bounds_probe(model: ManipulatorModel, n_probes: int = 4000,
                          seed: int = 0) -> dict:
    """Sampled extremes of ||D||, eig(D), ||C||/||qd||, ||dg/dq||."""
    rng = np.random.default_rng(seed)
    q = rng.uniform(-np.pi, np.pi, (n_probes, model.n))
    qd = rng.standard_normal((n_probes, model.n))
    qd /= np.linalg.norm(qd, axis=1, keepdims=True)
    D = model.inertia(q)
    eigs = np.linalg.eigvalsh(D)
    C = model.coriolis(q, qd)
    c_norms = np.linalg.norm(C, ord=2, axis=(-2, -1))
    h = 1e-6
    jac_norms = []
    for qi in q[:: max(1, n_probes // 500)]:
        J = np.empty((model.n, model.n))
        for k in range(model.n):
            qp, qm = qi.copy(), qi.copy()
            qp[k] += h
            qm[k] -= h
            J[:, k] = (model.gravity(qp) - model.gravity(qm)) / (2 * h)
        jac_norms.append(np.linalg.norm(J, 2))
    return {"eig_min": float(eigs.min()), "eig_max": float(eigs.max()),
            "c_over_qd_max": float(c_norms.max()),
            "g_jac_max": float(max(jac_norms))}


def interconnection_gain_bound(model: ManipulatorModel,
                               motor: MotorModel) -> ConstantFn:
    """Constant bound on the interconnection matrix: k_t / d_m dominates
    ||k_t D(q)^{-1}|| for every q."""
    return ConstantFn(motor.k_t / model.d_m)


# ---------------------------------------------------------------------------
# Empirical certificate for the driven subsystem and boundedness radius.


def _x1_samples(rng, dim, Delta1, count, r_min_frac=0.01):
    z = rng.standard_normal((count, dim))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    r = Delta1 * np.exp(rng.uniform(math.log(r_min_frac), 0.0, count))
    return z * r[:, None]


def build_x1_certificate(model: ManipulatorModel, motor: MotorModel,
                         gains: PidGains, q_star, Delta1: float,
                         n_samples: int = 20000, seed: int = 0,
                         margin: float = 0.05) -> LyapunovCertificate:
    """Exponential-form certificate for the PID arm on H(0, Delta1), with
    quadratic sandwich bounds, decay rate, and gradient envelope estimated
    by sampling (empirical, like every verdict downstream of it)."""
    rng = np.random.default_rng(seed)
    q_star = np.asarray(q_star, dtype=float)
    X = _x1_samples(rng, 3 * model.n, Delta1 * (1 + margin), n_samples)
    V = robot_lyapunov(model, gains, q_star, X)
    if np.any(V <= 0):
        raise GainConfigError("V1 is not positive definite on the sampled "
                              "ball; increase kp' relative to k_g")
    r2 = np.einsum("ij,ij->i", X, X)
    a_lo = float(np.min(V / r2)) * (1.0 - margin)
    a_hi = float(np.max(V / r2)) * (1.0 + margin)
    rate = robot_lyapunov_rate(model, gains, q_star, X)
    k1 = float(np.min(-rate / V)) * (1.0 - margin)
    if k1 <= 0:
        raise GainConfigError("sampled decay rate is not positive; gains "
                              "are below the schedule thresholds")
    grads = np.linalg.norm(robot_lyapunov_grad(model, gains, q_star, X), axis=1)
    radii = np.linalg.norm(X, axis=1)
    order = np.argsort(radii)
    env_r, env_v = [], []
    running = 0.0
    for idx in order:
        running = max(running, grads[idx])
        env_r.append(radii[idx])
        env_v.append(running)
    keep = np.unique(np.geomspace(1, len(env_r), 60).astype(int) - 1)
    # conservative decimation: carry the running max of the *next* kept
    # radius backward so interpolation never dips below the true envelope
    pairs = [(env_r[keep[j]],
              env_v[keep[j + 1] if j + 1 < len(keep) else -1] * (1.0 + margin))
             for j in range(len(keep))]
    pairs.append((Delta1 * (1 + margin), env_v[-1] * (1.0 + margin)))
    c_bound = fit_K_envelope(pairs)

    from .compfn import PowerFn
    return LyapunovCertificate(
        V=lambda t, x: float(robot_lyapunov(model, gains, q_star, x)),
        alpha_lo=PowerFn(a_lo, 2.0), alpha_hi=PowerFn(a_hi, 2.0),
        annulus=BallPair(0.0, Delta1), c_bound=c_bound, decay_k=k1,
        grad=lambda t, x: (0.0, robot_lyapunov_grad(model, gains, q_star, x)),
        theta_star=x1_theta(gains))


def build_cascade_gamma(model: ManipulatorModel, motor: MotorModel,
                        gains: PidGains, q_star, Delta1: float,
                        w_current: float = 0.05, n_samples: int = 20000,
                        seed: int = 0, margin: float = 0.05):
    """Boundedness radius for the full cascade from the composite function
    W = V1 + w |itilde|^2 / 2, via the non-positive-derivative radius
    formula; returns (gamma_value, falsification_max) where the second
    entry is the sampled maximum of W_dot (non-positive when the route is
    sound)."""
    rng = np.random.default_rng(seed)
    q_star = np.asarray(q_star, dtype=float)
    dim = 4 * model.n
    X = _x1_samples(rng, dim, Delta1 * (1 + margin), n_samples)
    x1, it = X[:, :3 * model.n], X[:, 3 * model.n:]
    W = (robot_lyapunov(model, gains, q_star, x1)
         + 0.5 * w_current * np.einsum("ij,ij->i", it, it))
    r2 = np.einsum("ij,ij->i", X, X)
    a_lo = float(np.min(W / r2)) * (1.0 - margin)
    a_hi = float(np.max(W / r2)) * (1.0 + margin)
    rate = (robot_lyapunov_rate(model, gains, q_star, x1, itilde=it,
                                motor=motor)
            - w_current * motor.error_rate * np.einsum("ij,ij->i", it, it))
    from .compfn import PowerFn
    cert = LyapunovCertificate(
        V=lambda t, x: 0.0, alpha_lo=PowerFn(a_lo, 2.0),
        alpha_hi=PowerFn(a_hi, 2.0), annulus=BallPair(0.0, Delta1),
        rate_fn=PowerFn(1e-12, 2.0))
    gamma_value = prop_bound(cert, Delta1 * 1e-3, Delta1)
    return gamma_value, float(np.max(rate))


# ---------------------------------------------------------------------------
# Semiglobal convergence demonstration.


def semiglobal_demo(Delta1_list=(1.0, 5.0, 10.0), n_samples: int = 200,
                    seed: int = 0, conv_tol: float = 1e-3,
                    h: float = 1e-3, horizons: dict | None = None,
                    consts: ScheduleConstants | None = None,
                    params: TwoLinkParams | None = None,
                    motor: MotorModel | None = None,
                    q_star=(0.3, -0.4)) -> dict:
    """Scheduled-gain convergence study on the full robot cascade.

    For each startup radius, integrates a batch of initial states sampled
    uniformly in the 0.9*Delta1 ball (all cascade coordinates) and records
    the fraction whose driven-subsystem norm ||(qtilde, qd, s)|| reaches
    conv_tol within the horizon. Integration stops early once every member
    has converged. Horizons default to calibration data. The default step
    keeps a 2.8x stability margin against the motor pole while fitting the
    runtime budget; the slow modes it must resolve sit three decades lower.
    """
    params = params or TwoLinkParams()
    motor = motor or MotorModel()
    if horizons is None:
        horizons = {float(k): float(v)
                    for k, v in _load_constants()["demo_horizons"].items()}
    q_star = np.asarray(q_star, dtype=float)
    n1 = 6
    out = {}
    for Delta1 in Delta1_list:
        gains = gain_schedule(Delta1, consts)
        sys = two_link_fast_stacked(params, motor, gains, q_star)
        rng = np.random.default_rng(seed)
        dim = 8
        z = rng.standard_normal((n_samples, dim))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        r = 0.9 * Delta1 * rng.uniform(0.0, 1.0, n_samples) ** (1.0 / dim)
        X0 = z * r[:, None]
        reached = np.zeros(n_samples, dtype=bool)

        def all_converged(X):
            np.logical_or(reached, np.linalg.norm(X[:, :n1], axis=1) <= conv_tol,
                          out=reached)
            return bool(reached.all())

        T = horizons.get(float(Delta1), 1.5 * max(horizons.values(), default=200.0))
        times, states, status, _ = integrate_batch_rk4(
            sys, 0.0, X0, np.array([]), T, h=h, h_out_max=T / 400.0,
            stop_when=all_converged, check_every=500)
        norms = np.linalg.norm(states[:, :, :n1], axis=2)
        reached |= (norms.min(axis=1) <= conv_tol)
        reached &= status < 0  # escaped members never count as converged
        out[Delta1] = {
            "fraction_converged": float(np.mean(reached)),
            "n_samples": n_samples,
            "escaped": int(np.sum(status >= 0)),
            "stopped_at": float(times[-1]),
            "horizon": T,
            "gains": {"kd": gains.kd, "kp_prime": gains.kp_prime,
                      "ki": gains.ki, "eps1": gains.eps1, "eps2": gains.eps2},
        }
    return out
