"""Named systems and parameter oracles available to scenario files.

A scenario's ``system`` block selects a builtin by name and passes its
construction options; tuning parameters theta stay runtime inputs so the
same builtin serves simulation, D-set grids, and schedule checks.
"""

from __future__ import annotations

import numpy as np

from . import robotlab
from .errors import ScenarioError
from .sysmodel import CascadeSystem, ParameterizedSystem


def _scalar_affine(opts):
    """dx = theta0 * x + theta1."""
    return ParameterizedSystem(
        1, 2, lambda t, x, th: th[0] * x + th[1], name="scalar-affine",
        vectorized=True)


def _scalar_tunable_offset(opts):
    """dx = -theta0 * x + offset, offset fixed at build time."""
    b = float(opts.get("offset", 0.1))
    return ParameterizedSystem(
        1, 1, lambda t, x, th: -th[0] * x + b, name="scalar-tunable-offset",
        vectorized=True)


def _linear_cascade(opts):
    """dx1 = -theta0 x1 + g0 x2, dx2 = -theta1 x2."""
    g0 = float(opts.get("gain", 1.0))
    f1 = ParameterizedSystem(1, 1, lambda t, x, th: -th[0] * x,
                             name="leaky-1", vectorized=True)
    f2 = ParameterizedSystem(1, 1, lambda t, x, th: -th[0] * x,
                             name="leaky-2", vectorized=True)

    def g(t, x, th):
        return np.full(np.shape(x)[:-1] + (1, 1), g0)

    return CascadeSystem(f1, f2, g, name="linear-cascade")


def _robot_pieces(opts):
    params = robotlab.TwoLinkParams(**opts.get("plant", {}))
    model = robotlab.two_link_arm(params)
    motor = robotlab.MotorModel(**opts.get("motor", {}))
    q_star = np.asarray(opts.get("q_star", robotlab._load_constants()["q_star"]),
                        dtype=float)
    if "gains" in opts:
        g = opts["gains"]
        gains = robotlab.PidGains.from_kp_prime(
            g["kp_prime"], g["kd"], g["ki"], g["eps1"], g["eps2"])
    else:
        gains = robotlab.gain_schedule(float(opts.get("Delta1", 1.0)))
    return model, motor, gains, q_star


def _robot_cascade(opts):
    model, motor, gains, q_star = _robot_pieces(opts)
    return robotlab.closed_loop_cascade(model, motor, gains, q_star)


def _robot_x1(opts):
    return _robot_cascade(opts).f1


SYSTEMS = {
    "scalar_affine": _scalar_affine,
    "scalar_tunable_offset": _scalar_tunable_offset,
    "linear_cascade": _linear_cascade,
    "robot_cascade": _robot_cascade,
    "robot_x1": _robot_x1,
}


def build_system(block: dict, path: str = "system"):
    if not isinstance(block, dict) or "builtin" not in block:
        raise ScenarioError(path, "expected an object with a 'builtin' name")
    name = block["builtin"]
    try:
        factory = SYSTEMS[name]
    except KeyError:
        raise ScenarioError(f"{path}.builtin",
                            f"unknown builtin {name!r}; available: "
                            f"{sorted(SYSTEMS)}") from None
    return factory(block)


def theta_for(block: dict, sys_obj) -> np.ndarray:
    theta = np.asarray(block.get("theta", []), dtype=float)
    m = sys_obj.m
    if theta.shape != (m,):
        raise ScenarioError("system.theta",
                            f"builtin {block.get('builtin')!r} needs {m} "
                            f"parameter(s), got {theta.size}")
    return theta


# -- parameter oracles for schedule checks ----------------------------------


def _oracle_inverse_delta(opts):
    scale = float(opts.get("scale", 1.0))
    return lambda delta, Delta: [scale / delta]


def _oracle_fixed(opts):
    theta = [float(v) for v in opts.get("theta", [])]
    return lambda delta, Delta: theta


def _oracle_robot_schedule(opts):
    def oracle(delta, Delta):
        return robotlab.x1_theta(robotlab.gain_schedule(Delta))
    return oracle


ORACLES = {
    "inverse_delta": _oracle_inverse_delta,
    "fixed": _oracle_fixed,
    "robot_gain_schedule": _oracle_robot_schedule,
}


def build_oracle(block: dict, path: str = "oracle"):
    if not isinstance(block, dict) or "name" not in block:
        raise ScenarioError(path, "expected an object with an oracle 'name'")
    name = block["name"]
    try:
        return ORACLES[name](block)
    except KeyError:
        raise ScenarioError(f"{path}.name",
                            f"unknown oracle {name!r}; available: "
                            f"{sorted(ORACLES)}") from None
