"""Produce the robot calibration data shipped in uspas/data/robot_constants.json.

Three stages:
  1. Standing-assumption bounds (d_m, d_M, k_c, k_g) by dense sampling of
     the 2-link plant, with a safety margin.
  2. Gain-schedule constants: for each startup radius, falsify-then-bisect
     the smallest gain scale whose Lyapunov decrease target holds on
     sampled states, then fit a dominating affine law with headroom.
  3. Demonstration horizons: measured worst-case convergence times of the
     scheduled closed loop, padded.

Run from the repository root:  python3 scripts/calibrate_robot.py
"""

import json
import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from uspas.robotlab import (  # noqa: E402
    MotorModel,
    PidGains,
    ScheduleConstants,
    TwoLinkParams,
    analysis_epsilons,
    decrease_margin,
    gain_schedule,
    standing_bounds_probe,
    two_link_arm,
    two_link_fast_stacked,
)
from uspas.sysmodel import integrate_batch_rk4  # noqa: E402

OUT = pathlib.Path(__file__).resolve().parents[1] / "src/uspas/data/robot_constants.json"

Q_STAR = np.array([0.3, -0.4])
DELTA1_GRID = (1.0, 5.0, 10.0)
CAL_TOL = 0.05       # decrease target slack enforced during calibration
N_FALSIFY = 4000
GAIN_RATIOS = {"kd": 0.25, "kp": 1.0, "ki": 0.65}  # relative to kp'


def sample_ball(rng, dim, radius, count, r_min_frac=0.01):
    z = rng.standard_normal((count, dim))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    r = radius * np.exp(rng.uniform(np.log(r_min_frac), 0.0, count))
    return z * r[:, None]


def stage1_bounds():
    probe_model = two_link_arm(TwoLinkParams(), bounds={"d_m": 1.0, "d_M": 1.0,
                                                        "k_c": 1.0, "k_g": 1.0})
    probe = standing_bounds_probe(probe_model, n_probes=20000, seed=1)
    bounds = {
        "d_m": probe["eig_min"] * 0.98,
        "d_M": probe["eig_max"] * 1.02,
        "k_c": probe["c_over_qd_max"] * 1.02,
        "k_g": probe["g_jac_max"] * 1.02,
    }
    print("stage 1 bounds:", bounds)
    return bounds


def decrease_holds(model, gains, Delta1, seed, n=N_FALSIFY, tol=CAL_TOL):
    rng = np.random.default_rng(seed)
    X = sample_ball(rng, 3 * model.n, Delta1, n)
    return float(np.max(decrease_margin(model, gains, Q_STAR, X, rel_tol=tol)))


def gains_from_scale(p, Delta1):
    eps1, eps2 = analysis_epsilons(Delta1)
    return PidGains.from_kp_prime(p, GAIN_RATIOS["kd"] * p,
                                  GAIN_RATIOS["ki"] * p, eps1, eps2)


def stage2_schedule(model):
    per_radius = {}
    for Delta1 in DELTA1_GRID:
        lo = None
        p = 0.3 * model.k_g  # well below the gravity-dominance threshold
        for _ in range(30):
            worst = decrease_holds(model, gains_from_scale(p, Delta1), Delta1,
                                   seed=11)
            if worst <= 0.0:
                break
            lo, p = p, p * 1.3
        else:
            raise RuntimeError(f"no passing gain scale found for {Delta1}")
        hi = p
        if lo is None:
            lo = hi / 1.3
        for _ in range(16):
            mid = 0.5 * (lo + hi)
            if decrease_holds(model, gains_from_scale(mid, Delta1), Delta1,
                              seed=11) <= 0.0:
                hi = mid
            else:
                lo = mid
        # positive definiteness of V1 needs kp' above the gravity stiffness
        per_radius[Delta1] = max(hi, 1.1 * model.k_g)
        print(f"stage 2 Delta1={Delta1}: decrease threshold kp'={hi:.2f}, "
              f"floored to {per_radius[Delta1]:.2f}")

    def affine_fit(values):
        d = np.array(DELTA1_GRID)
        v = np.array(values)
        b = max(0.0, float(v[-1] - v[0]) / float(d[-1] - d[0]))
        a = float(np.max(v - b * d))
        return a * 1.10, b * 1.10

    kp_vals = [per_radius[D] for D in DELTA1_GRID]
    kd_vals = [GAIN_RATIOS["kd"] * v for v in kp_vals]
    ki_vals = [GAIN_RATIOS["ki"] * v for v in kp_vals]
    a_p, b_p = affine_fit(kp_vals)
    a_d, b_d = affine_fit(kd_vals)
    a_i, b_i = affine_fit(ki_vals)
    schedule = {"a_d": a_d, "b_d": b_d, "a_p": a_p, "b_p": b_p,
                "a_i": a_i, "b_i": b_i}
    print("stage 2 schedule:", schedule)

    consts = ScheduleConstants(**schedule)
    for Delta1 in DELTA1_GRID:
        worst = decrease_holds(model, gain_schedule(Delta1, consts), Delta1,
                               seed=99, tol=CAL_TOL * 0.8)
        print(f"stage 2 verify Delta1={Delta1}: worst margin {worst:.3e}")
        if worst > 0:
            raise RuntimeError("scheduled gains fail the decrease target")
    return schedule


def stage3_horizons(schedule):
    motor = MotorModel()
    consts = ScheduleConstants(**schedule)
    horizons = {}
    for Delta1 in DELTA1_GRID:
        gains = gain_schedule(Delta1, consts)
        sys = two_link_fast_stacked(TwoLinkParams(), motor, gains, Q_STAR)
        rng = np.random.default_rng(5)
        n_probe, dim, n1 = 32, 8, 6
        z = rng.standard_normal((n_probe, dim))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        X0 = z * (0.9 * Delta1)  # worst case: start on the sphere
        T_probe = 900.0
        h = 1e-3
        reach_time = np.full(n_probe, np.inf)
        step_counter = [0]

        def poll(X):
            step_counter[0] += 500
            now = step_counter[0] * h
            hit = np.linalg.norm(X[:, :n1], axis=1) <= 1e-3
            reach_time[hit & ~np.isfinite(reach_time)] = now
            return bool(np.isfinite(reach_time).all())

        integrate_batch_rk4(sys, 0.0, X0, np.array([]), T_probe, h=h,
                            h_out_max=T_probe / 400.0, stop_when=poll,
                            check_every=500)
        worst = float(np.max(reach_time))
        if not np.isfinite(worst):
            raise RuntimeError(f"no convergence within probe horizon at "
                               f"Delta1={Delta1}")
        horizons[str(Delta1)] = round(worst * 1.5 + 5.0, 1)
        print(f"stage 3 Delta1={Delta1}: worst reach {worst:.1f}s "
              f"-> horizon {horizons[str(Delta1)]}")
    return horizons


def main():
    bounds = stage1_bounds()
    model = two_link_arm(TwoLinkParams(), bounds=bounds)
    schedule = stage2_schedule(model)
    horizons = stage3_horizons(schedule)
    data = {
        "plant": {"m1": 1.0, "m2": 1.0, "l1": 1.0, "l2": 1.0,
                  "lc1": 0.5, "lc2": 0.5, "grav": 9.81},
        "q_star": Q_STAR.tolist(),
        "bounds": bounds,
        "schedule": schedule,
        "demo_horizons": horizons,
        "calibration": {"Delta1_grid": list(DELTA1_GRID),
                        "decrease_slack": CAL_TOL,
                        "n_falsify": N_FALSIFY,
                        "gain_ratios": GAIN_RATIOS,
                        "seeds": [11, 99, 5]},
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    print("wrote", OUT)


if __name__ == "__main__":
    main()
