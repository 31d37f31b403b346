"""Simulation and stability certification of parameterized cascaded ODE
systems.

Empirical side: sampling-based verdicts for uniform stability /
attractivity / boundedness of balls, parameter D-set estimation, and
semiglobal-practical schedules. Constructive side: Lyapunov-certificate
transformation, comparison-lemma trajectory bounds, and the cascade
synthesis pipeline producing explicit (delta, Delta, beta) estimates, with
Monte-Carlo validation. Includes a PID-controlled manipulator with DC-motor
actuators as a worked case study and a scenario-driven CLI.
"""

from . import cascade_synth, certcheck, compfn, robotlab, sysmodel
from .cascade_synth import (
    LyapunovCertificate,
    SynthesizedEstimate,
    lemma2_bound,
    prop_bound,
    synthesize_cascade_bound,
    transform_lyapunov,
    validate_estimate,
)
from .certcheck import BallPair, StabilityVerdict, set_distance
from .compfn import (
    ComparisonFunction,
    KLBound,
    compose,
    fit_K_envelope,
    fit_L_envelope,
    inverse,
    kl_from_US_UA,
)
from .sysmodel import CascadeSystem, ParameterizedSystem, Trajectory, integrate

__version__ = "0.1.0"
