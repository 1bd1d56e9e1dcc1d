"""Simulation and triage of apparent chaos in singular and nonsmooth planar flows."""

from .bifurcation import BifurcationDiagram, SweepSpec, feigenbaum_ratios, localize_doubling, sweep
from .diagnostics import (
    autocorrelation,
    detect_peaks,
    kaplan_yorke,
    lyapunov_spectrum,
    power_spectrum,
)
from .equivalence import AnnulusSpec, annulus_orbit_compare, reduction_consistency, scale_identity_check
from .integrate import IntegratorConfig, Termination, Trajectory, integrate, refinement_ladder
from .protocol import DiagnosticReport, Verdict, run_protocol
from .systems import SystemDef, cylindrical_project, eval_field, eval_regularized, make_system

__version__ = "0.1.0"

__all__ = [
    "AnnulusSpec",
    "BifurcationDiagram",
    "DiagnosticReport",
    "IntegratorConfig",
    "SweepSpec",
    "SystemDef",
    "Termination",
    "Trajectory",
    "Verdict",
    "annulus_orbit_compare",
    "autocorrelation",
    "cylindrical_project",
    "detect_peaks",
    "eval_field",
    "eval_regularized",
    "feigenbaum_ratios",
    "integrate",
    "kaplan_yorke",
    "localize_doubling",
    "lyapunov_spectrum",
    "make_system",
    "power_spectrum",
    "reduction_consistency",
    "refinement_ladder",
    "run_protocol",
    "scale_identity_check",
    "sweep",
]
