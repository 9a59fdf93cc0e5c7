"""Size and power diagnostics for autocorrelation- and heteroskedasticity-robust tests.

The package decides, for a given design and restriction, whether a robust
Wald-type test has size one or power zero under strongly correlated or
strongly heteroskedastic Gaussian errors, and estimates rejection
probabilities and calibrated critical values by simulation.
"""

from __future__ import annotations

from .diagnostics import (
    DiagnosticReport,
    Verdict,
    audit,
    audit_ar1_weighted,
    audit_ar2,
    audit_gls,
    audit_het,
    estimate_k_bounds,
    genericity_probe,
)
from .estimators import HetVariant, LagWindow, RhoEstimatorSpec
from .model import LinearModel, Restriction, Tolerances
from .montecarlo import (
    calibrate_critical,
    elliptical_null_check,
    power_probe,
    rejection_probability,
    size_curve_ar1,
)
from .statistics import Family, TestDefinition, build_adjusted, evaluate, prepare
from .streams import McConfig

__version__ = "0.1.0"

__all__ = [
    "DiagnosticReport",
    "Family",
    "HetVariant",
    "LagWindow",
    "LinearModel",
    "McConfig",
    "Restriction",
    "RhoEstimatorSpec",
    "TestDefinition",
    "Tolerances",
    "Verdict",
    "audit",
    "audit_ar1_weighted",
    "audit_ar2",
    "audit_gls",
    "audit_het",
    "build_adjusted",
    "calibrate_critical",
    "elliptical_null_check",
    "estimate_k_bounds",
    "evaluate",
    "genericity_probe",
    "power_probe",
    "prepare",
    "rejection_probability",
    "size_curve_ar1",
]
