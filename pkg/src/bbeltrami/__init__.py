"""Numerical laboratory for b-Beltrami fields on flat b-manifolds T^2 x R and T^3."""

from __future__ import annotations

__version__ = "0.1.0"

from .bfield import (  # noqa: E402
    FieldVanishesError,
    GlobalTorusField,
    OffShellError,
    OutOfChartError,
    SurfaceMetric,
    SymmetricBField,
    beltrami_residual,
    contact_check,
    divergence_residual,
    eval_field,
    field_from_json,
    from_hamiltonian,
)
from .census import classify_equilibria, escape_census, globally_symmetric_spo  # noqa: E402
from .dynamics import ClassifyOptions, IntegrateOptions, classify_orbit, integrate, limit_set_estimate  # noqa: E402
from .spectral import (  # noqa: E402
    EmptyEigenspaceError,
    NewtonNonConvergence,
    discrete_laplace_beltrami,
    eigen_residual_check,
    enumerate_eigenspace,
    morse_audit,
    sample_eigenfunction,
)
from .trig import TrigPolynomial  # noqa: E402

__all__ = [
    "ClassifyOptions", "EmptyEigenspaceError", "FieldVanishesError", "GlobalTorusField", "IntegrateOptions",
    "NewtonNonConvergence", "OffShellError", "OutOfChartError", "SurfaceMetric", "SymmetricBField",
    "TrigPolynomial", "beltrami_residual", "classify_equilibria", "classify_orbit", "contact_check",
    "discrete_laplace_beltrami", "divergence_residual", "eigen_residual_check", "enumerate_eigenspace",
    "escape_census", "eval_field", "field_from_json", "from_hamiltonian", "globally_symmetric_spo",
    "integrate", "limit_set_estimate", "morse_audit", "sample_eigenfunction",
]
