"""Spectral-Galerkin simulation of a bioconvection system.

An incompressible flow with concentration-dependent viscosity is coupled to
the transport of an upward-swimming microorganism concentration in a 2D
periodic channel with a rigid bottom and a free surface.  The package builds
eigenfunction bases of the Stokes and concentration operators, integrates the
coupled Galerkin coefficient systems in time, solves the associated auxiliary
and stationary problems, and monitors the energy-inequality machinery that
gates the small-data regime.
"""

from bioconvect.domain import (
    Domain,
    DomainSpec,
    Quadrature,
    ScalarField,
    TensorField,
    VectorField,
    check_interpolation_inequalities,
    h1_norm,
    load_field,
    lp_norm,
    make_domain,
    save_field,
    sym_gradient,
)

__version__ = "0.1.0"

__all__ = [
    "Domain",
    "DomainSpec",
    "Quadrature",
    "ScalarField",
    "TensorField",
    "VectorField",
    "check_interpolation_inequalities",
    "h1_norm",
    "load_field",
    "lp_norm",
    "make_domain",
    "save_field",
    "sym_gradient",
    "__version__",
]
