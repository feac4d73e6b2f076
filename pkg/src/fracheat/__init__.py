"""Pseudospectral tools for the forced fractional semilinear heat equation.

Spectral fields on periodic boxes, Lorentz and Besov-Lorentz norms, Picard
iteration for the Duhamel formulation, and a harness that measures the
constants of the associated function-space estimates.
"""

__version__ = "0.1.0"

from .spectral import (  # noqa: E402
    Grid,
    ModelParams,
    PhysicalField,
    SpectralField,
    c_T_multiplier,
    duhamel_linear_multiplier,
    forward_transform,
    inverse_transform,
    semigroup_apply,
)
from .lorentz import NormSpec, lorentz_norm, uniformly_local_lorentz_norm  # noqa: E402
from .besov import besov_lorentz_norm, build_partition  # noqa: E402
from .solver import SolverConfig, picard_solve, initial_data_evolve  # noqa: E402

__all__ = [
    "__version__",
    "Grid",
    "ModelParams",
    "PhysicalField",
    "SpectralField",
    "NormSpec",
    "SolverConfig",
    "forward_transform",
    "inverse_transform",
    "semigroup_apply",
    "duhamel_linear_multiplier",
    "c_T_multiplier",
    "lorentz_norm",
    "uniformly_local_lorentz_norm",
    "besov_lorentz_norm",
    "build_partition",
    "picard_solve",
    "initial_data_evolve",
]
