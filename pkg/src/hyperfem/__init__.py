"""Nonlinear finite elements for compressible hyperelasticity.

The package provides a total-Lagrangian one-field formulation for the
flatland, plane strain, plane stress, and three-dimensional regimes, a
three-field mixed formulation for the nearly incompressible non-plane-stress
regimes, and a quadrature-point condensation that enforces the plane stress
condition S33 = 0 through a nested Newton iteration with a consistently
linearised in-plane tangent.
"""

from .errors import (
    ConfigError,
    ConstraintConflict,
    DimensionMismatch,
    HyperFemError,
    InvertedElement,
    LinearSolveFailed,
    NewtonDiverged,
    NoConvergence,
    NonPhysicalRoot,
    NonPositiveJ,
    NonSPD,
    PlacementFailed,
    SingularCondensation,
    SingularSystem,
    SingularTensor,
    UnsupportedModel,
    UnsupportedRegime,
)

__version__ = "0.1.0"
