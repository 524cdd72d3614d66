"""Exception hierarchy for the solver stack.

Every domain failure derives from :class:`HyperFemError` so callers can
distinguish physics/numerics problems from programming errors.
"""


class HyperFemError(Exception):
    """Base class for all package-specific failures."""


class SingularTensor(HyperFemError):
    """Matrix inversion requested on a (numerically) singular tensor."""


class NonSPD(HyperFemError):
    """A right Cauchy-Green tensor with non-positive determinant was supplied."""


class InvertedElement(HyperFemError):
    """det F <= 0 somewhere: local volume inversion."""


class DimensionMismatch(HyperFemError):
    """Tensor/material/regime dimensions are inconsistent."""


class NonPositiveJ(HyperFemError):
    """Volumetric energy evaluated at J <= 0."""


class UnsupportedModel(HyperFemError):
    """Operation needs a capability this material model lacks."""


class UnsupportedRegime(HyperFemError):
    """Formulation/regime combination is not defined."""


class NoConvergence(HyperFemError):
    """An iterative solve exhausted its iteration budget."""


class NonPhysicalRoot(HyperFemError):
    """The out-of-plane stretch was driven to C33 <= 0 despite safeguards."""


class SingularCondensation(HyperFemError):
    """Plane stress condensation has a (numerically) zero pivot dS33/dC33."""


class ConstraintConflict(HyperFemError):
    """Contradictory Dirichlet values prescribed on the same dof."""


class NewtonDiverged(HyperFemError):
    """The global Newton iteration failed to converge."""


class LinearSolveFailed(HyperFemError):
    """The sparse direct solve did not produce a usable solution."""


class SingularSystem(LinearSolveFailed):
    """The assembled system matrix is singular."""


class PlacementFailed(HyperFemError):
    """Random inclusion placement exceeded its rejection budget."""


class ConfigError(HyperFemError):
    """A run configuration failed validation; message carries the field path."""
