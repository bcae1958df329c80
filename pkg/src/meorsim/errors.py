"""Exception types raised across the simulator."""


class MeorsimError(Exception):
    """Base class for all simulator errors."""


class InvalidGeometryError(MeorsimError):
    """Non-positive lengths/areas or zero element counts in a mesh request."""


class ConfigError(MeorsimError):
    """Bad, missing or inconsistent configuration input."""


class DegenerateMobilityError(MeorsimError):
    """Both phase mobilities vanished at some evaluation point."""


class InvalidStateError(MeorsimError):
    """A physical state left its admissible range (e.g. sigma_ow <= 0)."""


class IllPosedProblemError(MeorsimError):
    """The boundary-condition set does not pin the solution (pure Neumann)."""


class AssemblyError(MeorsimError):
    """Inconsistent coefficient blocks or rank-deficient constraints."""


class SolverError(MeorsimError):
    """Linear or nonlinear solve failed beyond recovery."""


class MetricError(MeorsimError):
    """Error metric requested on series with no usable overlap."""
