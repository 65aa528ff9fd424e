"""Exception types shared across the package."""


class CtsmError(Exception):
    """Base class for all package-specific errors."""


class IndefiniteMatrix(CtsmError):
    """A matrix required to be positive semi-definite has a genuinely negative eigenvalue."""


class SingularCovariance(CtsmError):
    """A state covariance that must be inverted is singular."""


class ConstraintViolation(CtsmError):
    """A parameter value is outside its admissible sign/range."""


class PSDViolation(CtsmError):
    """No admissible variance level keeps the diffusion covariance positive semi-definite."""


class OdeBlowup(CtsmError):
    """A loading coordinate exceeded the magnitude guard during integration."""


class OutOfGrid(CtsmError):
    """A maturity was requested outside the tabulated loading grid."""


class SingularInnovation(CtsmError):
    """The innovation covariance is numerically singular on some date."""


class ParseError(CtsmError):
    """An input file is malformed; the message carries row/column context."""


class EmptyPanel(CtsmError):
    """An operation received a panel with no rows."""


class LengthMismatch(CtsmError):
    """Two paired sequences have different lengths."""


class ZeroDenominator(CtsmError):
    """A relative error metric hit a zero reference value."""


class FellerViolation(CtsmError):
    """The variance-process parameters do not keep the square-root scheme positive."""


class DegenerateObjective(CtsmError):
    """The likelihood was non-finite at every optimizer start point."""
