class SqueezeLabError(Exception):
    pass


class NormalizationError(SqueezeLabError):
    """Thrown if a wavefunction's L2 norm deviates from one beyond tolerance"""
    pass


class BoundaryLeakageError(SqueezeLabError):
    """Thrown if a packet reaches the edges of the box above the decay threshold"""
    pass


class GridMismatchError(SqueezeLabError):
    pass


class PhaseUnwrapError(SqueezeLabError):
    """Thrown if adjacent phase increments are too large to unwrap reliably"""
    pass


class ProfileError(SqueezeLabError):
    pass


class QuadratureConvergenceError(SqueezeLabError):
    pass


class SingularDispersionError(SqueezeLabError):
    """Thrown if the dispersion collapses towards zero during integration"""
    pass


class IntegrationError(SqueezeLabError):
    pass


class ExtrapolationError(SqueezeLabError):
    pass


class SupportViolationError(SqueezeLabError):
    pass


class MatrixExponentialError(SqueezeLabError):
    pass


class ExclusionError(SqueezeLabError):
    """Thrown if too many sampled paths leave the profile support"""
    pass


class TimeGridMismatchError(SqueezeLabError):
    pass
