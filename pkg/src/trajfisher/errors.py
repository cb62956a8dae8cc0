"""Exception hierarchy. Every error carries a plain message; none are retried."""


class TrajFisherError(ValueError):
    pass


# qstate
class NonHermitian(TrajFisherError):
    pass


class TraceNotOne(TrajFisherError):
    pass


class NotPositive(TrajFisherError):
    pass


class WrongDim(TrajFisherError):
    pass


class DimensionMismatch(TrajFisherError):
    pass


# fisher
class NotNormalized(TrajFisherError):
    pass


class DerivativeInconsistent(TrajFisherError):
    """A zero-eigenvalue subspace of rho carries a nonzero derivative (rank change)."""


class InconsistentPureDerivative(TrajFisherError):
    pass


class SingularOutcome(TrajFisherError):
    """Zero-probability outcome with nonzero derivative: the CFI diverges."""


# channels
class TooManyJumps(TrajFisherError):
    pass


class OutsideValidity(TrajFisherError):
    pass


class UnsupportedCombination(TrajFisherError):
    pass


# qecmon
class UndetectablePattern(TrajFisherError):
    pass


# estimate
class ZeroLikelihood(TrajFisherError):
    pass


class AllZero(TrajFisherError):
    pass


class BoundaryMaximum(TrajFisherError):
    pass


# cli
class ConfigInvalid(TrajFisherError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
