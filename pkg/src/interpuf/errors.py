"""Exception hierarchy shared by every subsystem."""


class InterPUFError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(InterPUFError, ValueError):
    """A constructor or operation received an out-of-range parameter."""


class DimensionMismatchError(InterPUFError, ValueError):
    """Vector or matrix shapes disagree."""


class InfeasibleError(InterPUFError, ValueError):
    """A requested geometry cannot be realised (e.g. hop range on a tiny mesh)."""


class InsufficientStableBitsError(InterPUFError):
    """Fewer stable responses survived filtering than the digest needs."""


class SingularMatrixError(InterPUFError, ValueError):
    """A matrix required to be invertible over GF(2) is singular."""


class TooFewRecordsError(InterPUFError, ValueError):
    """A population statistic was requested on too small a sample."""


class UndecodableLabelError(InterPUFError):
    """A garbled output label matches neither plaintext value."""


class LengthMismatchError(InterPUFError, ValueError):
    """Oblivious-transfer inputs disagree in length."""


class TransportError(InterPUFError):
    """A message could not be delivered or parsed."""


class StaleEpochError(InterPUFError):
    """An epoch that is not strictly newer than the last logged one was offered."""


class ReplayError(InterPUFError):
    """A previously logged (epoch, nonce) pair was re-submitted."""


class PhaseError(InterPUFError):
    """A session operation was attempted out of protocol order."""


class SignatureError(InterPUFError):
    """Manifest attestation failed verification."""


class MissingPrerequisiteError(InterPUFError):
    """A CLI stage needs an artifact an earlier stage has not produced."""


class DeploymentBarrierError(InterPUFError):
    """Raw response bits were requested from a deployed-mode interface."""


class DivergenceError(InterPUFError):
    """A training run produced non-finite parameters."""
