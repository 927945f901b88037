"""
UGSD Errors
Exception hierarchy shared by the edge, the cloud verifier and the CLI
"""


class UgsdError(Exception):
    """Base class for every protocol, model and harness error"""


# ========================================
# DISTRIBUTIONS & VOCABULARY
# ========================================

class ProbabilityError(UgsdError):
    pass


class AllZeroError(ProbabilityError):
    pass


class NonFiniteError(ProbabilityError):
    pass


class NegativeError(ProbabilityError):
    pass


class VocabMismatchError(UgsdError):
    pass


class InvariantViolation(UgsdError):
    pass


# ========================================
# MODELS
# ========================================

class EmptyCorpusError(UgsdError):
    pass


class BadSnapshot(UgsdError):
    pass


# ========================================
# DECODING
# ========================================

class EmptyBlockError(UgsdError):
    pass


class TerminatedError(UgsdError):
    pass


class EscalatedBlockError(UgsdError):
    pass


class InconsistentOutcomeError(UgsdError):
    pass


class EmptyDraftError(UgsdError):
    pass


# ========================================
# WIRE PROTOCOL
# ========================================

class MalformedMessage(UgsdError):
    pass


class UnknownTypeError(MalformedMessage):
    pass


class SessionUnknownError(UgsdError):
    pass


class PositionMismatchError(UgsdError):
    pass


class TransportFailure(UgsdError):
    pass


class NoTokensError(UgsdError):
    pass


# ========================================
# METRICS & HARNESS
# ========================================

class InvalidTrace(UgsdError):
    pass


class EmptyCandidateError(UgsdError):
    pass


class EmptyReferenceError(UgsdError):
    pass


class ConfigError(UgsdError):
    pass
