# app/exceptions.py
"""Exception hierarchy. Every error raised on purpose derives from SimulatorError."""


class SimulatorError(Exception):
    """Base class for all simulator errors."""


# ==========================================
# 1. MODEL
# ==========================================

class ModelError(SimulatorError):
    pass

class InvalidArchitectureError(ModelError, ValueError):
    pass

class DimensionMismatchError(ModelError, ValueError):
    pass

class TrainingDivergedError(ModelError):
    """NaN/Inf showed up during SGD. The run is aborted."""

class MalformedModelBytesError(ModelError, ValueError):
    pass


# ==========================================
# 2. DATA
# ==========================================

class DataError(SimulatorError):
    pass

class IdxFormatError(DataError, ValueError):
    pass

class BadMagicError(IdxFormatError):
    pass

class TruncatedFileError(IdxFormatError):
    pass

class SplitError(DataError, ValueError):
    pass


# ==========================================
# 3. CONTENT STORE
# ==========================================

class StoreError(SimulatorError):
    pass

class EmptyPayloadError(StoreError, ValueError):
    pass

class CidNotFoundError(StoreError, KeyError):
    def __str__(self) -> str:
        # KeyError quotes its argument; keep the plain message
        return str(self.args[0]) if self.args else "cid not found"

class IntegrityFailureError(StoreError):
    """Stored bytes no longer hash to their cid."""


# ==========================================
# 4. LEDGER
# ==========================================

class LedgerError(SimulatorError):
    pass

class ClockError(LedgerError):
    pass

class ZeroDurationError(LedgerError, ValueError):
    pass

class PreGenesisQueryError(LedgerError):
    pass

class EvaluatorMayNotTrainError(LedgerError):
    pass

class NotATrainerError(LedgerError):
    pass

class DuplicateSubmissionInRoundError(LedgerError):
    pass

class TrainingFinishedError(LedgerError):
    pass

class TrainingNotFinishedError(LedgerError):
    pass

class NotEvaluatorError(LedgerError):
    pass

class UnknownUpdateError(LedgerError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown update"

class TokensAlreadySetError(LedgerError):
    pass

class UndefinedShareError(LedgerError, ZeroDivisionError):
    """share() asked while no tokens have been assigned."""

class ConsortiumMembershipError(LedgerError, ValueError):
    pass

class UnknownContractError(LedgerError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown contract"

class UnfinishedContractError(LedgerError):
    pass


# ==========================================
# 5. EXPERIMENTS / REPLAY
# ==========================================

class ExperimentConfigError(SimulatorError, ValueError):
    pass

class ReplayDivergenceError(SimulatorError):
    def __init__(self, message: str, seq: int | None = None):
        super().__init__(message)
        self.seq = seq
