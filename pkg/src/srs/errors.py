"""Exception hierarchy shared across the runtime.

Every error raised by the public surface derives from SrsError so callers
(CLI, service layer) can map failures to exit codes / HTTP statuses in one
place.
"""


class SrsError(Exception):
    """Base class for all runtime errors."""


# --- constraint specification ------------------------------------------------

class ParseError(SrsError):
    """Constraint/scenario document is malformed or internally inconsistent."""


class UnknownSignal(SrsError):
    """A constraint binds a signal id no monitor provides."""


class DuplicateActive(SrsError):
    """Two active constraints target the same (signal, direction) pair."""


class BrokenSupersedes(SrsError):
    """A revision references a constraint id that does not exist."""


class Unauthorized(SrsError):
    """Actor's role does not permit the attempted governance action."""


# --- monitors ----------------------------------------------------------------

class UnknownGroup(SrsError):
    """Requested group has never appeared in the telemetry window."""


class BinMismatch(SrsError):
    """Two distributions do not share the same bin label set."""


class EmptyWindow(SrsError):
    """Metric requires at least one record in the window."""


class MissingSignal(SrsError):
    """Barrier evaluation found a constraint on a signal absent from the vector."""


# --- safeguards --------------------------------------------------------------

class DimensionMismatch(SrsError):
    """Vector arguments disagree in dimension."""


class DegenerateData(SrsError):
    """A group lacks the label support required for training."""


class NonFinite(SrsError):
    """Training diverged; parameters left the finite range."""

    def __init__(self, message, last_model=None, trace=None):
        super().__init__(message)
        self.last_model = last_model
        self.trace = trace


class UnknownVersion(SrsError):
    """Model registry has no entry for the requested version."""


# --- plant / supervisor ------------------------------------------------------

class HorizonExceeded(SrsError):
    """Plant stepped past the scenario horizon."""


class NotPending(SrsError):
    """Governance decision attempted on a proposal that is not Pending."""


class PastDeadline(SrsError):
    """Governance decision attempted after the proposal's deadline tick."""


class NotCycleBoundary(SrsError):
    """Slow actuation attempted between governance-cycle boundaries."""


# --- audit log ---------------------------------------------------------------

class StorageFailure(SrsError):
    """Audit log could not be written (closed handle, IO error)."""


class TamperedLog(SrsError):
    """Operation requires a log that verifies clean, and it does not."""

    def __init__(self, seq):
        super().__init__(f"audit log tampered at seq {seq}")
        self.seq = seq
