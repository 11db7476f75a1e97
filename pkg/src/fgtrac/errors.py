"""Exception types shared across the package."""


class FGTracError(Exception):
    """Base class for all fgtrac errors."""


# -- identity -----------------------------------------------------------------

class EmptySecret(FGTracError):
    """Token secret was empty."""


# -- tracelog -----------------------------------------------------------------

class InvalidEvent(FGTracError):
    """Event violates an invariant of its kind."""


class SequenceGap(FGTracError):
    """Appended event's seq does not match the store's next sequence number."""


class StorageFailure(FGTracError):
    """Underlying file write failed."""


class RangeOverlap(FGTracError):
    """Seal range intersects an already-sealed range."""


class RangeOutOfBounds(FGTracError):
    """Seal range lies outside the appended sequence numbers."""


# -- merkle -------------------------------------------------------------------

class EmptyLeafSet(FGTracError):
    """A tree cannot be built from zero leaves."""


class IndexOutOfRange(FGTracError):
    """Leaf index outside the tree."""


# -- ledger -------------------------------------------------------------------

class UnknownBatch(FGTracError):
    """No committed block carries the requested batch id."""


# -- trainer ------------------------------------------------------------------

class InvalidConfig(FGTracError):
    """Training or dataset configuration is unusable."""


class InvalidRatios(FGTracError):
    """Split ratios are negative or do not sum to one."""


class EmptySplit(FGTracError):
    """A split would receive zero samples."""


class DimensionMismatch(FGTracError):
    """Sample feature dimension does not match the model."""


# -- influence ----------------------------------------------------------------

class EmptyCheckpointSet(FGTracError):
    """Influence requires at least one checkpoint."""


# -- audit --------------------------------------------------------------------

class MissingRoleEvent(FGTracError):
    """Subject has no TrainingRole event to build a timeline from."""


# -- tamper utility -----------------------------------------------------------

class TargetNotFound(FGTracError):
    """Requested event seq or block index does not exist in the artifacts."""
