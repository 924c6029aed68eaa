"""Exception types shared across the toolkit."""


class BoxRerankError(Exception):
    """Base class for all toolkit errors."""


class FewerBoxesThanClusters(BoxRerankError):
    """Raised when fewer eligible boxes than requested clusters."""


class DegenerateBatch(BoxRerankError):
    """Raised when a training batch is missing a class."""


class BridgeProtocolError(BoxRerankError):
    """Raised on malformed replies from an external scorer process."""


class NoSeedClusters(BoxRerankError):
    """Raised when no cluster's mean confidence exceeds the seed threshold."""


class NegativesExhausted(BoxRerankError):
    """Raised when no promotable negative cluster remains."""


class EmptyGroundTruth(BoxRerankError):
    """Raised when evaluation is attempted with zero usable ground-truth boxes."""


class InfeasiblePlacement(BoxRerankError):
    """Raised when synthetic box placement cannot satisfy the overlap constraint."""


class ParseError(BoxRerankError):
    """A malformed record in a detection / ground-truth file."""

    def __init__(self, line, reason):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class SchemaError(BoxRerankError):
    """File-level schema violation (bad header, wrong kind, ...)."""


class CorruptState(BoxRerankError):
    """Persisted run state fails an invariant on load."""
