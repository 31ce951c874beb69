"""Exception types shared across the pipeline."""


class EvalMineError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(EvalMineError):
    """Bad or missing configuration (CLI exit code 2)."""


class TransportError(EvalMineError):
    """HTTP-level failure talking to an LLM backend or metadata service.

    ``transient`` marks failures worth retrying (timeouts, connection
    resets, 429, 5xx).
    """

    def __init__(self, message: str, transient: bool = False):
        super().__init__(message)
        self.transient = transient


class AuthError(EvalMineError):
    """API key missing from the environment or rejected by the backend."""


class MockExhausted(EvalMineError):
    """Transcript replay advanced past the last recorded entry."""


class ReplayMismatch(EvalMineError):
    """Replayed prompt does not match the recorded prompt at the cursor."""


class NoMainFile(EvalMineError):
    """No .tex file in the source entry contains a documentclass."""


class MalformedId(EvalMineError):
    """String does not look like a YYMM.NNNNN arXiv identifier."""


class UnbalancedBraces(EvalMineError):
    """Brace scanning ran off the end of the input before balancing."""


class UnparseableVerdict(EvalMineError):
    """Leaderboard classifier returned something other than true/false."""


class SchemaError(EvalMineError):
    """Record store file has an unknown or incompatible format header."""


class InsufficientPapers(EvalMineError):
    """Annotation sampling asked for more distinct papers than exist."""


class TooFewObservations(EvalMineError):
    """Bootstrap test needs at least two observations."""
