"""Exception hierarchy shared by all modules.

Configuration problems (bad schemes, impossible sizes, incompatible
transfers) derive from :class:`ConfigError` and map to CLI exit code 2.
Everything raised after compute has started derives from
:class:`RuntimeAbort` and maps to exit code 3.
"""


class SparseEvoError(Exception):
    """Base class."""


class ConfigError(SparseEvoError, ValueError):
    pass


class DimensionError(SparseEvoError, ValueError):
    pass


class FormatError(SparseEvoError, ValueError):
    pass


class TransferError(ConfigError):
    """Source lineage cannot be reused for the requested target."""


class RuntimeAbort(SparseEvoError, RuntimeError):
    pass


class LineageExhausted(RuntimeAbort):
    """Too few surviving weights left to prune again."""


class TaskEvaluationError(RuntimeAbort):
    def __init__(self, index, cause):
        super().__init__(f"fitness evaluation failed for candidate {index}: {cause!r}")
        self.index = index
        self.cause = cause


class DivergenceError(RuntimeAbort):
    def __init__(self, step):
        super().__init__(f"training loss became non-finite at step {step}")
        self.step = step


class RankError(SparseEvoError, ValueError):
    """Least-squares design matrix is rank deficient."""
