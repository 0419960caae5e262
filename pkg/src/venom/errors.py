"""Exception hierarchy shared across the pipeline.

Each branch maps onto one CLI exit code: configuration problems exit 2,
data problems 3, diverged training 4, and anything else that escapes is
an internal invariant violation (5).
"""


class VenomError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 5


class ConfigError(VenomError):
    """Bad configuration: unknown keys, invalid values, missing paths."""

    exit_code = 2


class ContractError(VenomError):
    """A caller violated an operation's precondition."""

    exit_code = 2


class DimensionError(ContractError):
    """Tensor or matrix shapes do not line up."""


class DataError(VenomError):
    """Bad input data: unreadable files, ragged rows, unusable datasets."""

    exit_code = 3


class SchemaError(DataError):
    """Column structure inconsistent with the lake's schema."""


class EmptyInputError(DataError):
    """Empty file or dataset where at least one row/column is required."""


class UnsupportedWidthError(DataError):
    """Dataset has more columns than the model was configured for."""


class RaggedRowsError(DataError):
    """CSV rows have inconsistent lengths."""


class UnparseableValueError(DataError):
    """A cell in a numeric column failed to parse as a float."""


class UnknownCategoryError(DataError):
    """A categorical cell holds a value outside the lake vocabulary."""


class MissingValueError(DataError):
    """A cell is empty; imputation is not performed."""


class UnusableDatasetError(DataError):
    """Dataset cannot support the requested operator (degenerate target, too few rows)."""


class StaleStoreError(ConfigError):
    """Embedding store was produced by a different model version."""


class TrainingDivergedError(VenomError):
    """Training produced a non-finite loss."""

    exit_code = 4

    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss}")
        self.epoch = epoch
        self.loss = loss


class EvaluationError(VenomError):
    """A checked function evaluated to a non-finite value."""
