"""Exception hierarchy shared by every stage of the pipeline."""


class MwadError(Exception):
    """Base class. ``code`` is the short machine-readable tag printed by the CLI."""

    code = "error"


class ValidationError(MwadError, ValueError):
    code = "validation"


class FormatError(ValidationError):
    code = "format"


class UnfillableError(ValidationError):
    code = "unfillable"


class EmptyDatasetError(ValidationError):
    code = "empty_dataset"


class SplitError(ValidationError):
    code = "split"


class ContractError(MwadError, ValueError):
    """Caller violated an operation's precondition (shapes, lengths, missing labels)."""

    code = "contract"


class InsufficientLengthError(ContractError):
    code = "insufficient_length"


class DimensionError(ContractError):
    code = "dimension"


class GraphError(MwadError):
    code = "graph"


class StateError(MwadError, RuntimeError):
    code = "state"


class DivergenceError(MwadError, RuntimeError):
    code = "divergence"

    def __init__(self, step, loss):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss


class CheckpointError(MwadError):
    code = "checkpoint"


class IncompatibleVersionError(CheckpointError):
    code = "incompatible_version"
