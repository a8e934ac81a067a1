"""Exception types shared across the toolkit."""


class CtikgError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(CtikgError):
    """Tensor shapes do not line up."""


class EmptySequenceError(CtikgError):
    """An operation received a zero-length sequence."""


class ContextOverflowError(CtikgError):
    """Input longer than the model's context window."""


class VocabError(CtikgError):
    """Token id outside the vocabulary, or a bad vocabulary file."""


class CheckpointError(CtikgError):
    """Base class for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    """Bad magic bytes or unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    """File ended before all declared tensors were read."""


class CheckpointShapeError(CheckpointError):
    """Stored tensor shapes disagree with the stored config."""


class NonFiniteGradientError(CtikgError):
    """A gradient tensor contains NaN or Inf; names the offending tensor."""

    def __init__(self, tensor_name: str):
        super().__init__(f"non-finite gradient in tensor {tensor_name!r}")
        self.tensor_name = tensor_name


class IngestError(CtikgError):
    """Corpus file unreadable or contains no valid records."""


class QuerySyntaxError(CtikgError):
    """Query text does not match the grammar; carries a position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class QuerySemanticError(CtikgError):
    """Query parses but references an unknown predicate."""


class GraphFormatError(CtikgError):
    """Malformed graph TSV line; carries a line number."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class PipelineError(CtikgError):
    """An attack-simulation phase failed; names the phase."""

    def __init__(self, phase: str, message: str):
        super().__init__(f"phase {phase!r}: {message}")
        self.phase = phase
