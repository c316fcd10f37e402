"""Exception types shared across the package."""


class DnaMlmError(Exception):
    """Base class for all dnamlm errors."""


# --- corpus ---------------------------------------------------------------

class MalformedFasta(DnaMlmError):
    """Sequence data appeared before any '>' header."""


class InvalidBase(DnaMlmError):
    """A character outside {A, C, G, T, N} in strict mode."""


class EmptyInput(DnaMlmError):
    """The input stream contained no data."""


class MissingHeader(DnaMlmError):
    """Labeled CSV did not start with the required 'sequence,label' header."""


class NonIntegerLabel(DnaMlmError):
    """A CSV label was not a non-negative integer."""


# --- tokenizer ------------------------------------------------------------

class KOutOfRange(DnaMlmError):
    """k-mer size outside the supported range [1, 8]."""


class SequenceTooShort(DnaMlmError):
    """Sequence shorter than the k-mer size."""


class InconsistentOverlap(DnaMlmError):
    """Adjacent tokens do not overlap by k-1 bases during decoding."""


class SpecialTokenPresent(DnaMlmError):
    """A special or [UNK] id was passed where only k-mer ids are decodable."""


# --- masking --------------------------------------------------------------

class StepOutOfRange(DnaMlmError):
    """Training step outside the schedule's valid range."""


class IndexOutOfFrame(DnaMlmError):
    """A mask index does not fit the framed sequence it is applied to."""


# --- model ----------------------------------------------------------------

class ConfigInvalid(DnaMlmError):
    """A configuration value violates its documented constraints."""


class LengthExceeded(DnaMlmError):
    """Input longer than the model's maximum sequence length."""


class NonFiniteLoss(DnaMlmError):
    """Training produced a NaN or infinite loss."""


class EmptyDataset(DnaMlmError):
    """Fine-tuning was given no examples."""


# --- analysis -------------------------------------------------------------

class NoMaskedPositions(DnaMlmError):
    """Attention metrics require at least one masked query position."""


class KNotSix(DnaMlmError):
    """The embedding-organization metric is defined only for 6-mer vocabularies."""


class InsufficientHistory(DnaMlmError):
    """Loss history too short to evaluate any stage boundary."""


class LengthMismatch(DnaMlmError):
    """Label and prediction lists differ in length."""
