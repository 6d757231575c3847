"""Exception taxonomy shared across the package.

Exit-code mapping lives in the CLI: ConfigError/ContractError are usage
problems (1), data loading errors are 2, numerical divergence is 3.
"""


class CqaRankError(Exception):
    pass


class ShapeError(CqaRankError):
    """Operand shapes are incompatible for the requested operation."""


class EmptyInputError(CqaRankError):
    """An operation received an empty sequence or zero-extent axis."""


class ConfigError(CqaRankError):
    """A configuration value is outside its valid range."""


class ContractError(CqaRankError):
    """A caller violated an operation's precondition."""


class VocabularyError(CqaRankError):
    """A token id is outside the embedding table's vocabulary."""


class DataError(CqaRankError):
    """Base class for corpus/embedding ingestion failures."""


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CorpusError(DataError):
    """A corpus violates an integrity invariant."""


class EvaluationError(CqaRankError):
    """No thread is eligible for metric computation."""


class DivergenceError(CqaRankError):
    """Training produced a non-finite loss, reward, or parameter."""
