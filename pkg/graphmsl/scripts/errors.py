"""
Typed exceptions raised across graphmsl.

Every error belongs to one of three categories, which the command line maps to
exit codes:

    ConfigError     -> exit 1 (bad flags, invalid weights or temperatures)
    DataError       -> exit 2 (malformed inputs, inconsistent files)
    NumericalError  -> exit 3 (optimization or numerical failures)
"""


class GraphMSLError(Exception):
    """Base class for every error raised by graphmsl."""

    exit_code = 2


class ConfigError(GraphMSLError, ValueError):
    """Invalid configuration or command-line usage."""

    exit_code = 1


class DataError(GraphMSLError, ValueError):
    """
    Invalid or inconsistent input data.

    Attributes:
        path (str | None): File the bad data came from, when known
        line (int | None): 1-based line number inside that file, when known
    """

    exit_code = 2

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        self.detail = message
        if path is not None and line is not None:
            message = f"{path}:{line}: {message}"
        elif path is not None:
            message = f"{path}: {message}"
        super().__init__(message)


class NumericalError(GraphMSLError, ArithmeticError):
    """A numerical procedure failed to produce a usable result."""

    exit_code = 3


# molgraph


class SmilesError(DataError):
    """Base class for SMILES parsing failures."""


class SmilesSyntaxError(SmilesError):
    """Unbalanced parentheses or brackets, dangling bonds, unexpected characters."""


class RingClosureError(SmilesError):
    """Unmatched, self-referencing or duplicated ring-closure digit."""


class UnknownElementError(SmilesError):
    """Atom symbol that is not a recognized element."""


class ValenceError(SmilesError):
    """Bond orders exceed the maximum valence of an atom (strict mode only)."""


class FragmentError(SmilesError):
    """Multi-fragment SMILES ('.') while fragments are not permitted."""


# shapes and tensors


class ShapeError(GraphMSLError, ValueError):
    """Tensor or matrix shapes are incompatible."""


class NonScalarLossError(ShapeError):
    """backward() was called on a tensor that is not a scalar."""


class EmptyTapeError(GraphMSLError, RuntimeError):
    """backward() was called on a tensor that no tape recorded."""


class DomainError(NumericalError):
    """Argument outside the domain of a function (e.g. log of a non-positive value)."""


# fingerprints and similarities


class WidthMismatchError(DataError):
    """Fingerprints of different widths were compared."""


class ZeroNormError(DataError):
    """A vector with zero norm cannot take part in a cosine similarity."""


class DimensionMismatchError(DataError):
    """Vectors of different dimensions were mixed."""


class IdMismatchError(DataError):
    """Matrices to be combined are indexed by different identifiers."""


class WeightSumError(ConfigError):
    """Fusion weights are negative or do not sum to one."""


class NonPositiveTemperatureError(ConfigError):
    """A temperature hyper-parameter is not strictly positive."""


class EmptyPoolError(DataError):
    """A similarity pool has no members."""


class EmptyNodePoolError(EmptyPoolError):
    """A training batch has no annotated carbon atoms for the node-level loss."""


class MissingModalityError(DataError):
    """A molecule lacks an input required by the chosen fusion weights."""


# dataio


class ParseError(DataError):
    """A line of an input file could not be parsed."""


class DuplicateIdError(DataError):
    """The same identifier appears twice in one input file."""


class EmptyDatasetError(DataError):
    """An input file contains no records."""


class UnknownMoleculeError(DataError):
    """A record refers to a molecule id that is not in the pool."""


class BadAtomIndexError(DataError):
    """A peak refers to an atom index that is out of range or not a carbon."""


class MagicError(DataError):
    """A binary file does not start with the expected magic bytes."""


class VersionError(DataError):
    """A binary file was written with an unsupported format version."""


class CorruptionError(DataError):
    """A binary file is truncated or its lengths are inconsistent."""


# trainer and evalkit


class NonConvergenceError(NumericalError):
    """
    The optimizer hit its step cap without converging.

    Attributes:
        report (dict): Partial report including the achieved deviation
    """

    def __init__(self, message: str, report: dict | None = None):
        self.report = report or {}
        super().__init__(message)


class DegenerateLabelsError(DataError):
    """Labels contain a single class where both classes are required."""


class InsufficientDataError(DataError):
    """Too few usable records for the requested evaluation."""


class LengthMismatchError(DataError):
    """Paired sequences have different lengths."""
