"""Exception hierarchy shared by all modules.

ValidationError subclasses indicate bad inputs/files (CLI exit code 2),
EngineError subclasses indicate runtime failures (CLI exit code 3).
"""


class XfreqgsError(Exception):
    pass


class ValidationError(XfreqgsError):
    pass


class EngineError(XfreqgsError):
    pass


# -- core grid / map --------------------------------------------------------

class AllZeroMap(EngineError):
    """Every cell of a power map is zero (degenerate render or empty scene)."""


class IndexOutOfRange(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class GridTooSmall(ValidationError):
    pass


# -- physics ----------------------------------------------------------------

class NonPositiveInput(ValidationError):
    pass


class FrequencyOutOfTableRange(ValidationError):
    pass


class TotalInternalReflection(EngineError):
    """Reserved for non-vacuum incidence; unreachable with vacuum-side scenes."""


class TxOutsideRoom(ValidationError):
    pass


class TxCoincidentWithRx(ValidationError):
    pass


# -- scene / network --------------------------------------------------------

class EmptyBounds(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class FrequencyOutOfRange(ValidationError):
    pass


class PositionOutOfBounds(ValidationError):
    pass


# -- renderer / training ----------------------------------------------------

class GaussianAtReceiver(EngineError):
    pass


class MisalignedAttributes(ValidationError):
    pass


class StaleGraph(EngineError):
    pass


class EmptyDataset(ValidationError):
    pass


# -- evaluation / CLI -------------------------------------------------------

class EmptyList(ValidationError):
    pass


class InvalidSplit(ValidationError):
    pass


class InvalidSplitSpec(ValidationError):
    pass


class UnknownVariant(ValidationError):
    pass


class FileFormatError(ValidationError):
    pass
