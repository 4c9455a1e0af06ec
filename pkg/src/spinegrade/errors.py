"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line front end can map
failures onto its stable contract: 1 usage, 2 data, 3 numeric.
"""


class SpineGradeError(Exception):
    exit_code = 1


class UsageError(SpineGradeError):
    exit_code = 1


class DataError(SpineGradeError):
    exit_code = 2


class NumericError(SpineGradeError):
    exit_code = 3


# data_pipeline
class MissingFile(DataError):
    pass


class MalformedRow(DataError):
    def __init__(self, path, line, reason):
        self.path = str(path)
        self.line = line
        self.reason = reason
        super().__init__(f"{path}:{line}: {reason}")


class DanglingReference(DataError):
    def __init__(self, kind, key):
        self.kind = kind
        self.key = key
        super().__init__(f"unresolved {kind} {key!r}")


class ZeroDimension(DataError):
    pass


class InsufficientClassSamples(DataError):
    pass


class IoFailure(DataError):
    pass


class MissingInputs(DataError):
    pass


class VersionMismatch(DataError):
    pass


# shapes
class ShapeError(DataError):
    pass


class KernelLargerThanInput(ShapeError):
    pass


class InputTooSmall(ShapeError):
    pass


class ShapeUnderflow(ShapeError):
    pass


class TooFewVectors(ShapeError):
    pass


class DimMismatch(ShapeError):
    pass


class ShapeMismatch(ShapeError):
    pass


class LengthMismatch(ShapeError):
    pass


class EmptyMatrix(ShapeError):
    pass


class SingleClassOnly(DataError):
    pass


# numerics
class DimTooLarge(NumericError):
    pass


class NonFiniteEntries(NumericError):
    pass


class DampingExhausted(NumericError):
    pass


class NonFiniteLoss(NumericError):
    pass


class AllDimensionsDropped(NumericError):
    pass
