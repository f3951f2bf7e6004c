"""Exception hierarchy shared by all pipeline stages."""


class AttribError(Exception):
    """Base class for every error raised by this package."""


class DataError(AttribError):
    """Bad input data or on-disk artifact (CLI exit code 2)."""


class NumericError(AttribError):
    """Numeric failure during encoding or training (CLI exit code 3)."""


class IdConflict(DataError):
    pass


class SchemaViolation(DataError):
    pass


class MissingNode(DataError):
    pass


class NotAReport(DataError):
    pass


class FormatError(DataError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class VocabOverflow(DataError):
    pass


class MissingEmbedding(DataError):
    pass


class IndexMismatch(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class EmptyTrainSet(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class ConfigInvalid(DataError):
    pass


class NonFinite(NumericError):
    pass
