"""Exception hierarchy shared by the file readers and the training loop."""


class FormatError(ValueError):
    """A file on disk does not conform to the format its reader expects."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class UnsupportedDatatypeError(FormatError):
    pass


class UnsupportedDimensionsError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class SizeMismatchError(FormatError):
    """File is longer than its header implies, or stored shapes disagree."""


class TrainingDivergedError(RuntimeError):
    pass
