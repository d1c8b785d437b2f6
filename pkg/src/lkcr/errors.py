"""Exception hierarchy shared by every stage of the pipeline."""


class LkcError(Exception):
    """Base class for all library errors."""


class InputError(LkcError):
    """Bad user input: malformed files, invalid options, violated preconditions."""


class ComputeError(LkcError):
    """A numerical stage failed on valid input."""


class DegenerateField(InputError):
    pass


class FormatError(InputError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DimensionMismatch(InputError):
    pass


class NonMonotoneLevels(InputError):
    pass


class UnsupportedFamilyOrder(InputError):
    pass


class NoCrossing(ComputeError):
    pass


class InsufficientFields(InputError):
    pass


class InsufficientLevels(InputError):
    pass


class TooFewLevels(InputError):
    pass


class SingularDesign(ComputeError):
    pass


class EmbeddingFailure(ComputeError):
    pass


class TooLarge(InputError):
    pass


class NoConvergence(ComputeError):
    pass
