"""Exception hierarchy shared across the toolkit."""


class TrapkitError(Exception):
    """Base class for all toolkit errors."""


# --- backends ---

class ArtifactNotFound(TrapkitError):
    pass


class ChecksumMismatch(TrapkitError):
    pass


class UnsupportedTask(TrapkitError):
    pass


class ImageDecodeError(TrapkitError):
    pass


class ShapeMismatch(TrapkitError):
    pass


class BackendError(TrapkitError):
    """Backend failure wrapped with the offending input (e.g. image path)."""


# --- pipeline ---

class DegenerateBox(TrapkitError):
    pass


class EmptyBatch(TrapkitError):
    pass


# --- video ---

class VideoDecodeError(TrapkitError):
    pass


class EmptyVote(TrapkitError):
    pass


# --- export ---

class MissingDimensions(TrapkitError):
    pass


# --- datakit ---

class NetworkError(TrapkitError):
    pass


class MissingFieldError(TrapkitError):
    pass


class SingleGroupError(TrapkitError):
    pass


class UnlabeledImage(TrapkitError):
    pass


# --- finetune ---

class TooFewClasses(TrapkitError):
    pass


class EmptyDataset(TrapkitError):
    pass


# --- evalboard ---

class UnknownTestSet(TrapkitError):
    pass


class MalformedSubmission(TrapkitError):
    pass


class UnknownModel(TrapkitError):
    pass


class InvalidRating(TrapkitError):
    pass
