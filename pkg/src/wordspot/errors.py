"""Exception hierarchy shared by all wordspot modules.

Every error carries a ``category`` string; the command line tool maps the
category to its exit code so failures can be told apart by scripts.
"""


class WordSpotError(Exception):
    category = "error"


class ConfigError(WordSpotError):
    category = "config"


class DataError(WordSpotError):
    category = "data"


class ShapeError(WordSpotError):
    category = "shape"


# phoc
class EmptyWord(WordSpotError, ValueError):
    category = "phoc"


# diffcore
class ShapeMismatch(ShapeError, ValueError):
    pass


class InvalidProbability(WordSpotError, ValueError):
    category = "value"


class InputTooNarrow(ShapeError, ValueError):
    pass


# arch
class ShapeInferenceFailure(ShapeError):
    def __init__(self, layer, message):
        super().__init__(f"layer {layer!r}: {message}")
        self.layer = layer


# retrieval
class ZeroVector(WordSpotError, ValueError):
    category = "retrieval"


class NoRelevantItems(WordSpotError, ValueError):
    category = "retrieval"


class EmptyQuerySet(WordSpotError):
    category = "retrieval"


# data
class MissingImage(DataError, FileNotFoundError):
    pass


class DuplicateId(DataError):
    pass


class MalformedRow(DataError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class WrongPageCount(DataError):
    pass


class EmptyClass(DataError):
    pass


class DataUnavailable(DataError):
    pass


# training / checkpoints
class DivergedLoss(WordSpotError, FloatingPointError):
    category = "training"

    def __init__(self, iteration, loss):
        super().__init__(f"non-finite loss {loss!r} at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss


class ArchMismatch(WordSpotError):
    category = "checkpoint"


class CheckpointFormatError(WordSpotError):
    category = "checkpoint"


EXIT_CODES = {
    "error": 1,
    "config": 2,
    "data": 3,
    "shape": 4,
    "phoc": 5,
    "value": 5,
    "retrieval": 6,
    "training": 7,
    "checkpoint": 8,
}
