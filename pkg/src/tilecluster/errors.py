"""Exception hierarchy shared by every tilecluster module."""


class TileClusterError(Exception):
    """Base class for all runtime errors raised by tilecluster."""


class UnsupportedFormat(TileClusterError, ValueError):
    pass


class CorruptHeader(TileClusterError, ValueError):
    pass


class ChannelMismatch(TileClusterError, ValueError):
    pass


class SingularStainMatrix(TileClusterError, ValueError):
    pass


class EmptyInput(TileClusterError, ValueError):
    pass


class DegenerateOutput(TileClusterError, ValueError):
    pass


class DimensionError(TileClusterError, ValueError):
    pass


class ShapeMismatch(TileClusterError, ValueError):
    pass


class LengthMismatch(TileClusterError, ValueError):
    pass


class KTooLarge(TileClusterError, ValueError):
    pass


class NumericalCollapse(TileClusterError, ArithmeticError):
    pass


class FoldTooSmall(TileClusterError, ValueError):
    pass


class PerplexityTooLarge(TileClusterError, ValueError):
    pass


class InvalidAlpha(TileClusterError, ValueError):
    pass


class MissingLabels(TileClusterError, ValueError):
    pass


class NonFiniteLoss(TileClusterError, ArithmeticError):
    def __init__(self, epoch, batch, value):
        super().__init__(
            f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.value = value


class TooFewTiles(TileClusterError, ValueError):
    pass


class NoSuchMagnification(TileClusterError, ValueError):
    pass


class ModelMissing(TileClusterError, FileNotFoundError):
    pass


class CorruptModel(TileClusterError, ValueError):
    pass


class SingleClusterDegenerate(UserWarning):
    """All feature vectors coincide, so every tile lands in cluster 0."""
