"""Exception types shared across the package."""


class ChainMarksError(Exception):
    """Base class for all errors raised by chainmarks."""


class InvalidParameter(ChainMarksError, ValueError):
    pass


class FormatError(ChainMarksError, ValueError):
    """A chain, model or dataset file could not be parsed.

    ``offset`` is the byte offset (binary files) or 1-based row number (CSV)
    where parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingDiverged(ChainMarksError, RuntimeError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss}")
        self.epoch = epoch
        self.loss = loss


class NoThreshold(ChainMarksError):
    """The requested p-value cannot be reached even with every label matching."""

    def __init__(self, p_target, tail_at_L):
        super().__init__(
            f"no threshold reaches p={p_target:g}; Pr(M >= L) = {tail_at_L:g}"
        )
        self.p_target = p_target
        self.tail_at_L = tail_at_L


class UndefinedUtility(ChainMarksError, ValueError):
    pass
