"""Exception types raised across the package."""


class MalformedRecord(ValueError):
    def __init__(self, line: int, reason: str = ""):
        self.line = line
        msg = f"malformed record at line {line}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class EmptyInput(ValueError):
    pass


class BoundaryOutOfRange(ValueError):
    pass


class InvalidSpec(ValueError):
    pass


class InvalidGrid(ValueError):
    pass


class InvalidConfig(ValueError):
    pass


class PrefixTooLong(ValueError):
    pass


class IndexOutOfVocab(IndexError):
    pass


class TapeMismatch(RuntimeError):
    """Parameters were modified between the forward pass and ``backward``."""


class DegenerateWeighting(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    def __init__(self, step: int, detail: str = ""):
        self.step = step
        super().__init__(f"non-finite loss at step {step}" + (f" ({detail})" if detail else ""))


class ShapeMismatch(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


class CorruptCheckpoint(ValueError):
    pass


class EmptyTestSet(ValueError):
    pass


class EmptyFront(ValueError):
    pass
