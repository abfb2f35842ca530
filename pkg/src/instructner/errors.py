"""Exception hierarchy shared by every module.

``ValidationError`` and its subclasses map to CLI exit code 1; anything
else escaping a command maps to exit code 2.
"""


class ValidationError(ValueError):
    """Input data or arguments violate a documented contract."""


class ContractError(ValidationError):
    """A function precondition was violated by the caller."""


class ParseError(ValidationError):
    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class IOBError(ValidationError):
    """Tag sequence is not IOB-valid."""

    def __init__(self, message: str, sentence_index: int | None = None):
        self.sentence_index = sentence_index
        super().__init__(message)


class VersionMismatchError(ValidationError):
    """Checkpoint or index was produced with an incompatible component."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message: str, step: int, sample_id: str | None = None):
        self.step = step
        self.sample_id = sample_id
        super().__init__(f"{message} (step={step}, sample={sample_id})")
