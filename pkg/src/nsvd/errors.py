"""Exception hierarchy shared by every nsvd module."""

from __future__ import annotations


class NsvdError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(NsvdError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SchemaError(NsvdError):
    pass


class GenerationError(NsvdError):
    pass


class EmptyCandidates(NsvdError):
    pass


# -- program text / signature errors ------------------------------------------------


class ProgramError(NsvdError):
    pass


class ProgramSyntaxError(ProgramError):
    def __init__(self, message: str, position: int, expected: str):
        super().__init__(f"{message} at position {position}, expected {expected}")
        self.position = position
        self.expected = expected


class UnknownFunction(ProgramError):
    pass


class ArgumentError(ProgramError):
    pass


# -- executor errors ---------------------------------------------------------------


class ExecutionError(NsvdError):
    """Raised when a program cannot run in the current knowledge-base state."""


class NoReferent(ExecutionError):
    pass


class ExecutionStateError(ExecutionError):
    pass


class MissingSubject(ExecutionError):
    pass


class NoActiveGroup(ExecutionError):
    pass


class FetchError(ExecutionError):
    pass


class AmbiguousSimilar(ExecutionError):
    pass


class MaskViolation(ExecutionError):
    pass


# -- templates / datasets / evaluation -----------------------------------------------


class NoTemplateMatch(NsvdError):
    def __init__(self, text: str, suggestions: list[str]):
        hint = "; ".join(suggestions)
        super().__init__(f"no template matches {text!r}; closest: {hint}")
        self.text = text
        self.suggestions = suggestions


class ReplayMismatch(NsvdError):
    def __init__(self, dialog: int, round_: int, expected: str, got: str):
        super().__init__(
            f"dialog {dialog} round {round_}: recorded answer {expected!r}, replay gives {got!r}"
        )
        self.dialog = dialog
        self.round = round_


class MissingScene(NsvdError):
    pass


class ModelError(NsvdError):
    pass


class EmptyInput(NsvdError):
    pass
