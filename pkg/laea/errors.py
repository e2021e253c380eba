"""Exception hierarchy shared by every laea module."""


class LaeaError(Exception):
    """Base class for all errors raised by laea."""


class InvalidInput(LaeaError, ValueError):
    """Arguments violate an operation's preconditions."""


class InvalidState(LaeaError, RuntimeError):
    """An object is not in a state that allows the requested operation."""


class MalformedResponse(LaeaError):
    """A model reply could not be turned into a prediction."""


class BackendUnavailable(LaeaError):
    """A completion backend could not be reached within the retry budget."""


class PromptStructureError(LaeaError):
    """A prompt is missing one of the mandatory blocks."""
