"""Exception hierarchy shared by all craftvla modules."""


class CraftVLAError(Exception):
    """Base class for every error raised by this package."""


class DataError(CraftVLAError, ValueError):
    """Input data violated a documented contract."""


class ActionError(DataError):
    pass


class MalformedFrameError(ActionError):
    """A token sequence does not follow the action frame grammar."""

    def __init__(self, message, position=None):
        self.position = position
        if position is not None:
            message = f"{message} (token {position})"
        super().__init__(message)


class VocabError(DataError):
    pass


class VocabLookupError(CraftVLAError, LookupError):
    def __init__(self, value):
        self.value = value
        super().__init__(f"not bound in action vocabulary: {value!r}")


class TrajectoryError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DatasetError(DataError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"byte offset {offset}: {message}"
        super().__init__(message)


class GroundingParseError(DataError):
    pass


class DegenerateAnnotation(DataError):
    """The annotation left the image frame entirely after a transform."""


class ProtocolError(CraftVLAError):
    """A policy broke the rollout protocol (e.g. wrong chunk length)."""


class JudgeEndpointError(CraftVLAError):
    """The judge endpoint could not be reached or returned garbage."""
