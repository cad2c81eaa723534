"""Exception taxonomy shared by every stage of the comparison pipeline."""


class InputError(ValueError):
    """A caller-supplied argument violates an operation's contract."""


class CapabilityError(RuntimeError):
    """The model cannot perform the requested operation (e.g. no gradients)."""


class GatewayError(RuntimeError):
    """A remote model endpoint failed; carries the protocol response."""

    def __init__(self, message, status=None, body=None):
        super().__init__(message)
        self.status = status
        self.body = body


class IngestionError(ValueError):
    """A dataset artifact (manifest, image, cache file) is missing or malformed."""


class ResourceError(RuntimeError):
    """The request would exceed a hard resource bound."""


class StageError(RuntimeError):
    """A pipeline stage failed; names the stage and the offending artifact."""

    def __init__(self, stage, message, artifact=None):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
        self.artifact = artifact
