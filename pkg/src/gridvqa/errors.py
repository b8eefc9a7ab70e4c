"""Exception types shared across the pipeline.

Every error carries an ``exit_code`` so the CLI can exit with the documented
category codes: 2 config, 3 endpoint, 4 data.
"""


class GridVqaError(Exception):
    exit_code = 1


class ConfigError(GridVqaError):
    """Invalid flags, run configuration, or prompt/template setup."""

    exit_code = 2


class UnsupportedGridSize(ConfigError):
    """Square layout requested for a frame count that fits neither rule."""


class DataError(GridVqaError):
    """Bad manifests, media, or run directories."""

    exit_code = 4


class MediaError(DataError):
    """A frame could not be decoded."""

    def __init__(self, message: str, frame_index: int | None = None):
        super().__init__(message)
        self.frame_index = frame_index


class ManifestError(DataError):
    """Manifest validation failures, collected in bulk with line numbers."""

    def __init__(self, problems: list[tuple[int, str]]):
        self.problems = list(problems)
        lines = "; ".join(f"line {n}: {msg}" for n, msg in self.problems)
        super().__init__(f"{len(self.problems)} manifest problem(s): {lines}")


class EndpointError(GridVqaError):
    exit_code = 3
    retryable = False


class AuthError(EndpointError):
    """401/403 from the endpoint; never retried."""


class RateLimited(EndpointError):
    retryable = True


class TransientEndpointError(EndpointError):
    """Timeouts, connection failures, 5xx replies."""

    retryable = True


class MalformedReply(EndpointError):
    """2xx reply that does not parse as a chat completion.

    The raw payload is kept on the exception for forensics.
    """

    def __init__(self, message: str, payload=None):
        super().__init__(message)
        self.payload = payload


class SampleSetError(EndpointError):
    """A multi-sample request failed partway through."""

    def __init__(self, message: str, failed_index: int):
        super().__init__(f"{message} (sample {failed_index})")
        self.failed_index = failed_index
