"""Exception hierarchy shared by the engine and the command line."""

EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3


class SplatError(Exception):
    """Base error; ``exit_code`` is what the CLI returns when it escapes."""

    exit_code = EXIT_USAGE

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = " ".join(str(reason).split())


class UsageError(SplatError):
    exit_code = EXIT_USAGE


class ConfigError(UsageError):
    pass


class DataError(SplatError):
    exit_code = EXIT_IO


class PlyFormatError(DataError):
    pass


class CameraError(DataError):
    pass


class NumericalError(SplatError):
    exit_code = EXIT_NUMERICAL

    def __init__(self, reason: str, dump_path: str = None):
        super().__init__(reason)
        self.dump_path = dump_path


class EmptyViewportError(UsageError):
    def __init__(self, reason: str = "empty viewport"):
        super().__init__(reason)


class StaleArtifactsError(UsageError):
    def __init__(self, reason: str = "stale artifacts"):
        super().__init__(reason)


class GaussianNotInViewError(UsageError):
    def __init__(self, reason: str = "gaussian not in view"):
        super().__init__(reason)


class DimensionMismatchError(UsageError):
    def __init__(self, reason: str = "dimension mismatch"):
        super().__init__(reason)
