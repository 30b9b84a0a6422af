"""Exception hierarchy shared by all modules.

Each class carries an ``exit_code`` used by the command-line front end:
1 for usage/configuration problems, 2 for data integrity, 3 for numerics.
"""


class HdrRadarError(Exception):
    exit_code = 1


class ParameterError(HdrRadarError, ValueError):
    """An argument is outside its documented domain."""


class DimensionError(HdrRadarError, ValueError):
    """Array shapes do not satisfy an operation's precondition."""


class ConfigError(HdrRadarError):
    """Malformed or unknown configuration keys."""


class ScopeError(HdrRadarError):
    """Operation counting scopes were nested inconsistently."""


class CalibrationError(HdrRadarError):
    exit_code = 3


class TrainingDiverged(HdrRadarError):
    exit_code = 3

    def __init__(self, message, last_params=None, log=None):
        super().__init__(message)
        self.last_params = last_params
        self.log = log


class DataIntegrityError(HdrRadarError):
    exit_code = 2
    code = "integrity"


class FormatError(DataIntegrityError):
    code = "format"


class VersionMismatch(DataIntegrityError):
    code = "version"


class ChecksumError(DataIntegrityError):
    code = "checksum"

    def __init__(self, message, frame_index=None):
        super().__init__(message)
        self.frame_index = frame_index


class TruncatedFile(DataIntegrityError):
    code = "truncated"
