class ContractError(Exception):
    pass


class DimensionError(ContractError):
    pass


class NumericError(Exception):
    pass


class GradCheckInvalidError(Exception):
    pass


class VocabError(Exception):
    pass


class IngestionError(Exception):
    pass


class CheckpointFormatError(Exception):
    pass


class CheckpointIOError(OSError):
    pass


class UndefinedMetricError(Exception):
    pass


class NotFittedException(Exception):
    pass


class NotTrainedException(Exception):
    pass


class UsageError(Exception):
    pass


class DownloadError(Exception):
    pass
