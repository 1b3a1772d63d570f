from typing import List, Optional


class PcnError(Exception):
    """Base class for every error raised by the network code"""


class ConfigError(PcnError, ValueError):
    """One or more configuration problems, all reported together"""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems: List[str] = list(problems)
        super().__init__("; ".join(self.problems))


class DatasetError(PcnError, ValueError):
    def __init__(self, message: str, path: Optional[str] = None, offset: Optional[int] = None):
        self.path = path
        self.offset = offset
        where = ""
        if path is not None:
            where = f" [{path}"
            if offset is not None:
                where += f" @ offset {offset}"
            where += "]"
        super().__init__(message + where)


class BadMagicError(DatasetError):
    pass


class TruncatedError(DatasetError):
    pass


class CountMismatchError(DatasetError):
    pass


class EmptyDatasetError(DatasetError):
    pass


class ImageDecodeError(DatasetError):
    pass


class InsufficientSamplesError(DatasetError):
    pass


class EmptyEvaluationError(DatasetError):
    """An evaluation was asked for on a set with no images"""


class ShapeError(PcnError, ValueError):
    pass


class IndexingError(PcnError, ValueError):
    pass


class EmptyGroupError(IndexingError):
    pass


class OrphanSubsetError(IndexingError):
    pass


class NonBinaryEntryError(IndexingError):
    pass


class IndexingWidthError(IndexingError):
    pass


class EncodingError(PcnError, ValueError):
    pass


class EigenSolverError(PcnError, RuntimeError):
    pass


class ArchiveError(PcnError):
    pass


class ChecksumError(ArchiveError):
    pass


class ArchiveVersionError(ArchiveError):
    pass


class IncompatibleModelError(PcnError, ValueError):
    pass


class TrainingError(PcnError, ValueError):
    pass


class SingleClassError(TrainingError):
    pass
