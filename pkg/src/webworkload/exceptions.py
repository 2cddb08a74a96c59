"""Exception types raised across the package."""


class WorkloadError(Exception):
    """Base class for all errors raised by webworkload."""


class MalformedLine(WorkloadError):
    def __init__(self, position, reason):
        self.position = position
        self.reason = reason
        super().__init__(f"line {position}: {reason}")


class DecompressionError(WorkloadError):
    pass


class HttpError(WorkloadError):
    def __init__(self, status, url=""):
        self.status = status
        self.url = url
        super().__init__(f"HTTP {status} for {url}")


class PartialRange(WorkloadError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"{len(self.missing)} hour(s) could not be fetched: {self.missing[:5]}")


class IncompatibleBucket(WorkloadError):
    pass


class DegenerateRow(WorkloadError):
    """A row with zero standard deviation has no shape to standardize."""


class EmptyResult(WorkloadError):
    pass


class ZeroMean(WorkloadError):
    pass


class ProvenanceViolation(WorkloadError):
    pass


class LengthMismatch(WorkloadError):
    pass


class TooFewRows(WorkloadError):
    pass


class SingleCluster(WorkloadError):
    pass


class UnknownLabel(WorkloadError):
    pass


class RankDeficient(WorkloadError):
    pass


class NoOverlap(WorkloadError):
    pass


class UnknownPattern(WorkloadError):
    pass


class Unreachable(WorkloadError):
    """Burst injection could not reach the requested burstiness."""


class TargetUnreachable(WorkloadError):
    pass
