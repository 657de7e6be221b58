"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is out of range or shapes are incompatible."""


class DataError(ValueError):
    """Malformed or inconsistent data: files, labels, ids."""


class NumericalError(RuntimeError):
    """A numerical computation failed or diverged."""


class DegenerateClusterError(NumericalError):
    """A cluster lost all of its probability mass."""

    def __init__(self, cluster: int, message: str | None = None):
        self.cluster = int(cluster)
        super().__init__(message or f"cluster {cluster} has zero total mass")
