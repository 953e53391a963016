"""Exception hierarchy shared by every module of the package."""


class SegQAError(Exception):
    pass


class ValidationError(SegQAError, ValueError):
    pass


class DimensionError(ValidationError):
    """Raised when arrays that must share a shape do not."""


class IngestionError(SegQAError):
    pass


class AttackError(SegQAError):
    pass


class MissingArtifactError(SegQAError):
    """An upstream artifact needed by a pipeline step is absent."""

    def __init__(self, what, producer):
        self.what = what
        self.producer = producer
        super().__init__(f"missing {what}; run `{producer}` first")
