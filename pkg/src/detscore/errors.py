"""Exception hierarchy shared across modules."""


class DetscoreError(Exception):
    """Base class for every error raised by this package."""


class DataError(DetscoreError, ValueError):
    """Input data violates a schema or invariant (CLI exit code 2)."""


class SchemaError(DataError):
    def __init__(self, message, field=None, record_id=None):
        where = []
        if record_id is not None:
            where.append(f"record {record_id!r}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.field = field
        self.record_id = record_id


class DuplicateIdError(DataError):
    def __init__(self, record_id):
        super().__init__(f"duplicate image id {record_id!r}")
        self.record_id = record_id


class GeometryError(DataError):
    pass


class LabelsRequiredError(DataError):
    pass


class ModelFileError(DataError):
    pass


class NotFittedError(DetscoreError, RuntimeError):
    pass
