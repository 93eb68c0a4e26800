class SchemaError(ValueError):
    """Input CSV does not carry the expected columns."""


class EmptyDataError(ValueError):
    """Input CSV has a header but no data rows."""
