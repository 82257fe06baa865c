"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class SizeError(InvalidInputError):
    """Raised when a problem is too large for the requested method."""


class SchemaError(InvalidInputError):
    """A JSON document does not conform to its schema.

    The message names the file, the JSON path inside it, and the violated rule.
    """

    def __init__(self, message: str, file: str | None = None, path: str = "$"):
        self.file = file
        self.path = path
        self.rule = message
        where = f"{file}: " if file else ""
        super().__init__(f"{where}{path}: {message}")


class VersionError(SchemaError):
    """Unknown or missing ``format_version``."""
