"""Exception types raised by chipforge."""


class ChipforgeError(Exception):
    """Base class for all chipforge errors."""


class MalformedInput(ChipforgeError, ValueError):
    """Input file or value violates the expected schema.

    ``where`` points at the offending element, e.g. ``annotations[3].bbox``
    or ``line 17``.
    """

    def __init__(self, message: str, where: str | None = None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class VersionMismatch(MalformedInput):
    """Manifest header carries a schema version this build cannot read."""


class UnknownImage(ChipforgeError, KeyError):
    """A record references an image id missing from the dataset."""

    def __str__(self) -> str:
        return Exception.__str__(self)


class InstanceTooLarge(ChipforgeError, ValueError):
    """Exhaustive oracle called outside its size bound."""
