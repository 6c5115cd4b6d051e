"""
Error types raised by the restoration library.

I/O problems surface as the builtin `OSError` family; everything below is a
`ValueError` so callers that only care about "bad input" can catch that.
"""


class InvalidInputError(ValueError):
    """Arguments violate an operation's preconditions."""


class ImageFormatError(ValueError):
    """An image file is in a format the library cannot read or write."""


class FlowFormatError(ValueError):
    """A `.flo` file is malformed (bad magic or size mismatch)."""
