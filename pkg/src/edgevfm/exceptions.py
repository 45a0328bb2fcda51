"""Exception hierarchy shared across modules.

The CLI maps :class:`ValidationError` and :class:`ProtocolError` to exit
code 1 and :class:`TransportError` (plus ``OSError``) to exit code 2.
"""


class EdgeVFMError(Exception):
    """Base class for all package errors."""


class ValidationError(EdgeVFMError, ValueError):
    """An input violates a documented contract."""


class ProtocolError(EdgeVFMError):
    """An agent response does not follow the filtering protocol.

    ``category`` is one of ``malformed``, ``keys``, ``value`` or
    ``topk_overflow``.
    """

    CATEGORIES = ("malformed", "keys", "value", "topk_overflow")

    def __init__(self, category: str, message: str, *, missing=(), extra=()):
        if category not in self.CATEGORIES:
            raise ValueError(f"unknown protocol error category {category!r}")
        super().__init__(f"{category}: {message}")
        self.category = category
        self.missing = tuple(missing)
        self.extra = tuple(extra)


class TransportError(EdgeVFMError):
    """The agent endpoint could not be reached or answered badly."""
