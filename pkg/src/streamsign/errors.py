"""Shared exception types used across the toolkit."""


class StreamSignError(Exception):
    """Base class for all errors raised by this package."""


class SourceError(StreamSignError):
    """A byte source failed or was consumed more often than it allows."""


class SinkError(StreamSignError):
    """A byte sink refused or failed a write."""
