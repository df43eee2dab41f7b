"""Process-wide tunables."""

import os

DEFAULT_CHUNK_BYTES = 64 * 1024

ENV_CHUNK_BYTES = "STREAMSIGN_CHUNK_BYTES"


def default_chunk_size() -> int:
    """Chunk size used by all streaming code paths.

    Overridable through the STREAMSIGN_CHUNK_BYTES environment variable.
    """
    raw = os.environ.get(ENV_CHUNK_BYTES)
    if not raw:
        return DEFAULT_CHUNK_BYTES
    value = int(raw)
    if value <= 0:
        raise ValueError(f"{ENV_CHUNK_BYTES} must be a positive integer, got {raw!r}")
    return value


def resolve_chunk_size(chunk_size: int | None) -> int:
    if chunk_size is None:
        return default_chunk_size()
    if chunk_size <= 0:
        raise ValueError(f"chunk size must be positive, got {chunk_size}")
    return chunk_size
