"""Byte sources: re-openable producers of chunked byte streams.

A *source* here is a zero-argument callable returning a fresh iterator of
``bytes`` chunks.  Re-readable sources (files, buffers, seeded generators)
may be opened any number of times; single-pass sources raise
:class:`~streamsign.errors.SourceError` on a second open.
"""

from __future__ import annotations

import random
from typing import Callable, Iterable, Iterator

from .config import resolve_chunk_size
from .errors import SourceError

ByteSource = Callable[[], Iterator[bytes]]


def bytes_source(data: bytes, chunk_size: int | None = None) -> ByteSource:
    """Re-readable source over an in-memory byte string."""
    chunk = resolve_chunk_size(chunk_size)

    def open_source() -> Iterator[bytes]:
        for i in range(0, len(data), chunk):
            yield data[i : i + chunk]

    return open_source


def file_source(path: str, chunk_size: int | None = None) -> ByteSource:
    """Re-readable source over a file on disk."""
    chunk = resolve_chunk_size(chunk_size)

    def open_source() -> Iterator[bytes]:
        with open(path, "rb") as fh:
            while True:
                block = fh.read(chunk)
                if not block:
                    return
                yield block

    return open_source


def prng_source(seed: int, size: int, chunk_size: int | None = None) -> ByteSource:
    """Re-readable pseudorandom source; every open replays the same bytes."""
    chunk = resolve_chunk_size(chunk_size)

    def open_source() -> Iterator[bytes]:
        rng = random.Random(seed)
        remaining = size
        while remaining > 0:
            n = min(chunk, remaining)
            yield rng.randbytes(n)
            remaining -= n

    return open_source


def single_pass(chunks: Iterable[bytes]) -> ByteSource:
    """Wrap an iterable as a source that can be opened exactly once."""
    state = {"opened": False}

    def open_source() -> Iterator[bytes]:
        if state["opened"]:
            raise SourceError("single-pass source opened twice")
        state["opened"] = True
        return iter(chunks)

    return open_source


def read_all(source: ByteSource) -> bytes:
    return b"".join(source())
