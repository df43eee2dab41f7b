"""Streaming writer and reader for multipart/related packages.

Both sides run in bounded memory: the writer forwards body chunks as they
arrive, the reader holds at most one chunk plus a small holdback window while
scanning for the boundary delimiter.  Boundary safety is probabilistic (128
random bits); an optional debug scan can assert a body never contains the
delimiter.
"""

from __future__ import annotations

import random
import secrets
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

from .config import resolve_chunk_size
from .errors import StreamSignError

MAX_HEADER_BLOCK = 16 * 1024

BOUNDARY_SENTINEL = "=_"

CRLF = b"\r\n"

TRANSFER_ENCODINGS = ("binary", "base64", "8bit")


class MimeError(StreamSignError):
    """Base class for multipart framing errors."""


class MissingBoundary(MimeError):
    pass


class TruncatedPackage(MimeError):
    pass


class MalformedHeaders(MimeError):
    pass


class BodyReadError(MimeError):
    pass


class BoundaryCollision(MimeError):
    """Debug-scan mode found the boundary inside a part body."""


@dataclass(frozen=True)
class MimeHeaders:
    """The subset of part headers this toolkit reads and writes."""

    content_id: str
    content_type: str
    content_transfer_encoding: str = "binary"

    def __post_init__(self) -> None:
        if any(c.isspace() or c in "<>" for c in self.content_id):
            raise MimeError(f"invalid content id: {self.content_id!r}")
        if "/" not in self.content_type:
            raise MimeError(f"invalid content type: {self.content_type!r}")
        if self.content_transfer_encoding not in TRANSFER_ENCODINGS:
            raise MimeError(
                f"unsupported transfer encoding: {self.content_transfer_encoding!r}"
            )


@dataclass
class MimePart:
    """One part: headers plus a single-consumption body chunk stream."""

    headers: MimeHeaders
    body: Iterator[bytes]


def generate_boundary(rng: random.Random | None = None) -> str:
    """Boundary with 128 bits of randomness behind a fixed sentinel prefix."""
    if rng is None:
        token = secrets.token_hex(16)
    else:
        token = f"{rng.getrandbits(128):032x}"
    return BOUNDARY_SENTINEL + token


def format_package_content_type(boundary: str, start_cid: str) -> str:
    return (
        'multipart/related; type="application/xop+xml"; '
        f'boundary="{boundary}"; start="<{start_cid}>"'
    )


def parse_package_content_type(value: str) -> tuple[str, str | None]:
    """Return (boundary, start content id) from a package content type."""
    media, _, rest = value.partition(";")
    if media.strip().lower() != "multipart/related":
        raise MimeError(f"not a multipart/related content type: {media.strip()!r}")
    params = {}
    for item in rest.split(";"):
        key, eq, val = item.partition("=")
        if not eq:
            continue
        val = val.strip()
        if len(val) >= 2 and val[0] == '"' and val[-1] == '"':
            val = val[1:-1]
        params[key.strip().lower()] = val
    boundary = params.get("boundary")
    if not boundary:
        raise MissingBoundary("content type carries no boundary parameter")
    start = params.get("start")
    if start and start.startswith("<") and start.endswith(">"):
        start = start[1:-1]
    return boundary, start


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------


def write_package(
    sink: IO[bytes],
    boundary: str,
    parts: Iterable[MimePart],
    chunk_size: int | None = None,
    scan_bodies: bool = False,
) -> int:
    """Stream parts to `sink` as a multipart/related package.

    Returns the total number of bytes written.  With `scan_bodies` the body
    stream is additionally scanned for the delimiter and BoundaryCollision
    raised on a hit (costs a full extra pass over the data, debugging only).
    """
    chunk_hint = resolve_chunk_size(chunk_size)
    delimiter = b"--" + boundary.encode("ascii")
    scan_needle = CRLF + delimiter
    total = 0

    def emit(data: bytes) -> None:
        nonlocal total
        sink.write(data)
        total += len(data)

    for part in parts:
        h = part.headers
        emit(delimiter + CRLF)
        emit(f"Content-ID: <{h.content_id}>\r\n".encode("ascii"))
        emit(f"Content-Type: {h.content_type}\r\n".encode("ascii"))
        emit(
            f"Content-Transfer-Encoding: {h.content_transfer_encoding}\r\n".encode("ascii")
        )
        emit(CRLF)
        tail = b""
        try:
            for chunk in part.body:
                if not chunk:
                    continue
                if scan_bodies:
                    if scan_needle in tail + chunk:
                        raise BoundaryCollision(
                            f"part {h.content_id} contains the boundary delimiter"
                        )
                    tail = (tail + chunk)[-(len(scan_needle) - 1) :]
                if len(chunk) > chunk_hint:
                    for i in range(0, len(chunk), chunk_hint):
                        emit(chunk[i : i + chunk_hint])
                else:
                    emit(chunk)
        except (StreamSignError, OSError):
            raise
        except Exception as exc:  # noqa: BLE001 - body iterators are caller code
            raise BodyReadError(f"part {h.content_id} body failed: {exc}") from exc
        emit(CRLF)
    emit(delimiter + b"--" + CRLF)
    return total


def write_package_header(sink: IO[bytes], content_type: str) -> int:
    """Top-level header block used when a package is stored as a file."""
    head = f"MIME-Version: 1.0\r\nContent-Type: {content_type}\r\n\r\n".encode("ascii")
    sink.write(head)
    return len(head)


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------


class _Buffered:
    """Pull buffer over a byte stream with bounded refill."""

    def __init__(self, raw: IO[bytes], chunk_size: int) -> None:
        self._raw = raw
        self._chunk = chunk_size
        self.buf = bytearray()
        self.eof = False

    def fill(self) -> bool:
        """Read one more chunk; False at end of stream."""
        if self.eof:
            return False
        block = self._raw.read(self._chunk)
        if not block:
            self.eof = True
            return False
        self.buf += block
        return True

    def ensure(self, n: int) -> bool:
        while len(self.buf) < n:
            if not self.fill():
                return False
        return True

    def take(self, n: int) -> bytes:
        data = bytes(self.buf[:n])
        del self.buf[:n]
        return data


def read_package_header(source: IO[bytes]) -> dict[str, str]:
    """Read the top-level header block of a package file.

    Returns lower-cased header names mapped to values; the stream is left
    positioned at the first dash-boundary.
    """
    headers: dict[str, str] = {}
    line = bytearray()
    consumed = 0
    while True:
        byte = source.read(1)
        if not byte:
            raise TruncatedPackage("end of stream inside package header block")
        consumed += 1
        if consumed > MAX_HEADER_BLOCK:
            raise MalformedHeaders("package header block exceeds size limit")
        if byte != b"\n":
            line += byte
            continue
        text = line.rstrip(b"\r").decode("ascii", errors="replace")
        line.clear()
        if not text:
            return headers
        name, colon, value = text.partition(":")
        if not colon or not name.strip():
            raise MalformedHeaders(f"bad package header line: {text!r}")
        headers[name.strip().lower()] = value.strip()


def read_package(
    source: IO[bytes],
    boundary: str,
    chunk_size: int | None = None,
) -> Iterator[MimePart]:
    """Lazily yield parts from a multipart/related stream.

    Each part's body is a chunk iterator sharing the underlying stream; a
    body left unconsumed is drained automatically when the next part is
    requested.  The source must be positioned at the first dash-boundary.
    """
    chunk = resolve_chunk_size(chunk_size)
    delimiter = b"--" + boundary.encode("ascii")
    body_needle = CRLF + delimiter
    buffered = _Buffered(source, chunk)

    # Locate the opening delimiter (an optional leading CRLF is tolerated).
    buffered.ensure(len(delimiter) + 2)
    if buffered.buf.startswith(CRLF):
        buffered.take(2)
        buffered.ensure(len(delimiter))
    if not buffered.buf.startswith(delimiter):
        raise MissingBoundary("stream does not start with the dash-boundary")
    buffered.take(len(delimiter))

    while True:
        # After a delimiter: "--" closes the package, CRLF opens a part.
        if not buffered.ensure(2):
            raise TruncatedPackage("end of stream after boundary delimiter")
        tail = bytes(buffered.buf[:2])
        if tail == b"--":
            buffered.take(2)
            return
        if tail == CRLF:
            buffered.take(2)
        elif tail[:1] == b"\n":  # lenient lone-LF line break
            buffered.take(1)
        else:
            raise MalformedHeaders(f"unexpected bytes after boundary: {tail!r}")

        headers = _read_part_headers(buffered)
        body = _body_stream(buffered, body_needle, chunk)
        yield MimePart(headers=headers, body=body)
        for _ in body:  # drain whatever the consumer left unread
            pass


def _read_part_headers(buffered: _Buffered) -> MimeHeaders:
    # The block ends at the first empty line; line breaks may be CRLF or
    # lone LF, so the terminator is "\n\n" or "\n\r\n", whichever comes first.
    buffered.ensure(2)
    if buffered.buf.startswith(CRLF) or buffered.buf.startswith(b"\n"):
        raise MalformedHeaders("part has no headers")
    scanned = 0
    while True:
        lf_lf = buffered.buf.find(b"\n\n", scanned)
        lf_crlf = buffered.buf.find(b"\n\r\n", scanned)
        candidates = [(pos, skip) for pos, skip in ((lf_lf, 2), (lf_crlf, 3)) if pos != -1]
        if candidates:
            block, skip = min(candidates)
            break
        scanned = max(0, len(buffered.buf) - 3)
        if len(buffered.buf) > MAX_HEADER_BLOCK:
            raise MalformedHeaders("part header block exceeds 16 KiB")
        if not buffered.fill():
            raise TruncatedPackage("end of stream inside part headers")

    raw = buffered.take(block)
    buffered.take(skip)
    if len(raw) > MAX_HEADER_BLOCK:
        raise MalformedHeaders("part header block exceeds 16 KiB")

    fields: dict[str, str] = {}
    for line in raw.split(b"\n"):
        text = line.rstrip(b"\r").decode("ascii", errors="replace")
        if not text:
            continue
        if text[0] in " \t":
            raise MalformedHeaders("header continuation lines are not supported")
        name, colon, value = text.partition(":")
        if not colon or not name.strip():
            raise MalformedHeaders(f"bad header line: {text!r}")
        fields[name.strip().lower()] = value.strip()

    content_id = fields.get("content-id", "")
    if content_id.startswith("<") and content_id.endswith(">"):
        content_id = content_id[1:-1]
    content_type = fields.get("content-type")
    if not content_type:
        raise MalformedHeaders("part lacks a Content-Type header")
    encoding = fields.get("content-transfer-encoding", "binary")
    try:
        return MimeHeaders(
            content_id=content_id,
            content_type=content_type,
            content_transfer_encoding=encoding,
        )
    except MimeError as exc:
        raise MalformedHeaders(str(exc)) from exc


def _body_stream(buffered: _Buffered, needle: bytes, chunk: int) -> Iterator[bytes]:
    # A delimiter match needs len(needle) + 2 tail bytes to be decided, so
    # hold back len(needle) + 1 bytes whenever no match is in the buffer yet.
    holdback = len(needle) + 1
    while True:
        index = buffered.buf.find(needle)
        if index != -1:
            if not buffered.ensure(index + len(needle) + 2):
                raise TruncatedPackage("end of stream right after delimiter")
            if index:
                yield buffered.take(index)
            buffered.take(len(needle))
            return
        if len(buffered.buf) > holdback:
            yield buffered.take(len(buffered.buf) - holdback)
        if not buffered.fill():
            raise TruncatedPackage("end of stream inside part body")
