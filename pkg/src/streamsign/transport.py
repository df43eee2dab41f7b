"""Minimal streaming HTTP/1.1 subset over TCP plus a deterministic throttle.

Implemented by hand rather than on a web stack because the measurements need
byte-level control over when the first byte leaves the client.  Only what the
benchmark requires exists: POST with a chunked request body, 200/400
responses, one worker thread per connection.
"""

from __future__ import annotations

import json
import socket
import socketserver
import time
from dataclasses import dataclass, field
from typing import IO, Callable

from .config import resolve_chunk_size
from .errors import SinkError, StreamSignError
from .mime import MAX_HEADER_BLOCK, TruncatedPackage
from .wssec import KeyMaterial, WsSecError, verify

HTTP_VERSION = b"HTTP/1.1"

REASONS = {200: "OK", 400: "Bad Request", 404: "Not Found", 500: "Internal Server Error"}


class TransportError(StreamSignError):
    pass


class BindError(TransportError):
    pass


class ConnectError(TransportError):
    pass


@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int
    path: str = "/"

    def __post_init__(self) -> None:
        if not 1 <= self.port <= 65535:
            raise TransportError(f"port out of range: {self.port}")
        if not self.path.startswith("/"):
            raise TransportError(f"path must start with '/': {self.path!r}")

    @classmethod
    def parse(cls, value: str, path: str = "/") -> "Endpoint":
        host, colon, port = value.rpartition(":")
        if not colon or not host:
            raise TransportError(f"expected host:port, got {value!r}")
        return cls(host=host, port=int(port), path=path)


@dataclass(frozen=True)
class ThrottleConfig:
    """Token bucket: long-run `rate` bytes/second, bursts up to `bucket`."""

    rate: float
    bucket: int

    def __post_init__(self) -> None:
        if self.rate <= 0:
            raise TransportError(f"throttle rate must be positive: {self.rate}")
        if self.bucket <= 0:
            raise TransportError(f"bucket must be positive: {self.bucket}")


class ThrottledSink:
    """Byte-transparent pacing wrapper around a sink.

    Tokens accrue continuously at `rate` and cap at `bucket`; a write larger
    than the current balance sleeps for exactly the deficit.  Writes larger
    than the bucket are split.  First/last write times are recorded for
    latency measurements.
    """

    def __init__(
        self,
        inner: IO[bytes],
        config: ThrottleConfig,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self._inner = inner
        self._rate = config.rate
        self._bucket = float(config.bucket)
        self._tokens = float(config.bucket)
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self.first_write_time: float | None = None
        self.last_write_time: float | None = None

    def _refill(self) -> None:
        now = self._clock()
        self._tokens = min(self._bucket, self._tokens + (now - self._last) * self._rate)
        self._last = now

    def write(self, data: bytes) -> int:
        offset = 0
        while offset < len(data):
            piece = data[offset : offset + int(self._bucket)]
            self._refill()
            if self._tokens < len(piece):
                self._sleep((len(piece) - self._tokens) / self._rate)
                self._refill()
            self._tokens -= len(piece)
            if self.first_write_time is None:
                self.first_write_time = self._clock()
            self._inner.write(piece)
            self.last_write_time = self._clock()
            offset += len(piece)
        return len(data)

    def flush(self) -> None:
        flush = getattr(self._inner, "flush", None)
        if flush:
            flush()


class TimestampingSink:
    """Records first/last write times without altering the stream."""

    def __init__(self, inner: IO[bytes], clock: Callable[[], float] = time.monotonic) -> None:
        self._inner = inner
        self._clock = clock
        self.first_write_time: float | None = None
        self.last_write_time: float | None = None

    def write(self, data: bytes) -> int:
        if data and self.first_write_time is None:
            self.first_write_time = self._clock()
        self._inner.write(data)
        if data:
            self.last_write_time = self._clock()
        return len(data)

    def flush(self) -> None:
        flush = getattr(self._inner, "flush", None)
        if flush:
            flush()


def throttled_sink(inner: IO[bytes], config: ThrottleConfig) -> ThrottledSink:
    return ThrottledSink(inner, config)


# ---------------------------------------------------------------------------
# Chunked transfer encoding
# ---------------------------------------------------------------------------


class ChunkedWriter:
    def __init__(self, inner: IO[bytes]) -> None:
        self._inner = inner

    def write(self, data: bytes) -> int:
        if data:
            self._inner.write(b"%x\r\n" % len(data) + data + b"\r\n")
        return len(data)

    def finish(self) -> None:
        self._inner.write(b"0\r\n\r\n")

    def flush(self) -> None:
        flush = getattr(self._inner, "flush", None)
        if flush:
            flush()


class ChunkedReader:
    """read(n)-style pull stream over a chunked request body."""

    def __init__(self, raw: IO[bytes]) -> None:
        self._raw = raw
        self._remaining = 0
        self._done = False

    def _read_line(self) -> bytes:
        line = self._raw.readline(1024)
        if not line.endswith(b"\n"):
            raise TruncatedPackage("connection closed inside chunked framing")
        return line.rstrip(b"\r\n")

    def _next_chunk(self) -> None:
        line = self._read_line()
        try:
            self._remaining = int(line.split(b";")[0], 16)
        except ValueError:
            raise TruncatedPackage(f"bad chunk size line: {line!r}") from None
        if self._remaining == 0:
            trailer = self._read_line()
            if trailer:
                raise TruncatedPackage("unexpected trailer after last chunk")
            self._done = True

    def read(self, n: int) -> bytes:
        if self._done:
            return b""
        if self._remaining == 0:
            self._next_chunk()
            if self._done:
                return b""
        take = min(n, self._remaining)
        data = self._raw.read(take)
        if len(data) < take:
            raise TruncatedPackage("connection closed inside a chunk")
        self._remaining -= take
        if self._remaining == 0:
            crlf = self._raw.read(2)
            if crlf != b"\r\n":
                raise TruncatedPackage("missing CRLF after chunk")
        return data


class ContentLengthReader:
    def __init__(self, raw: IO[bytes], length: int) -> None:
        self._raw = raw
        self._remaining = length

    def read(self, n: int) -> bytes:
        if self._remaining <= 0:
            return b""
        data = self._raw.read(min(n, self._remaining))
        if not data:
            raise TruncatedPackage("connection closed inside request body")
        self._remaining -= len(data)
        return data


# ---------------------------------------------------------------------------
# Server
# ---------------------------------------------------------------------------


@dataclass
class Request:
    method: str
    path: str
    headers: dict[str, str]
    body: IO[bytes]

    @property
    def content_type(self) -> str:
        return self.headers.get("content-type", "")


@dataclass
class Response:
    status: int
    body: bytes
    content_type: str = "application/json"


Handler = Callable[[Request], Response]


class _HttpRequestHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        try:
            request = self._read_request()
        except (TransportError, TruncatedPackage, ValueError):
            self._respond(Response(400, b'{"error":"bad request"}'))
            return
        if request is None:
            return
        try:
            response = self.server.app_handler(request)  # type: ignore[attr-defined]
        except (StreamSignError, OSError) as exc:
            response = Response(400, json.dumps({"error": str(exc)}).encode())
        except Exception as exc:  # noqa: BLE001 - keep the worker alive
            response = Response(500, json.dumps({"error": str(exc)}).encode())
        try:
            self._respond(response)
        except OSError:
            pass  # client went away; close quietly

    def _read_request(self) -> Request | None:
        request_line = self.rfile.readline(8192)
        if not request_line:
            return None
        try:
            method, path, _version = request_line.decode("ascii").split()
        except ValueError:
            raise TransportError(f"bad request line: {request_line!r}") from None
        headers: dict[str, str] = {}
        total = 0
        while True:
            line = self.rfile.readline(8192)
            total += len(line)
            if total > MAX_HEADER_BLOCK:
                raise TransportError("request headers exceed size limit")
            if line in (b"\r\n", b"\n"):
                break
            if not line.endswith(b"\n"):
                raise TruncatedPackage("connection closed inside request headers")
            name, colon, value = line.decode("ascii", "replace").partition(":")
            if not colon:
                raise TransportError(f"bad header line: {line!r}")
            headers[name.strip().lower()] = value.strip()

        if headers.get("transfer-encoding", "").lower() == "chunked":
            body: IO[bytes] = ChunkedReader(self.rfile)
        elif "content-length" in headers:
            body = ContentLengthReader(self.rfile, int(headers["content-length"]))
        else:
            body = ContentLengthReader(self.rfile, 0)
        return Request(method=method, path=path, headers=headers, body=body)

    def _respond(self, response: Response) -> None:
        reason = REASONS.get(response.status, "Unknown")
        head = (
            f"HTTP/1.1 {response.status} {reason}\r\n"
            f"Content-Type: {response.content_type}\r\n"
            f"Content-Length: {len(response.body)}\r\n"
            "Connection: close\r\n\r\n"
        ).encode("ascii")
        self.wfile.write(head + response.body)


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


@dataclass
class ServerHandle:
    endpoint: Endpoint
    _server: _Server = field(repr=False)

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "ServerHandle":
        return self

    def __exit__(self, *_exc) -> None:
        self.close()


def serve(endpoint: Endpoint, handler: Handler) -> ServerHandle:
    """Start the server in a background thread; returns a closable handle.

    Port 0 picks a free port; the handle's endpoint carries the bound one.
    """
    import threading

    try:
        server = _Server((endpoint.host, endpoint.port), _HttpRequestHandler)
    except OSError as exc:
        raise BindError(f"cannot bind {endpoint.host}:{endpoint.port}: {exc}") from exc
    server.app_handler = handler  # type: ignore[attr-defined]
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    bound = Endpoint(host=endpoint.host, port=server.server_address[1], path=endpoint.path)
    return ServerHandle(endpoint=bound, _server=server)


def make_verify_handler(keys: KeyMaterial, allow_unsigned: bool = True) -> Handler:
    """Handler that stream-verifies each POSTed package and reports JSON."""

    def handler(request: Request) -> Response:
        if request.method != "POST":
            return Response(404, b'{"error":"POST only"}')
        report = verify(
            request.body,
            keys,
            content_type=request.content_type,
            allow_unsigned=allow_unsigned,
        )
        ok = report.signature_valid is True or report.mode_detected == "unsigned"
        return Response(200 if ok else 400, report.to_json().encode("ascii"))

    return handler


# ---------------------------------------------------------------------------
# Client
# ---------------------------------------------------------------------------


@dataclass
class SendResult:
    status: int
    body: bytes
    start_time: float
    first_byte_time: float
    last_byte_time: float
    end_time: float


def send(
    endpoint: Endpoint,
    producer: Callable[[IO[bytes]], None],
    throttle: ThrottleConfig | None = None,
    content_type: str = "application/octet-stream",
    timeout: float = 600.0,
    chunk_size: int | None = None,
) -> SendResult:
    """POST a request body written by `producer`, optionally throttled.

    The producer writes the raw package; chunked framing and pacing happen
    below it.  Wall-clock first/last body byte times are recorded at the
    pacing layer.
    """
    resolve_chunk_size(chunk_size)
    start = time.monotonic()
    try:
        sock = socket.create_connection((endpoint.host, endpoint.port), timeout=timeout)
    except OSError as exc:
        raise ConnectError(f"cannot connect to {endpoint.host}:{endpoint.port}: {exc}") from exc
    try:
        with sock:
            raw = sock.makefile("rwb")
            head = (
                f"POST {endpoint.path} HTTP/1.1\r\n"
                f"Host: {endpoint.host}:{endpoint.port}\r\n"
                f"Content-Type: {content_type}\r\n"
                "Transfer-Encoding: chunked\r\n"
                "Connection: close\r\n\r\n"
            ).encode("ascii")
            raw.write(head)
            raw.flush()

            chunked = ChunkedWriter(raw)
            sink: ThrottledSink | TimestampingSink
            if throttle is not None:
                sink = ThrottledSink(chunked, throttle)
            else:
                sink = TimestampingSink(chunked)
            try:
                producer(sink)
            except OSError as exc:
                raise SinkError(f"connection lost while sending: {exc}") from exc
            chunked.finish()
            raw.flush()

            status, body = _read_response(raw)
            end = time.monotonic()
            return SendResult(
                status=status,
                body=body,
                start_time=start,
                first_byte_time=sink.first_write_time or end,
                last_byte_time=sink.last_write_time or end,
                end_time=end,
            )
    except OSError as exc:
        raise ConnectError(f"transport failure: {exc}") from exc


def _read_response(raw: IO[bytes]) -> tuple[int, bytes]:
    status_line = raw.readline(8192)
    parts = status_line.decode("ascii", "replace").split(None, 2)
    if len(parts) < 2 or not parts[1].isdigit():
        raise ConnectError(f"bad response status line: {status_line!r}")
    status = int(parts[1])
    length = None
    while True:
        line = raw.readline(8192)
        if line in (b"\r\n", b"\n", b""):
            break
        name, _colon, value = line.decode("ascii", "replace").partition(":")
        if name.strip().lower() == "content-length":
            length = int(value.strip())
    if length is None:
        body = raw.read()
    else:
        body = raw.read(length)
    return status, body
