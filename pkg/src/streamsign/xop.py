"""XOP packaging: pull base64Binary content out into raw MIME parts and back.

`extract` replaces each designated element's text with an ``xop:Include``
reference and prepares one binary part per element; `reconstitute` inverts
this, materializing the inline base64 form (deliberately memory-hungry, it
exists to implement and measure the blocking approach).  The base64 codecs
are incremental and chunk-boundary safe.
"""

from __future__ import annotations

import binascii
import random
import re
import secrets
from dataclasses import dataclass, replace
from typing import IO, Iterable, Iterator, Mapping

from . import mime, xmlcore
from .config import resolve_chunk_size
from .errors import StreamSignError
from .sources import ByteSource
from .xmlcore import ElementPath, XmlName, XmlNode

XOP_NS = "http://www.w3.org/2004/08/xop/include"
XOP_INCLUDE = XmlName(local="Include", namespace_uri=XOP_NS, prefix="xop")
HREF = XmlName(local="href")

ROOT_PART_CONTENT_TYPE = 'application/xop+xml; charset=UTF-8; type="application/soap+xml"'

CONTENT_ID_DOMAIN = "@streamsign"


class XopError(StreamSignError):
    """Base class for XOP packaging errors."""


class InvalidBase64(XopError):
    pass


class PathNotFound(XopError):
    pass


class DuplicatePath(XopError):
    pass


class UnresolvedReference(XopError):
    pass


class DuplicateContentId(XopError):
    pass


# ---------------------------------------------------------------------------
# Streaming base64
# ---------------------------------------------------------------------------


class Base64Encoder:
    """Incremental base64 encoder; output independent of input chunking."""

    def __init__(self) -> None:
        self._carry = b""

    def feed(self, chunk: bytes) -> bytes:
        data = self._carry + chunk
        whole = len(data) - len(data) % 3
        self._carry = data[whole:]
        if not whole:
            return b""
        return binascii.b2a_base64(data[:whole], newline=False)

    def flush(self) -> bytes:
        if not self._carry:
            return b""
        out = binascii.b2a_base64(self._carry, newline=False)
        self._carry = b""
        return out


_B64_CLEAN = re.compile(rb"[^A-Za-z0-9+/=]")
_B64_WS = re.compile(rb"\s+")


class Base64Decoder:
    """Incremental base64 decoder; tolerates and skips whitespace."""

    def __init__(self) -> None:
        self._carry = b""
        self._done = False

    def feed(self, chunk: bytes) -> bytes:
        data = _B64_WS.sub(b"", chunk)
        if not data:
            return b""
        if self._done:
            raise InvalidBase64("data after padding")
        data = self._carry + data
        bad = _B64_CLEAN.search(data)
        if bad:
            raise InvalidBase64(f"invalid character {bad.group()!r}")
        whole = len(data) - len(data) % 4
        self._carry = data[whole:]
        if not whole:
            return b""
        block = data[:whole]
        eq = block.find(b"=")
        if eq != -1:
            # Padding may only close the final quad (one or two '=').
            if eq < whole - 2 or block[eq:] != b"=" * (whole - eq):
                raise InvalidBase64("misplaced padding")
            if self._carry:
                raise InvalidBase64("data after padding")
            self._done = True
        try:
            return binascii.a2b_base64(block)
        except binascii.Error as exc:
            raise InvalidBase64(str(exc)) from exc

    def flush(self) -> bytes:
        if self._carry:
            raise InvalidBase64(f"truncated base64 (dangling {len(self._carry)} chars)")
        return b""


def base64_encode_stream(chunks: Iterable[bytes], sink: IO[bytes]) -> int:
    """Encode a chunk stream to `sink`; returns the encoded length."""
    encoder = Base64Encoder()
    written = 0
    for chunk in chunks:
        out = encoder.feed(chunk)
        if out:
            sink.write(out)
            written += len(out)
    out = encoder.flush()
    if out:
        sink.write(out)
        written += len(out)
    return written


def base64_decode_stream(chunks: Iterable[bytes], sink: IO[bytes]) -> int:
    """Decode a base64 chunk stream to `sink`; returns the decoded length."""
    decoder = Base64Decoder()
    written = 0
    for chunk in chunks:
        out = decoder.feed(chunk)
        if out:
            sink.write(out)
            written += len(out)
    decoder.flush()
    return written


# ---------------------------------------------------------------------------
# Packages
# ---------------------------------------------------------------------------


def new_content_id(rng: random.Random | None = None) -> str:
    if rng is None:
        token = secrets.token_hex(16)
    else:
        token = f"{rng.getrandbits(128):032x}"
    return token + CONTENT_ID_DOMAIN


@dataclass(frozen=True)
class BinaryContent:
    """A binary payload designated for extraction."""

    source: ByteSource
    media_type: str = "application/octet-stream"
    declared_length: int | None = None  # advisory


@dataclass
class XopPackage:
    """Optimized envelope plus its ordered binary parts."""

    root: XmlNode
    parts: list[mime.MimePart]
    boundary: str
    root_content_id: str

    def content_type(self) -> str:
        return mime.format_package_content_type(self.boundary, self.root_content_id)


def make_include(content_id: str) -> XmlNode:
    return XmlNode(name=XOP_INCLUDE, attributes=((HREF, f"cid:{content_id}"),))


def include_content_id(node: XmlNode) -> str:
    """Content id referenced by an ``xop:Include`` element (validated)."""
    if node.name.namespace_uri != XOP_NS or node.name.local != "Include":
        raise XopError(f"not an xop:Include element: {node.name.qname}")
    if len(node.attributes) != 1 or node.children:
        raise XopError("xop:Include must carry exactly one href attribute and no children")
    href = node.attribute("href")
    if href is None or not href.startswith("cid:") or len(href) <= 4:
        raise XopError(f"xop:Include href is not a cid URI: {href!r}")
    return href[4:]


def extract(
    envelope: XmlNode,
    binaries: Mapping[ElementPath, BinaryContent],
    boundary: str | None = None,
    content_ids: Mapping[ElementPath, str] | None = None,
    rng: random.Random | None = None,
    chunk_size: int | None = None,
) -> XopPackage:
    """Pull each designated element's content out into a raw binary part.

    Each path must name a distinct element whose content is text-only (the
    base64Binary carrier); existing text is dropped and replaced by an
    ``xop:Include`` reference.  Parts appear in designation order.
    """
    chunk = resolve_chunk_size(chunk_size)
    paths = list(binaries.keys())
    for i, path in enumerate(paths):
        for other in paths[i + 1 :]:
            if path == other or path == other[: len(path)] or other == path[: len(other)]:
                raise DuplicatePath(f"paths {path} and {other} overlap")

    root = envelope
    parts: list[mime.MimePart] = []
    seen_ids: set[str] = set()
    for path in paths:
        binary = binaries[path]
        try:
            carrier = xmlcore.get_path(root, path)
        except xmlcore.XmlError as exc:
            raise PathNotFound(str(exc)) from exc
        if carrier.element_children():
            raise XopError(f"carrier at {path} has element children, not base64 text")
        if content_ids is not None:
            cid = content_ids[path]
        else:
            cid = new_content_id(rng)
        if cid in seen_ids:
            raise DuplicateContentId(f"content id {cid} assigned twice")
        seen_ids.add(cid)
        new_carrier = replace(carrier, children=(make_include(cid),))
        root = xmlcore.replace_path(root, path, new_carrier)
        headers = mime.MimeHeaders(
            content_id=cid,
            content_type=binary.media_type,
            content_transfer_encoding="binary",
        )
        parts.append(mime.MimePart(headers=headers, body=binary.source()))

    return XopPackage(
        root=root,
        parts=parts,
        boundary=boundary if boundary is not None else mime.generate_boundary(rng),
        root_content_id=new_content_id(rng),
    )


def reconstitute(package: XopPackage) -> XmlNode:
    """Rebuild the inline-base64 infoset; consumes the package's part bodies.

    Materializes the whole tree in memory by design.
    """
    bodies: dict[str, mime.MimePart] = {}
    for part in package.parts:
        cid = part.headers.content_id
        if cid in bodies:
            raise DuplicateContentId(f"content id {cid} appears on two parts")
        bodies[cid] = part

    used: set[str] = set()

    def rebuild(node: XmlNode) -> XmlNode:
        if node.name.namespace_uri == XOP_NS and node.name.local == "Include":
            raise XopError("xop:Include outside a carrier element")
        children: list[xmlcore.Child] = []
        for child in node.children:
            if isinstance(child, str):
                children.append(child)
                continue
            if child.name.namespace_uri == XOP_NS and child.name.local == "Include":
                cid = include_content_id(child)
                if cid in used:
                    raise DuplicateContentId(f"content id {cid} referenced twice")
                used.add(cid)
                if cid not in bodies:
                    raise UnresolvedReference(f"cid:{cid} has no matching part")
                encoder = Base64Encoder()
                pieces = [encoder.feed(c) for c in bodies[cid].body]
                pieces.append(encoder.flush())
                children.append(b"".join(pieces).decode("ascii"))
            else:
                children.append(rebuild(child))
        return replace(node, children=tuple(children))

    return rebuild(package.root)


def validate_package(package: XopPackage) -> None:
    """Check the package's reference integrity invariants."""
    part_ids = [p.headers.content_id for p in package.parts]
    if len(part_ids) != len(set(part_ids)):
        raise DuplicateContentId("duplicate content id among parts")
    referenced: list[str] = []
    for _path, node in xmlcore.iter_elements(package.root):
        if node.name.namespace_uri == XOP_NS and node.name.local == "Include":
            referenced.append(include_content_id(node))
    if len(referenced) != len(set(referenced)):
        raise DuplicateContentId("a part is referenced by more than one xop:Include")
    missing = [cid for cid in referenced if cid not in set(part_ids)]
    if missing:
        raise UnresolvedReference(f"unresolved cid references: {missing}")


def write_package(
    package: XopPackage,
    sink: IO[bytes],
    chunk_size: int | None = None,
    with_header: bool = False,
) -> int:
    """Serialize the package to `sink`; consumes part bodies."""
    total = 0
    if with_header:
        total += mime.write_package_header(sink, package.content_type())
    root_part = mime.MimePart(
        headers=mime.MimeHeaders(
            content_id=package.root_content_id,
            content_type=ROOT_PART_CONTENT_TYPE,
            content_transfer_encoding="8bit",
        ),
        body=iter([xmlcore.serialize(package.root)]),
    )
    parts: list[mime.MimePart] = [root_part] + package.parts
    total += mime.write_package(sink, package.boundary, parts, chunk_size=chunk_size)
    return total


def read_package(
    source: IO[bytes],
    content_type: str | None = None,
    chunk_size: int | None = None,
    max_root_bytes: int = 64 * 1024 * 1024,
) -> XopPackage:
    """Read a package, buffering the root part and the binary part bodies.

    Intended for file-scale tooling and tests; the verifier streams parts
    itself instead of going through this.
    """
    if content_type is None:
        headers = mime.read_package_header(source)
        content_type = headers.get("content-type", "")
    boundary, start = mime.parse_package_content_type(content_type)
    parts_iter = mime.read_package(source, boundary, chunk_size=chunk_size)
    try:
        root_part = next(parts_iter)
    except StopIteration:
        raise XopError("package has no root part") from None
    if start and root_part.headers.content_id != start:
        raise XopError(
            f"root part id {root_part.headers.content_id!r} does not match start={start!r}"
        )
    root_bytes = b""
    for chunk in root_part.body:
        root_bytes += chunk
        if len(root_bytes) > max_root_bytes:
            raise XopError("root part exceeds size limit")
    root = xmlcore.parse(root_bytes)
    parts = []
    for part in parts_iter:
        parts.append(
            mime.MimePart(headers=part.headers, body=iter([b"".join(part.body)]))
        )
    return XopPackage(
        root=root,
        parts=parts,
        boundary=boundary,
        root_content_id=root_part.headers.content_id,
    )
