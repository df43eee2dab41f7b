"""Single-pass verification of signed packages.

Payload parts are digested as they stream by and never buffered; only the
root (envelope) part and the final signature part are materialized, both
size-capped.  The digest algorithm for streamed parts is the pre-agreed
default unless the message is blocking-mode, where the inline SignedInfo is
known before the first payload byte.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field, replace
from typing import IO

from .. import mime, xmlcore, xop
from ..config import resolve_chunk_size
from ..xmlcore import ElementPath, XmlNode
from . import constants as c
from .keys import KeyMaterial
from .manifest import (
    MalformedMessage,
    SignatureManifest,
    StreamingReferenceDigest,
    UnsupportedAlgorithm,
    WsSecError,
    digest_bytes,
    parse_signed_info,
    strict_b64decode,
)
from .signing import (
    MODE_BLOCKING,
    MODE_STREAMING_LAX,
    MODE_STREAMING_STRICT,
    DecryptFailed,
    decrypt_signature_bytes,
    find_security,
)

MODE_UNSIGNED = "unsigned"

MAX_ROOT_PART_BYTES = 64 * 1024 * 1024
MAX_SIGNATURE_PART_BYTES = 16 * 1024 * 1024


class UnresolvedReference(WsSecError):
    pass


@dataclass
class ReferenceCheck:
    uri: str
    computed_digest: bytes
    declared_digest: bytes
    match: bool


@dataclass
class VerificationReport:
    """Outcome of verifying one message."""

    signature_valid: bool | None
    mode_detected: str
    per_reference: list[ReferenceCheck] = field(default_factory=list)
    key_id_matched: bool | None = None
    detail: str = ""

    def failed_uris(self) -> list[str]:
        return [r.uri for r in self.per_reference if not r.match]

    def to_json(self) -> str:
        return json.dumps(
            {
                "signature_valid": self.signature_valid,
                "mode": self.mode_detected,
                "key_id_matched": self.key_id_matched,
                "references": [
                    {
                        "uri": r.uri,
                        "match": r.match,
                        "computed": base64.b64encode(r.computed_digest).decode("ascii"),
                        "declared": base64.b64encode(r.declared_digest).decode("ascii"),
                    }
                    for r in self.per_reference
                ],
                "detail": self.detail,
            },
            separators=(",", ":"),
        )


@dataclass
class _Carrier:
    prefix: bytes
    suffix: bytes


def _read_capped(body, cap: int, what: str) -> bytes:
    total = bytearray()
    for chunk in body:
        total += chunk
        if len(total) > cap:
            raise MalformedMessage(f"{what} exceeds {cap} bytes")
    return bytes(total)


def _remove_child(root: XmlNode, parent_path: ElementPath, child: XmlNode) -> XmlNode:
    parent = xmlcore.get_path(root, parent_path)
    kept = tuple(k for k in parent.children if k is not child)
    if len(kept) == len(parent.children):
        raise MalformedMessage("signature carrier not found for removal")
    return xmlcore.replace_path(root, parent_path, replace(parent, children=kept))


def _detect_carrier(security: XmlNode) -> tuple[str, XmlNode] | None:
    """Classify the signature carrier inside the security header."""
    carriers = []
    for child in security.element_children():
        if child.name.namespace_uri == c.NS_DS and child.name.local == "Signature":
            kids = child.element_children()
            if len(kids) == 1 and kids[0].name.namespace_uri == xop.XOP_NS:
                carriers.append((MODE_STREAMING_LAX, child))
            else:
                carriers.append((MODE_BLOCKING, child))
        elif child.name.namespace_uri == c.NS_XENC and child.name.local == "EncryptedData":
            carriers.append((MODE_STREAMING_STRICT, child))
    if not carriers:
        return None
    if len(carriers) > 1:
        raise MalformedMessage("security header carries more than one signature")
    return carriers[0]


def _strict_signature_cid(carrier: XmlNode) -> str:
    method = None
    cipher_value = None
    for child in carrier.element_children():
        if child.name.local == "EncryptionMethod" and child.name.namespace_uri == c.NS_XENC:
            method = child.attribute("Algorithm")
        if child.name.local == "CipherData" and child.name.namespace_uri == c.NS_XENC:
            values = child.element_children()
            if len(values) == 1 and values[0].name.local == "CipherValue":
                cipher_value = values[0]
    if method != c.ALG_AES256_GCM:
        raise UnsupportedAlgorithm(f"encryption algorithm {method!r}")
    if cipher_value is None:
        raise MalformedMessage("EncryptedData lacks CipherData/CipherValue")
    includes = cipher_value.element_children()
    if len(includes) != 1:
        raise MalformedMessage("CipherValue must hold exactly one xop:Include")
    return xop.include_content_id(includes[0])


def _parse_signature_element(node: XmlNode) -> tuple[SignatureManifest, XmlNode, bytes, str]:
    """Split a complete ds:Signature into manifest, SignedInfo node,
    signature value and declared key id."""
    if node.name.namespace_uri != c.NS_DS or node.name.local != "Signature":
        raise MalformedMessage(f"expected ds:Signature, got {node.name.qname}")
    signed_info = None
    signature_value = None
    key_name = None
    for child in node.element_children():
        if child.name.local == "SignedInfo":
            signed_info = child
        elif child.name.local == "SignatureValue":
            signature_value = strict_b64decode(child.text())
        elif child.name.local == "KeyInfo":
            names = [k for k in child.element_children() if k.name.local == "KeyName"]
            if len(names) != 1:
                raise MalformedMessage("KeyInfo must hold exactly one KeyName")
            key_name = names[0].text().strip()
    if signed_info is None or signature_value is None or key_name is None:
        raise MalformedMessage("ds:Signature incomplete")
    return parse_signed_info(signed_info), signed_info, signature_value, key_name


def _collect_carriers(root: XmlNode) -> dict[str, _Carrier]:
    """Map content id -> canonical tag frame for every payload carrier."""
    from .manifest import carrier_tag_pair

    carriers: dict[str, _Carrier] = {}
    for path, node in xmlcore.iter_elements(root):
        if node.name.namespace_uri != xop.XOP_NS or node.name.local != "Include":
            continue
        try:
            cid = xop.include_content_id(node)
        except xop.XopError as exc:
            raise MalformedMessage(str(exc)) from exc
        if not path:
            raise MalformedMessage("xop:Include cannot be the document root")
        parent = xmlcore.get_path(root, path[:-1])
        if len(parent.element_children()) != 1 or parent.text().strip():
            raise MalformedMessage(f"carrier of cid:{cid} has extra content")
        if cid in carriers:
            raise MalformedMessage(f"cid:{cid} referenced by more than one xop:Include")
        prefix, suffix = carrier_tag_pair(parent)
        carriers[cid] = _Carrier(prefix=prefix, suffix=suffix)
    return carriers


def verify(
    source: IO[bytes],
    keys: KeyMaterial,
    content_type: str | None = None,
    digest_algorithm: str = c.ALG_SHA256,
    chunk_size: int | None = None,
    allow_unsigned: bool = False,
) -> VerificationReport:
    """Verify a signed package, streaming payload parts in bounded memory.

    `content_type` carries the boundary and start id; when omitted it is
    read from a top-level header block on the stream.  Structural problems
    raise; digest or signature mismatches are reported in the returned
    VerificationReport.
    """
    chunk = resolve_chunk_size(chunk_size)
    try:
        return _verify(source, keys, content_type, digest_algorithm, chunk, allow_unsigned)
    except (mime.MimeError, xmlcore.XmlError, xop.XopError) as exc:
        if isinstance(exc, WsSecError):
            raise
        raise MalformedMessage(str(exc)) from exc


def _verify(
    source: IO[bytes],
    keys: KeyMaterial,
    content_type: str | None,
    digest_algorithm: str,
    chunk: int,
    allow_unsigned: bool,
) -> VerificationReport:
    if content_type is None:
        top = mime.read_package_header(source)
        content_type = top.get("content-type", "")
        if not content_type:
            raise MalformedMessage("package header lacks a Content-Type")
    boundary, start = mime.parse_package_content_type(content_type)
    parts = mime.read_package(source, boundary, chunk_size=chunk)

    try:
        root_part = next(parts)
    except StopIteration:
        raise MalformedMessage("package is empty") from None
    if start and root_part.headers.content_id != start:
        raise MalformedMessage("root part content id does not match start parameter")
    if not root_part.headers.content_type.startswith("application/xop+xml"):
        raise MalformedMessage(
            f"root part has content type {root_part.headers.content_type!r}"
        )
    root = xmlcore.parse(_read_capped(root_part.body, MAX_ROOT_PART_BYTES, "root part"))

    security_hit = find_security(root)
    carrier_info = _detect_carrier(security_hit[1]) if security_hit else None

    if carrier_info is None:
        if not allow_unsigned:
            raise MalformedMessage("message carries no signature")
        for part in parts:  # validate framing, drop content
            for _ in part.body:
                pass
        return VerificationReport(
            signature_valid=None, mode_detected=MODE_UNSIGNED, detail="unsigned message"
        )

    mode, carrier = carrier_info
    security_path = security_hit[0]
    bare_root = _remove_child(root, security_path, carrier)

    declared: SignatureManifest | None = None
    signed_info_node: XmlNode | None = None
    signature_value = b""
    declared_key_id = ""
    signature_cid: str | None = None

    if mode == MODE_BLOCKING:
        declared, signed_info_node, signature_value, declared_key_id = _parse_signature_element(carrier)
        env_alg = declared.reference(c.ENVELOPE_REFERENCE_URI).digest_algorithm if _has_ref(declared, c.ENVELOPE_REFERENCE_URI) else digest_algorithm
    elif mode == MODE_STREAMING_LAX:
        signature_cid = xop.include_content_id(carrier.element_children()[0])
        env_alg = digest_algorithm
    else:
        signature_cid = _strict_signature_cid(carrier)
        env_alg = digest_algorithm

    envelope_digest = digest_bytes(xmlcore.canonicalize(bare_root), env_alg)
    carriers = _collect_carriers(bare_root)

    def part_algorithm(cid: str) -> str:
        if declared is not None and _has_ref(declared, f"cid:{cid}"):
            return declared.reference(f"cid:{cid}").digest_algorithm
        return digest_algorithm

    streamed: dict[str, bytes] = {}
    signature_bytes: bytes | None = None
    for part in parts:
        cid = part.headers.content_id
        if signature_cid is not None and cid == signature_cid:
            signature_bytes = _read_capped(
                part.body, MAX_SIGNATURE_PART_BYTES, "signature part"
            )
            try:
                next(parts)
            except StopIteration:
                break
            raise MalformedMessage("signature part is not the last part")
        if cid not in carriers:
            raise MalformedMessage(f"part cid:{cid} is not referenced from the envelope")
        if cid in streamed:
            raise MalformedMessage(f"duplicate part cid:{cid}")
        if part.headers.content_transfer_encoding != "binary":
            raise MalformedMessage(
                f"payload part cid:{cid} uses unsupported transfer encoding"
            )
        frame = carriers[cid]
        digester = StreamingReferenceDigest(frame.prefix, frame.suffix, part_algorithm(cid))
        for piece in part.body:
            digester.update(piece)
        streamed[cid] = digester.finish()

    if mode != MODE_BLOCKING:
        if signature_bytes is None:
            raise MalformedMessage("deferred signature part is missing")
        if mode == MODE_STREAMING_STRICT:
            if keys.wrap_key is None:
                raise DecryptFailed("no wrap key available for strict message")
            signature_bytes = decrypt_signature_bytes(signature_bytes, keys.wrap_key)
        signature_node = xmlcore.parse(signature_bytes)
        declared, signed_info_node, signature_value, declared_key_id = _parse_signature_element(signature_node)

    assert declared is not None and signed_info_node is not None

    # Every payload part must be signed, every cid reference resolved.
    declared_cids = {
        ref.uri[4:] for ref in declared.references if ref.uri.startswith("cid:")
    }
    unsigned_parts = set(streamed) - declared_cids
    if unsigned_parts:
        raise MalformedMessage(f"parts not covered by the signature: {sorted(unsigned_parts)}")
    missing_parts = declared_cids - set(streamed)
    if missing_parts:
        raise UnresolvedReference(f"no parts for references: {sorted(missing_parts)}")
    unresolved_carriers = set(carriers) - set(streamed)
    if unresolved_carriers:
        raise UnresolvedReference(f"no parts for carriers: {sorted(unresolved_carriers)}")

    checks: list[ReferenceCheck] = []
    for ref in declared.references:
        if ref.uri == c.ENVELOPE_REFERENCE_URI:
            if ref.digest_algorithm != env_alg:
                raise UnsupportedAlgorithm(
                    "envelope digest algorithm differs from the pre-agreed one"
                )
            computed = envelope_digest
        elif ref.uri.startswith("cid:"):
            cid = ref.uri[4:]
            if mode != MODE_BLOCKING and ref.digest_algorithm != digest_algorithm:
                raise UnsupportedAlgorithm(
                    "part digest algorithm differs from the pre-agreed one"
                )
            computed = streamed[cid]
        elif ref.uri.startswith("#"):
            computed = _digest_fragment(bare_root, ref.uri[1:], ref.digest_algorithm)
        else:  # unreachable: Reference validates its URI scheme
            raise MalformedMessage(f"unsupported reference URI {ref.uri}")
        checks.append(
            ReferenceCheck(
                uri=ref.uri,
                computed_digest=computed,
                declared_digest=ref.digest_value,
                match=computed == ref.digest_value,
            )
        )

    key_ok = declared_key_id == keys.key_id
    signature_ok = keys.verify_bytes(xmlcore.canonicalize(signed_info_node), signature_value)
    all_match = all(check.match for check in checks)
    valid = signature_ok and key_ok and all_match

    detail = ""
    if not signature_ok:
        detail = "signature value does not verify"
    elif not key_ok:
        detail = "key id mismatch"
    elif not all_match:
        detail = f"digest mismatch: {[check.uri for check in checks if not check.match]}"

    return VerificationReport(
        signature_valid=valid,
        mode_detected=mode,
        per_reference=checks,
        key_id_matched=key_ok,
        detail=detail,
    )


def _has_ref(manifest: SignatureManifest, uri: str) -> bool:
    return any(ref.uri == uri for ref in manifest.references)


def _digest_fragment(root: XmlNode, fragment: str, algorithm: str) -> bytes:
    """Digest an element identified by an id attribute (general #fragment)."""
    hits = [
        node
        for _path, node in xmlcore.iter_elements(root)
        if node.attribute("id") == fragment
    ]
    if len(hits) != 1:
        raise UnresolvedReference(f"fragment #{fragment} matches {len(hits)} elements")
    return digest_bytes(xmlcore.canonicalize(hits[0]), algorithm)
