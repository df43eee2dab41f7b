"""Blocking and streaming signature engines.

Both modes produce the same manifest for the same inputs: one enveloped
reference (``#envelope``, the wire-form envelope without the signature
carrier) plus one ``cid:`` reference per binary, digested as
``prefix || base64(binary) || suffix`` of the carrier element.  The blocking
engine reconstitutes the full inline infoset before the first byte leaves;
the streaming engine digests payload parts while they are written and defers
the ``ds:Signature`` element to the last MIME part (encrypted in strict
mode, so the XOP placeholder sits inside ``xenc:CipherValue``).
"""

from __future__ import annotations

import base64
import os
import random
import time
from dataclasses import dataclass, replace
from typing import IO, Iterator, Mapping

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .. import mime, xmlcore, xop
from ..config import resolve_chunk_size
from ..xmlcore import ElementPath, XmlNode, element
from . import constants as c
from .keys import KeyMaterial, KeyMaterialError
from .manifest import (
    Reference,
    SignatureManifest,
    StreamingReferenceDigest,
    TARGET_ENVELOPE_ELEMENT,
    TARGET_XOP_PART,
    WsSecError,
    build_signed_info,
    carrier_tag_pair,
    digest_bytes,
)

MODE_BLOCKING = "blocking"
MODE_STREAMING_LAX = "streaming_lax"
MODE_STREAMING_STRICT = "streaming_strict"

GCM_NONCE_BYTES = 12

SIGNATURE_PART_TYPE_LAX = "application/xml; charset=UTF-8"
SIGNATURE_PART_TYPE_STRICT = "application/octet-stream"


class DecryptFailed(WsSecError):
    pass


@dataclass
class SignedMessage:
    """Result of a signing session (part bodies are consumed by then)."""

    mode: str
    package: xop.XopPackage
    manifest: SignatureManifest
    timings: dict[str, float]


# ---------------------------------------------------------------------------
# Envelope scaffolding
# ---------------------------------------------------------------------------


def find_security(root: XmlNode) -> tuple[ElementPath, XmlNode] | None:
    hits = xmlcore.find_elements(root, "Security", c.NS_WSSE)
    if not hits:
        return None
    if len(hits) > 1:
        raise WsSecError("envelope carries more than one security header")
    return hits[0]


def ensure_security_header(envelope: XmlNode) -> tuple[XmlNode, ElementPath]:
    """Guarantee a Header/Security scaffold, appending so that existing
    element-index paths into the envelope stay valid."""
    existing = find_security(envelope)
    if existing is not None:
        return envelope, existing[0]

    header_hits = [
        (i, kid)
        for i, kid in enumerate(envelope.element_children())
        if kid.name.namespace_uri == c.NS_SOAP and kid.name.local == "Header"
    ]
    if header_hits:
        h_idx, header = header_hits[0]
    else:
        header = element(c.SOAP_HEADER)
        envelope = replace(envelope, children=envelope.children + (header,))
        h_idx = len(envelope.element_children()) - 1
    security = element(c.WSSE_SECURITY)
    new_header = replace(header, children=header.children + (security,))
    envelope = xmlcore.replace_path(envelope, (h_idx,), new_header)
    s_idx = len(new_header.element_children()) - 1
    return envelope, (h_idx, s_idx)


def _append_child(root: XmlNode, path: ElementPath, child: XmlNode) -> XmlNode:
    node = xmlcore.get_path(root, path)
    return xmlcore.replace_path(root, path, replace(node, children=node.children + (child,)))


# ---------------------------------------------------------------------------
# Signature element and strict-mode encryption
# ---------------------------------------------------------------------------


def build_signature_element(
    manifest: SignatureManifest, keys: KeyMaterial
) -> tuple[XmlNode, bytes]:
    """Sign the manifest; returns the ds:Signature tree and its canonical bytes."""
    signed_info = build_signed_info(manifest)
    signature_value = keys.sign_bytes(xmlcore.canonicalize(signed_info))
    signature = element(
        c.DS_SIGNATURE,
        children=[
            signed_info,
            element(
                c.DS_SIGNATURE_VALUE,
                children=[base64.b64encode(signature_value).decode("ascii")],
            ),
            element(c.DS_KEY_INFO, children=[element(c.DS_KEY_NAME, children=[keys.key_id])]),
        ],
    )
    return signature, xmlcore.canonicalize(signature)


def build_lax_placeholder(signature_cid: str) -> XmlNode:
    """ds:Signature whose content is one xop:Include (lax streaming mode)."""
    return element(c.DS_SIGNATURE, children=[xop.make_include(signature_cid)])


def build_strict_placeholder(signature_cid: str) -> XmlNode:
    """xenc:EncryptedData whose CipherValue content is the xop:Include slot."""
    return element(
        c.XENC_ENCRYPTED_DATA,
        children=[
            element(c.XENC_ENCRYPTION_METHOD, [(c.ATTR_ALGORITHM, c.ALG_AES256_GCM)]),
            element(
                c.XENC_CIPHER_DATA,
                children=[
                    element(c.XENC_CIPHER_VALUE, children=[xop.make_include(signature_cid)])
                ],
            ),
        ],
    )


def encrypt_signature_bytes(canonical_signature: bytes, wrap_key: bytes) -> bytes:
    nonce = os.urandom(GCM_NONCE_BYTES)
    return nonce + AESGCM(wrap_key).encrypt(nonce, canonical_signature, None)


def decrypt_signature_bytes(ciphertext: bytes, wrap_key: bytes) -> bytes:
    if len(ciphertext) <= GCM_NONCE_BYTES:
        raise DecryptFailed("ciphertext shorter than its nonce")
    nonce, body = ciphertext[:GCM_NONCE_BYTES], ciphertext[GCM_NONCE_BYTES:]
    try:
        return AESGCM(wrap_key).decrypt(nonce, body, None)
    except InvalidTag as exc:
        raise DecryptFailed("authenticated decryption failed") from exc


def encrypt_signature(
    signature: XmlNode,
    wrap_key: bytes | None,
    signature_cid: str | None = None,
    rng: random.Random | None = None,
) -> tuple[XmlNode, bytes]:
    """Encrypt a complete ds:Signature element for the strict mode.

    Returns the header placeholder (an xenc:EncryptedData tree whose
    CipherValue holds the xop:Include slot) and the ciphertext destined for
    the final MIME part.
    """
    if wrap_key is None:
        raise KeyMaterialError("strict mode needs a symmetric wrap key")
    if signature_cid is None:
        signature_cid = xop.new_content_id(rng)
    ciphertext = encrypt_signature_bytes(xmlcore.canonicalize(signature), wrap_key)
    return build_strict_placeholder(signature_cid), ciphertext


# ---------------------------------------------------------------------------
# Shared preparation
# ---------------------------------------------------------------------------


@dataclass
class _Prepared:
    package: xop.XopPackage
    security_path: ElementPath
    paths: list[ElementPath]
    content_ids: dict[ElementPath, str]
    manifest: SignatureManifest
    tag_pairs: dict[str, tuple[bytes, bytes]]


def _prepare(
    envelope: XmlNode,
    binaries: Mapping[ElementPath, xop.BinaryContent],
    digest_algorithm: str,
    boundary: str | None,
    root_content_id: str | None,
    rng: random.Random | None,
    chunk_size: int | None,
) -> _Prepared:
    scaffolded, security_path = ensure_security_header(envelope)
    paths = list(binaries.keys())
    content_ids = {path: xop.new_content_id(rng) for path in paths}
    package = xop.extract(
        scaffolded,
        binaries,
        boundary=boundary if boundary is not None else mime.generate_boundary(rng),
        content_ids=content_ids,
        rng=rng,
        chunk_size=chunk_size,
    )
    if root_content_id is not None:
        package.root_content_id = root_content_id

    envelope_digest = digest_bytes(xmlcore.canonicalize(package.root), digest_algorithm)
    references = [
        Reference(
            uri=c.ENVELOPE_REFERENCE_URI,
            digest_algorithm=digest_algorithm,
            digest_value=envelope_digest,
            target_kind=TARGET_ENVELOPE_ELEMENT,
        )
    ]
    tag_pairs: dict[str, tuple[bytes, bytes]] = {}
    for path in paths:
        cid = content_ids[path]
        carrier = xmlcore.get_path(package.root, path)
        prefix, suffix = carrier_tag_pair(carrier)
        tag_pairs[cid] = (prefix, suffix)
        references.append(
            Reference(
                uri=f"cid:{cid}",
                digest_algorithm=digest_algorithm,
                target_kind=TARGET_XOP_PART,
            )
        )
    manifest = SignatureManifest(references=references)
    return _Prepared(
        package=package,
        security_path=security_path,
        paths=paths,
        content_ids=content_ids,
        manifest=manifest,
        tag_pairs=tag_pairs,
    )


# ---------------------------------------------------------------------------
# Blocking engine
# ---------------------------------------------------------------------------


def sign_blocking(
    envelope: XmlNode,
    binaries: Mapping[ElementPath, xop.BinaryContent],
    keys: KeyMaterial,
    sink: IO[bytes],
    digest_algorithm: str = c.ALG_SHA256,
    boundary: str | None = None,
    root_content_id: str | None = None,
    rng: random.Random | None = None,
    chunk_size: int | None = None,
    with_header: bool = False,
) -> SignedMessage:
    """Reference blocking path: nothing is written until the signature is done.

    Reconstitutes the full inline infoset in memory, digests the referenced
    elements, signs, inserts the complete ds:Signature into the security
    header, and only then extracts and streams the package.  Binaries must
    be re-readable.
    """
    started = time.perf_counter()
    prepared = _prepare(
        envelope, binaries, digest_algorithm, boundary, root_content_id, rng, chunk_size
    )

    # First pass over the sources: the in-memory inline infoset.
    inline_root = xop.reconstitute(prepared.package)
    for path in prepared.paths:
        cid = prepared.content_ids[path]
        carrier = xmlcore.get_path(inline_root, path)
        digest = digest_bytes(xmlcore.canonicalize(carrier), digest_algorithm)
        prepared.manifest.reference(f"cid:{cid}").digest_value = digest
    del inline_root

    signature, _canonical = build_signature_element(prepared.manifest, keys)
    root_final = _append_child(prepared.package.root, prepared.security_path, signature)
    prepared_elapsed = time.perf_counter() - started

    # Second pass: fresh part bodies for the wire.
    wire = xop.XopPackage(
        root=root_final,
        parts=[
            mime.MimePart(
                headers=mime.MimeHeaders(
                    content_id=prepared.content_ids[path],
                    content_type=binaries[path].media_type,
                    content_transfer_encoding="binary",
                ),
                body=binaries[path].source(),
            )
            for path in prepared.paths
        ],
        boundary=prepared.package.boundary,
        root_content_id=prepared.package.root_content_id,
    )
    xop.write_package(wire, sink, chunk_size=chunk_size, with_header=with_header)

    return SignedMessage(
        mode=MODE_BLOCKING,
        package=wire,
        manifest=prepared.manifest,
        timings={
            "prepare_s": prepared_elapsed,
            "total_s": time.perf_counter() - started,
        },
    )


# ---------------------------------------------------------------------------
# Streaming engine
# ---------------------------------------------------------------------------


def sign_streaming(
    envelope: XmlNode,
    binaries: Mapping[ElementPath, xop.BinaryContent],
    keys: KeyMaterial,
    sink: IO[bytes],
    strict: bool = True,
    digest_algorithm: str = c.ALG_SHA256,
    boundary: str | None = None,
    root_content_id: str | None = None,
    rng: random.Random | None = None,
    chunk_size: int | None = None,
    with_header: bool = False,
) -> SignedMessage:
    """Non-blocking path: header first, digests while streaming, signature last.

    The security header carries a placeholder referencing a content id
    reserved for the final part (an xop:Include inside ds:Signature in lax
    mode, inside xenc:CipherValue in strict mode).  Payload digests are
    computed on the same pass that writes the parts; the ds:Signature is
    built, signed and emitted - encrypted in strict mode - as the last MIME
    part.  Memory stays bounded by the chunk size.
    """
    chunk = resolve_chunk_size(chunk_size)
    started = time.perf_counter()
    prepared = _prepare(
        envelope, binaries, digest_algorithm, boundary, root_content_id, rng, chunk
    )
    if strict and keys.wrap_key is None:
        raise KeyMaterialError("strict mode needs a symmetric wrap key")

    signature_cid = xop.new_content_id(rng)
    if strict:
        placeholder = build_strict_placeholder(signature_cid)
    else:
        placeholder = build_lax_placeholder(signature_cid)
    root_wire = _append_child(prepared.package.root, prepared.security_path, placeholder)
    prepared_elapsed = time.perf_counter() - started

    timings: dict[str, float] = {"prepare_s": prepared_elapsed}

    def tee(body: Iterator[bytes], digester: StreamingReferenceDigest) -> Iterator[bytes]:
        for piece in body:
            digester.update(piece)
            yield piece

    def parts() -> Iterator[mime.MimePart]:
        yield mime.MimePart(
            headers=mime.MimeHeaders(
                content_id=prepared.package.root_content_id,
                content_type=xop.ROOT_PART_CONTENT_TYPE,
                content_transfer_encoding="8bit",
            ),
            body=iter([xmlcore.serialize(root_wire)]),
        )
        for path, part in zip(prepared.paths, prepared.package.parts):
            cid = prepared.content_ids[path]
            prefix, suffix = prepared.tag_pairs[cid]
            digester = StreamingReferenceDigest(prefix, suffix, digest_algorithm)
            yield mime.MimePart(headers=part.headers, body=tee(part.body, digester))
            # Runs once the writer finished the part body.
            prepared.manifest.reference(f"cid:{cid}").digest_value = digester.finish()

        signature, canonical = build_signature_element(prepared.manifest, keys)
        if strict:
            payload = encrypt_signature_bytes(canonical, keys.wrap_key)
            content_type = SIGNATURE_PART_TYPE_STRICT
        else:
            payload = canonical
            content_type = SIGNATURE_PART_TYPE_LAX
        timings["signature_ready_s"] = time.perf_counter() - started
        yield mime.MimePart(
            headers=mime.MimeHeaders(
                content_id=signature_cid,
                content_type=content_type,
                content_transfer_encoding="binary",
            ),
            body=iter([payload]),
        )

    if with_header:
        mime.write_package_header(
            sink,
            mime.format_package_content_type(
                prepared.package.boundary, prepared.package.root_content_id
            ),
        )
    mime.write_package(sink, prepared.package.boundary, parts(), chunk_size=chunk)
    timings["total_s"] = time.perf_counter() - started

    final_package = xop.XopPackage(
        root=root_wire,
        parts=prepared.package.parts,
        boundary=prepared.package.boundary,
        root_content_id=prepared.package.root_content_id,
    )
    return SignedMessage(
        mode=MODE_STREAMING_STRICT if strict else MODE_STREAMING_LAX,
        package=final_package,
        manifest=prepared.manifest,
        timings=timings,
    )
