"""Signature manifest: references, streamed digests, SignedInfo trees."""

from __future__ import annotations

import base64
from dataclasses import dataclass, field, replace
from typing import Iterable

from ..errors import SourceError, StreamSignError
from ..xmlcore import XmlNode, element
from ..xop import Base64Encoder
from . import constants as c


class WsSecError(StreamSignError):
    """Base class for signing and verification errors."""


class MissingDigest(WsSecError):
    pass


class UnsupportedAlgorithm(WsSecError):
    pass


class MalformedMessage(WsSecError):
    pass


TARGET_ENVELOPE_ELEMENT = "envelope_element"
TARGET_XOP_PART = "xop_part"


@dataclass
class Reference:
    """One signed item: a cid: part or a #fragment envelope element."""

    uri: str
    digest_algorithm: str = c.ALG_SHA256
    digest_value: bytes = b""
    target_kind: str = TARGET_ENVELOPE_ELEMENT

    def __post_init__(self) -> None:
        if not (self.uri.startswith("cid:") or self.uri.startswith("#")):
            raise WsSecError(f"reference URI must be cid: or #fragment, got {self.uri!r}")
        if self.digest_algorithm not in c.DIGEST_ALGORITHMS:
            raise UnsupportedAlgorithm(self.digest_algorithm)
        if self.digest_value and len(self.digest_value) != c.DIGEST_SIZES[self.digest_algorithm]:
            raise WsSecError(
                f"digest for {self.uri} has length {len(self.digest_value)}, "
                f"expected {c.DIGEST_SIZES[self.digest_algorithm]}"
            )


@dataclass
class SignatureManifest:
    """The content of ds:SignedInfo."""

    references: list[Reference]
    canonicalization_algorithm: str = c.ALG_C14N_RESTRICTED
    signature_algorithm: str = c.ALG_RSA_SHA256

    def __post_init__(self) -> None:
        if not self.references:
            raise WsSecError("manifest needs at least one reference")
        uris = [r.uri for r in self.references]
        if len(uris) != len(set(uris)):
            raise WsSecError("reference URIs must be unique")

    def reference(self, uri: str) -> Reference:
        for ref in self.references:
            if ref.uri == uri:
                return ref
        raise WsSecError(f"no reference with URI {uri}")


def digest_bytes(data: bytes, algorithm: str = c.ALG_SHA256) -> bytes:
    try:
        hasher = c.DIGEST_ALGORITHMS[algorithm]
    except KeyError:
        raise UnsupportedAlgorithm(algorithm) from None
    return hasher(data).digest()


def strict_b64decode(text: str) -> bytes:
    """Decode base64 rejecting non-canonical forms.

    Plain b64decode ignores unused padding bits, so two different strings
    can decode to the same bytes; round-tripping closes that tamper channel
    for signed values carried as text.
    """
    try:
        value = base64.b64decode(text, validate=True)
    except Exception as exc:
        raise MalformedMessage(f"bad base64 value: {exc}") from exc
    if base64.b64encode(value).decode("ascii") != text:
        raise MalformedMessage("non-canonical base64 value")
    return value


def digest_reference_streaming(
    element_prefix: bytes,
    binary: Iterable[bytes],
    element_suffix: bytes,
    algorithm: str = c.ALG_SHA256,
) -> bytes:
    """Digest of prefix || base64(binary) || suffix in one streaming pass.

    Reads the binary exactly once and keeps only the base64 carry between
    chunks, so the result is independent of input chunking and memory stays
    bounded by the chunk size.
    """
    try:
        hasher = c.DIGEST_ALGORITHMS[algorithm]()
    except KeyError:
        raise UnsupportedAlgorithm(algorithm) from None
    hasher.update(element_prefix)
    encoder = Base64Encoder()
    try:
        for chunk in binary:
            hasher.update(encoder.feed(chunk))
    except (StreamSignError, OSError):
        raise
    except Exception as exc:  # noqa: BLE001 - sources are caller code
        raise SourceError(f"binary source failed: {exc}") from exc
    hasher.update(encoder.flush())
    hasher.update(element_suffix)
    return hasher.digest()


class StreamingReferenceDigest:
    """Stateful variant used when digesting interleaves with transmission."""

    def __init__(self, element_prefix: bytes, element_suffix: bytes, algorithm: str) -> None:
        try:
            self._hasher = c.DIGEST_ALGORITHMS[algorithm]()
        except KeyError:
            raise UnsupportedAlgorithm(algorithm) from None
        self._suffix = element_suffix
        self._encoder = Base64Encoder()
        self._hasher.update(element_prefix)

    def update(self, chunk: bytes) -> None:
        self._hasher.update(self._encoder.feed(chunk))

    def finish(self) -> bytes:
        self._hasher.update(self._encoder.flush())
        self._hasher.update(self._suffix)
        return self._hasher.digest()


def build_signed_info(manifest: SignatureManifest) -> XmlNode:
    """ds:SignedInfo tree with one ds:Reference per manifest entry, in order."""
    children: list[XmlNode] = [
        element(c.DS_C14N_METHOD, [(c.ATTR_ALGORITHM, manifest.canonicalization_algorithm)]),
        element(c.DS_SIGNATURE_METHOD, [(c.ATTR_ALGORITHM, manifest.signature_algorithm)]),
    ]
    for ref in manifest.references:
        if not ref.digest_value:
            raise MissingDigest(f"reference {ref.uri} has no digest value")
        children.append(
            element(
                c.DS_REFERENCE,
                [(c.ATTR_URI, ref.uri)],
                [
                    element(c.DS_DIGEST_METHOD, [(c.ATTR_ALGORITHM, ref.digest_algorithm)]),
                    element(
                        c.DS_DIGEST_VALUE,
                        children=[base64.b64encode(ref.digest_value).decode("ascii")],
                    ),
                ],
            )
        )
    return element(c.DS_SIGNED_INFO, children=children)


def parse_signed_info(node: XmlNode) -> SignatureManifest:
    """Inverse of build_signed_info, validating structure and algorithms."""
    if node.name.namespace_uri != c.NS_DS or node.name.local != "SignedInfo":
        raise MalformedMessage(f"expected ds:SignedInfo, got {node.name.qname}")
    kids = node.element_children()
    if len(kids) < 3:
        raise MalformedMessage("SignedInfo lacks methods or references")
    c14n, sig_method = kids[0], kids[1]
    if c14n.name.local != "CanonicalizationMethod" or sig_method.name.local != "SignatureMethod":
        raise MalformedMessage("SignedInfo method elements out of order")
    c14n_alg = c14n.attribute("Algorithm") or ""
    sig_alg = sig_method.attribute("Algorithm") or ""
    if c14n_alg != c.ALG_C14N_RESTRICTED:
        raise UnsupportedAlgorithm(f"canonicalization {c14n_alg!r}")
    if sig_alg != c.ALG_RSA_SHA256:
        raise UnsupportedAlgorithm(f"signature algorithm {sig_alg!r}")

    references = []
    for ref_node in kids[2:]:
        if ref_node.name.local != "Reference" or ref_node.name.namespace_uri != c.NS_DS:
            raise MalformedMessage(f"unexpected SignedInfo child {ref_node.name.qname}")
        uri = ref_node.attribute("URI")
        if uri is None:
            raise MalformedMessage("ds:Reference lacks URI")
        ref_kids = ref_node.element_children()
        if len(ref_kids) != 2 or ref_kids[0].name.local != "DigestMethod" or ref_kids[1].name.local != "DigestValue":
            raise MalformedMessage(f"ds:Reference {uri} malformed")
        algorithm = ref_kids[0].attribute("Algorithm") or ""
        if algorithm not in c.DIGEST_ALGORITHMS:
            raise UnsupportedAlgorithm(f"digest algorithm {algorithm!r}")
        digest = strict_b64decode(ref_kids[1].text())
        if len(digest) != c.DIGEST_SIZES[algorithm]:
            raise MalformedMessage(f"DigestValue length wrong for {uri}")
        kind = TARGET_XOP_PART if uri.startswith("cid:") else TARGET_ENVELOPE_ELEMENT
        try:
            references.append(
                Reference(uri=uri, digest_algorithm=algorithm, digest_value=digest, target_kind=kind)
            )
        except WsSecError as exc:
            raise MalformedMessage(str(exc)) from exc

    try:
        return SignatureManifest(references=references)
    except WsSecError as exc:
        raise MalformedMessage(str(exc)) from exc


def carrier_tag_pair(carrier: XmlNode) -> tuple[bytes, bytes]:
    """Canonical start/end tag bytes of a carrier element without content.

    These frame the streamed base64 so that the streaming digest equals the
    one-shot digest of the reconstituted element.
    """
    from .. import xmlcore

    empty = xmlcore.canonicalize(replace(carrier, children=()))
    end_tag = f"</{carrier.name.qname}>".encode("utf-8")
    return empty[: len(empty) - len(end_tag)], end_tag
