"""Signature engines and verifier for XOP-packaged messages."""

from . import constants
from .constants import (
    ALG_AES256_GCM,
    ALG_C14N_RESTRICTED,
    ALG_RSA_SHA256,
    ALG_SHA256,
    ALG_SHA384,
    ALG_SHA512,
    ENVELOPE_REFERENCE_URI,
)
from .keys import KeyMaterial, KeyMaterialError, generate, load, save
from .manifest import (
    MalformedMessage,
    MissingDigest,
    Reference,
    SignatureManifest,
    StreamingReferenceDigest,
    UnsupportedAlgorithm,
    WsSecError,
    build_signed_info,
    carrier_tag_pair,
    digest_reference_streaming,
    parse_signed_info,
)
from .signing import (
    MODE_BLOCKING,
    MODE_STREAMING_LAX,
    MODE_STREAMING_STRICT,
    DecryptFailed,
    SignedMessage,
    build_lax_placeholder,
    build_signature_element,
    build_strict_placeholder,
    decrypt_signature_bytes,
    encrypt_signature,
    encrypt_signature_bytes,
    ensure_security_header,
    sign_blocking,
    sign_streaming,
)
from .verification import (
    MODE_UNSIGNED,
    ReferenceCheck,
    UnresolvedReference,
    VerificationReport,
    verify,
)

__all__ = [
    "ALG_AES256_GCM",
    "ALG_C14N_RESTRICTED",
    "ALG_RSA_SHA256",
    "ALG_SHA256",
    "ALG_SHA384",
    "ALG_SHA512",
    "DecryptFailed",
    "ENVELOPE_REFERENCE_URI",
    "KeyMaterial",
    "KeyMaterialError",
    "MODE_BLOCKING",
    "MODE_STREAMING_LAX",
    "MODE_STREAMING_STRICT",
    "MODE_UNSIGNED",
    "MalformedMessage",
    "MissingDigest",
    "Reference",
    "ReferenceCheck",
    "SignatureManifest",
    "SignedMessage",
    "StreamingReferenceDigest",
    "UnresolvedReference",
    "UnsupportedAlgorithm",
    "VerificationReport",
    "WsSecError",
    "build_lax_placeholder",
    "build_signature_element",
    "build_signed_info",
    "build_strict_placeholder",
    "carrier_tag_pair",
    "constants",
    "decrypt_signature_bytes",
    "digest_reference_streaming",
    "encrypt_signature",
    "encrypt_signature_bytes",
    "ensure_security_header",
    "generate",
    "load",
    "parse_signed_info",
    "save",
    "sign_blocking",
    "sign_streaming",
    "verify",
]
