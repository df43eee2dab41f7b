"""Key material: RSA signing/verification keys plus the symmetric wrap key."""

from __future__ import annotations

import base64
import hashlib
import os
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa

from ..errors import StreamSignError

SIGNING_KEY_FILE = "signing_key.pem"
VERIFICATION_KEY_FILE = "verification_key.pem"
WRAP_KEY_FILE = "wrap_key.b64"

WRAP_KEY_BYTES = 32


class KeyMaterialError(StreamSignError):
    """Missing, mismatched or unusable key material."""


@dataclass
class KeyMaterial:
    """Keys for one signing relationship.

    `signing_key` may be None on the verifying side; `wrap_key` is only
    needed for the strict (encrypted-signature) mode and is pre-shared out
    of band.
    """

    verification_key: rsa.RSAPublicKey
    signing_key: rsa.RSAPrivateKey | None = None
    wrap_key: bytes | None = None

    def __post_init__(self) -> None:
        if self.wrap_key is not None and len(self.wrap_key) != WRAP_KEY_BYTES:
            raise KeyMaterialError(
                f"wrap key must be {WRAP_KEY_BYTES} bytes, got {len(self.wrap_key)}"
            )
        if self.signing_key is not None:
            probe = b"streamsign key self-test"
            if not self.verify_bytes(probe, self.sign_bytes(probe)):
                raise KeyMaterialError("verification key does not match signing key")

    @property
    def key_id(self) -> str:
        der = self.verification_key.public_bytes(
            encoding=serialization.Encoding.DER,
            format=serialization.PublicFormat.SubjectPublicKeyInfo,
        )
        return hashlib.sha256(der).hexdigest()[:32]

    def sign_bytes(self, data: bytes) -> bytes:
        if self.signing_key is None:
            raise KeyMaterialError("no signing key loaded")
        return self.signing_key.sign(data, padding.PKCS1v15(), hashes.SHA256())

    def verify_bytes(self, data: bytes, signature: bytes) -> bool:
        try:
            self.verification_key.verify(
                signature, data, padding.PKCS1v15(), hashes.SHA256()
            )
            return True
        except InvalidSignature:
            return False


def generate(bits: int = 2048, with_wrap_key: bool = True) -> KeyMaterial:
    private = rsa.generate_private_key(public_exponent=65537, key_size=bits)
    return KeyMaterial(
        verification_key=private.public_key(),
        signing_key=private,
        wrap_key=os.urandom(WRAP_KEY_BYTES) if with_wrap_key else None,
    )


def load(
    private_key_path: str | None = None,
    public_key_path: str | None = None,
    wrap_key_path: str | None = None,
) -> KeyMaterial:
    """Load key material from PEM files plus an optional base64 wrap key."""
    signing_key = None
    verification_key = None
    if private_key_path:
        with open(private_key_path, "rb") as fh:
            loaded = serialization.load_pem_private_key(fh.read(), password=None)
        if not isinstance(loaded, rsa.RSAPrivateKey):
            raise KeyMaterialError(f"{private_key_path} is not an RSA private key")
        signing_key = loaded
        verification_key = loaded.public_key()
    if public_key_path:
        with open(public_key_path, "rb") as fh:
            loaded_pub = serialization.load_pem_public_key(fh.read())
        if not isinstance(loaded_pub, rsa.RSAPublicKey):
            raise KeyMaterialError(f"{public_key_path} is not an RSA public key")
        verification_key = loaded_pub
    if verification_key is None:
        raise KeyMaterialError("need a private or public key file")
    wrap_key = None
    if wrap_key_path:
        with open(wrap_key_path, "rb") as fh:
            try:
                wrap_key = base64.b64decode(fh.read().strip(), validate=True)
            except Exception as exc:
                raise KeyMaterialError(f"bad wrap key file: {exc}") from exc
    return KeyMaterial(
        verification_key=verification_key, signing_key=signing_key, wrap_key=wrap_key
    )


def save(keys: KeyMaterial, out_dir: str) -> list[str]:
    """Write PEM keypair plus wrap key into a directory; returns the paths."""
    if keys.signing_key is None:
        raise KeyMaterialError("cannot save key material without a private key")
    os.makedirs(out_dir, exist_ok=True)
    written = []

    private_pem = keys.signing_key.private_bytes(
        encoding=serialization.Encoding.PEM,
        format=serialization.PrivateFormat.PKCS8,
        encryption_algorithm=serialization.NoEncryption(),
    )
    path = os.path.join(out_dir, SIGNING_KEY_FILE)
    with open(path, "wb") as fh:
        fh.write(private_pem)
    written.append(path)

    public_pem = keys.verification_key.public_bytes(
        encoding=serialization.Encoding.PEM,
        format=serialization.PublicFormat.SubjectPublicKeyInfo,
    )
    path = os.path.join(out_dir, VERIFICATION_KEY_FILE)
    with open(path, "wb") as fh:
        fh.write(public_pem)
    written.append(path)

    if keys.wrap_key is not None:
        path = os.path.join(out_dir, WRAP_KEY_FILE)
        with open(path, "wb") as fh:
            fh.write(base64.b64encode(keys.wrap_key) + b"\n")
        written.append(path)
    return written
