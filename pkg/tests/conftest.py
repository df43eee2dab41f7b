from __future__ import annotations

import random
import string

import pytest

from streamsign import wssec
from streamsign.xmlcore import XmlName, XmlNode, element


@pytest.fixture(scope="session")
def keys() -> wssec.KeyMaterial:
    return wssec.generate()


@pytest.fixture(scope="session")
def other_keys() -> wssec.KeyMaterial:
    return wssec.generate()


_NAME_START = string.ascii_letters + "_"
_NAME_REST = string.ascii_letters + string.digits + "_-."
_TEXT_CHARS = string.ascii_letters + string.digits + " &<>\"'\t\n\ré☃"


def random_ncname(rng: random.Random, max_len: int = 8) -> str:
    length = rng.randint(1, max_len)
    return rng.choice(_NAME_START) + "".join(
        rng.choice(_NAME_REST) for _ in range(length - 1)
    )


def random_text(rng: random.Random, max_len: int = 24) -> str:
    return "".join(rng.choice(_TEXT_CHARS) for _ in range(rng.randint(1, max_len)))


def random_name(rng: random.Random, namespaces: list[tuple[str, str]]) -> XmlName:
    prefix, uri = rng.choice(namespaces)
    return XmlName(local=random_ncname(rng), namespace_uri=uri, prefix=prefix)


def random_tree(rng: random.Random, depth: int = 3, fanout: int = 3) -> XmlNode:
    """Small random element tree with namespaces, attributes and text."""
    namespaces = [
        ("", ""),
        ("a", "urn:test:a"),
        ("b", "urn:test:b"),
        ("", "urn:test:default"),
    ]

    def build(level: int) -> XmlNode:
        attrs = []
        seen = set()
        for _ in range(rng.randint(0, 3)):
            name = random_name(rng, namespaces)
            if name.namespace_uri and not name.prefix:
                # Unprefixed attributes live in no namespace.
                name = XmlName(local=name.local)
            key = (name.namespace_uri, name.local)
            if key in seen:
                continue
            seen.add(key)
            attrs.append((name, random_text(rng, 12)))
        children: list = []
        for _ in range(rng.randint(0, fanout)):
            if level > 0 and rng.random() < 0.5:
                children.append(build(level - 1))
            else:
                children.append(random_text(rng))
        return element(random_name(rng, namespaces), attrs, children)

    return build(depth)


def random_chunks(rng: random.Random, data: bytes) -> list[bytes]:
    """Split data at random positions (possibly empty chunks included)."""
    chunks = []
    i = 0
    while i < len(data):
        step = rng.randint(1, max(1, min(len(data) - i, 64 * 1024)))
        chunks.append(data[i : i + step])
        i += step
    if rng.random() < 0.3:
        chunks.insert(rng.randint(0, len(chunks)), b"")
    return chunks
