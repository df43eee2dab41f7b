"""Minimal XML infoset model with deterministic parsing and serialization.

The canonical form implemented here is a documented restriction, sufficient
for envelopes this toolkit produces itself:

* UTF-8, no XML declaration, no comments;
* attributes sorted by (namespace URI, local name);
* namespace declarations emitted on the element where first used, sorted
  by prefix;
* empty elements serialized as a start/end tag pair;
* text escaped as ``&amp;``, ``&lt;``, ``&gt;``, ``&#xD;``.

It is not Exclusive C14N and does not try to interoperate with one.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from typing import Iterator, Union
from xml.parsers import expat

from .errors import StreamSignError

MAX_DEPTH = 1024


class XmlError(StreamSignError):
    """Base class for XML model errors."""


class MalformedXml(XmlError):
    """Input is not well-formed XML."""


class UnsupportedConstruct(XmlError):
    """Well-formed input using a construct this model rejects (DTD, PI, non-UTF-8)."""


def _is_ncname(value: str) -> bool:
    if not value:
        return False
    if value[0].isdigit() or value[0] in ".-":
        return False
    return not any(c.isspace() or c == ":" for c in value)


@dataclass(frozen=True)
class XmlName:
    """Expanded element or attribute name."""

    local: str
    namespace_uri: str = ""
    prefix: str = ""

    def __post_init__(self) -> None:
        if not _is_ncname(self.local):
            raise XmlError(f"invalid local name: {self.local!r}")
        if self.prefix and not _is_ncname(self.prefix):
            raise XmlError(f"invalid prefix: {self.prefix!r}")
        if self.prefix and not self.namespace_uri:
            raise XmlError(f"prefix {self.prefix!r} requires a namespace URI")

    @property
    def qname(self) -> str:
        return f"{self.prefix}:{self.local}" if self.prefix else self.local


Child = Union["XmlNode", str]


@dataclass(frozen=True)
class XmlNode:
    """Immutable element node: name, ordered attributes, ordered children.

    Children are element nodes or plain text strings; adjacent text children
    are merged and empty text dropped at construction, so structural
    equality matches serialization round trips.
    """

    name: XmlName
    attributes: tuple[tuple[XmlName, str], ...] = ()
    children: tuple[Child, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "attributes", tuple(self.attributes))
        object.__setattr__(self, "children", _normalize_children(self.children))
        seen = set()
        for name, _ in self.attributes:
            key = (name.namespace_uri, name.local)
            if key in seen:
                raise XmlError(f"duplicate attribute {key}")
            seen.add(key)

    def attribute(self, local: str, namespace_uri: str = "") -> str | None:
        for name, value in self.attributes:
            if name.local == local and name.namespace_uri == namespace_uri:
                return value
        return None

    def element_children(self) -> list["XmlNode"]:
        return [c for c in self.children if isinstance(c, XmlNode)]

    def text(self) -> str:
        return "".join(c for c in self.children if isinstance(c, str))


def _normalize_children(children) -> tuple[Child, ...]:
    out: list[Child] = []
    for child in children:
        if isinstance(child, str):
            if not child:
                continue
            if out and isinstance(out[-1], str):
                out[-1] = out[-1] + child
                continue
        out.append(child)
    return tuple(out)


def element(
    name: XmlName,
    attributes: tuple[tuple[XmlName, str], ...] | list = (),
    children: tuple[Child, ...] | list = (),
) -> XmlNode:
    return XmlNode(name=name, attributes=tuple(attributes), children=tuple(children))


# ---------------------------------------------------------------------------
# Tree navigation by index path
# ---------------------------------------------------------------------------

# A path addresses an element by indices among *element* children, starting
# at the root: () is the root itself, (0, 2) the third element child of the
# root's first element child.
ElementPath = tuple[int, ...]


def get_path(root: XmlNode, path: ElementPath) -> XmlNode:
    node = root
    for index in path:
        kids = node.element_children()
        if index >= len(kids):
            raise XmlError(f"path {path} does not exist")
        node = kids[index]
    return node


def replace_path(root: XmlNode, path: ElementPath, new_node: XmlNode) -> XmlNode:
    """Return a new tree with the element at `path` replaced."""
    if not path:
        return new_node
    index = path[0]
    count = -1
    children = list(root.children)
    for i, child in enumerate(children):
        if isinstance(child, XmlNode):
            count += 1
            if count == index:
                children[i] = replace_path(child, path[1:], new_node)
                return replace(root, children=tuple(children))
    raise XmlError(f"path component {index} does not exist")


def iter_elements(root: XmlNode) -> Iterator[tuple[ElementPath, XmlNode]]:
    """Depth-first traversal yielding (path, element) pairs."""
    stack: list[tuple[ElementPath, XmlNode]] = [((), root)]
    while stack:
        path, node = stack.pop()
        yield path, node
        kids = node.element_children()
        for i in range(len(kids) - 1, -1, -1):
            stack.append((path + (i,), kids[i]))


def find_elements(root: XmlNode, local: str, namespace_uri: str | None = None) -> list[tuple[ElementPath, XmlNode]]:
    hits = []
    for path, node in iter_elements(root):
        if node.name.local != local:
            continue
        if namespace_uri is not None and node.name.namespace_uri != namespace_uri:
            continue
        hits.append((path, node))
    return hits


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def parse(data: bytes) -> XmlNode:
    """Parse a UTF-8 XML document into an element tree.

    Comments are discarded.  DTDs, processing instructions and non-UTF-8
    encoding declarations raise UnsupportedConstruct.
    """
    if isinstance(data, str):
        data = data.encode("utf-8")

    parser = expat.ParserCreate(namespace_separator=" ")
    parser.namespace_prefixes = True
    parser.ordered_attributes = True
    parser.buffer_text = True

    root: list[XmlNode] = []
    # Stack frames: (name, attributes, children-in-progress)
    stack: list[tuple[XmlName, tuple, list[Child]]] = []

    def split_name(raw: str) -> XmlName:
        parts = raw.split(" ")
        if len(parts) == 1:
            return XmlName(local=parts[0])
        if len(parts) == 2:
            return XmlName(local=parts[1], namespace_uri=parts[0])
        return XmlName(local=parts[1], namespace_uri=parts[0], prefix=parts[2])

    def on_start(raw_name: str, raw_attrs: list) -> None:
        if len(stack) >= MAX_DEPTH:
            raise MalformedXml(f"element depth exceeds {MAX_DEPTH}")
        attrs = tuple(
            (split_name(raw_attrs[i]), raw_attrs[i + 1]) for i in range(0, len(raw_attrs), 2)
        )
        stack.append((split_name(raw_name), attrs, []))

    def on_end(_raw_name: str) -> None:
        name, attrs, children = stack.pop()
        node = XmlNode(name=name, attributes=attrs, children=tuple(children))
        if stack:
            stack[-1][2].append(node)
        else:
            root.append(node)

    def on_text(text: str) -> None:
        if stack:
            stack[-1][2].append(text)

    def on_decl(_version, encoding, _standalone) -> None:
        if encoding is not None and encoding.lower() not in ("utf-8", "utf8"):
            raise UnsupportedConstruct(f"unsupported encoding declaration: {encoding}")

    def reject(kind: str):
        def handler(*_args):
            raise UnsupportedConstruct(f"{kind} not allowed")

        return handler

    parser.StartElementHandler = on_start
    parser.EndElementHandler = on_end
    parser.CharacterDataHandler = on_text
    parser.CommentHandler = lambda _data: None
    parser.XmlDeclHandler = on_decl
    parser.ProcessingInstructionHandler = reject("processing instruction")
    parser.StartDoctypeDeclHandler = reject("DTD")
    parser.EntityDeclHandler = reject("entity declaration")

    try:
        parser.Parse(data, True)
    except expat.ExpatError as exc:
        raise MalformedXml(
            f"line {exc.lineno}, column {exc.offset}: {expat.errors.messages[exc.code]}"
        ) from exc
    except UnicodeDecodeError as exc:
        raise MalformedXml(f"input is not valid UTF-8: {exc}") from exc

    if not root:
        raise MalformedXml("no root element")
    return root[0]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _escape_text(value: str) -> str:
    return (
        value.replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace("\r", "&#xD;")
    )


def _escape_attr(value: str) -> str:
    return (
        value.replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace('"', "&quot;")
        .replace("\t", "&#x9;")
        .replace("\n", "&#xA;")
        .replace("\r", "&#xD;")
    )


@dataclass
class _Scope:
    """Chained prefix->URI bindings."""

    bindings: dict[str, str]
    parent: "_Scope | None" = None

    def lookup(self, prefix: str) -> str | None:
        scope: _Scope | None = self
        while scope is not None:
            if prefix in scope.bindings:
                return scope.bindings[prefix]
            scope = scope.parent
        return None


def _required_declarations(node: XmlNode, scope: _Scope) -> dict[str, str]:
    """Namespace declarations this element must emit, keyed by prefix."""
    needed: dict[str, str] = {}

    def need(prefix: str, uri: str) -> None:
        if prefix in needed:
            if needed[prefix] != uri:
                raise XmlError(
                    f"prefix {prefix!r} bound to both {needed[prefix]!r} and {uri!r} on one element"
                )
            return
        if scope.lookup(prefix) != uri:
            needed[prefix] = uri

    name = node.name
    if name.namespace_uri or name.prefix:
        need(name.prefix, name.namespace_uri)
    elif scope.lookup(""):
        # Element in no namespace under an active default namespace.
        needed[""] = ""
    for attr_name, _ in node.attributes:
        if attr_name.prefix:
            need(attr_name.prefix, attr_name.namespace_uri)
        elif attr_name.namespace_uri:
            raise XmlError(
                f"attribute {attr_name.local!r} has a namespace but no prefix"
            )
    return needed


def _write_tree(node: XmlNode, out: io.BytesIO, canonical: bool) -> None:
    # Explicit stack: either ("open", node, scope) or ("close", qname bytes).
    root_scope = _Scope(bindings={})
    work: list[tuple] = [("open", node, root_scope)]
    while work:
        action = work.pop()
        if action[0] == "close":
            out.write(action[1])
            continue
        if action[0] == "text":
            out.write(_escape_text(action[1]).encode("utf-8"))
            continue

        _, current, scope = action
        declarations = _required_declarations(current, scope)
        if declarations:
            scope = _Scope(bindings=declarations, parent=scope)

        qname = current.name.qname.encode("utf-8")
        out.write(b"<" + qname)
        for prefix in sorted(declarations):
            uri = _escape_attr(declarations[prefix]).encode("utf-8")
            if prefix:
                out.write(b" xmlns:" + prefix.encode("utf-8") + b'="' + uri + b'"')
            else:
                out.write(b' xmlns="' + uri + b'"')
        attrs = current.attributes
        if canonical:
            attrs = tuple(sorted(attrs, key=lambda a: (a[0].namespace_uri, a[0].local)))
        for attr_name, value in attrs:
            out.write(
                b" "
                + attr_name.qname.encode("utf-8")
                + b'="'
                + _escape_attr(value).encode("utf-8")
                + b'"'
            )
        out.write(b">")

        work.append(("close", b"</" + qname + b">"))
        for child in reversed(current.children):
            if isinstance(child, str):
                work.append(("text", child))
            else:
                work.append(("open", child, scope))


def canonicalize(node: XmlNode) -> bytes:
    """Deterministic byte form of an element tree (restricted canonical form)."""
    out = io.BytesIO()
    _write_tree(node, out, canonical=True)
    return out.getvalue()


def serialize(node: XmlNode) -> bytes:
    """Well-formed XML preserving attribute document order."""
    out = io.BytesIO()
    _write_tree(node, out, canonical=False)
    return out.getvalue()
