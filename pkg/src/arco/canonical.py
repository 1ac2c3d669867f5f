"""Canonical text serialization shared by the wire protocol, state hashing,
and on-disk files.

Every serialized artifact in this project (envelopes, scene files, session
logs, geometry exports) goes through one formatter so that equal values
produce byte-identical text on every platform and in every implementation
of the protocol, including the browser client.

Rules (normative, proto_version 1):
  * JSON objects are written with keys sorted by Unicode code point, with
    ``,`` / ``:`` separators and no whitespace.
  * Strings escape only ``\\``, ``"`` and control characters below 0x20
    (as ``\\u00xx``, lowercase hex). Everything else is literal UTF-8.
  * Floats are formatted with ``%.9g`` (9 significant digits, trailing
    zeros stripped, C-style exponent with at least two digits). Negative
    zero is written as ``0``. Non-finite values are rejected.
  * Integers are written in plain decimal.

A float that has passed through the wire therefore carries at most nine
significant decimal digits; re-parsing and re-formatting such a value is
exact, which is what makes state hashes comparable across peers.
"""

from __future__ import annotations

import hashlib
import math
from typing import Union

__all__ = [
    "CFloat",
    "fmt_float",
    "canon_float",
    "dumps",
    "sha256_hex",
    "tree_hash",
]


class CFloat:
    """Marks a number that must be serialized with float formatting.

    The canonical writer cannot infer float-ness from the value (1.0 and 1
    must both serialize as ``1`` for a float field), so typed converters
    wrap float fields explicitly.
    """

    __slots__ = ("value",)

    def __init__(self, value: float):
        self.value = float(value)

    def __float__(self) -> float:
        return self.value

    def __repr__(self) -> str:  # pragma: no cover
        return f"CFloat({self.value!r})"


Tree = Union[None, bool, int, str, CFloat, list, dict]


def fmt_float(x: float) -> str:
    """Format a float canonically (9 significant digits, %g notation)."""
    if not math.isfinite(x):
        raise ValueError(f"non-finite float in canonical serialization: {x!r}")
    if x == 0.0:
        return "0"
    return format(x, ".9g")


def canon_float(x: float) -> float:
    """Quantize a float to its canonical (9 significant digit) value."""
    return float(fmt_float(float(x)))


_ESCAPES = {ord('"'): '\\"', ord("\\"): "\\\\"}


def _escape(s: str) -> str:
    out = []
    for ch in s:
        cp = ord(ch)
        if cp in _ESCAPES:
            out.append(_ESCAPES[cp])
        elif cp < 0x20:
            out.append(f"\\u{cp:04x}")
        else:
            out.append(ch)
    return "".join(out)


def _write(node: Tree, out: list) -> None:
    if node is None:
        out.append("null")
    elif node is True:
        out.append("true")
    elif node is False:
        out.append("false")
    elif isinstance(node, CFloat):
        out.append(fmt_float(node.value))
    elif isinstance(node, int):
        out.append(str(node))
    elif isinstance(node, float):
        # Bare floats are almost always a converter bug (missing CFloat);
        # refuse rather than silently guess int-vs-float formatting.
        raise TypeError("bare float in canonical tree; wrap float fields in CFloat")
    elif isinstance(node, str):
        out.append('"')
        out.append(_escape(node))
        out.append('"')
    elif isinstance(node, (list, tuple)):
        out.append("[")
        for i, item in enumerate(node):
            if i:
                out.append(",")
            _write(item, out)
        out.append("]")
    elif isinstance(node, dict):
        out.append("{")
        for i, key in enumerate(sorted(node)):
            if not isinstance(key, str):
                raise TypeError(f"non-string key in canonical tree: {key!r}")
            if i:
                out.append(",")
            out.append('"')
            out.append(_escape(key))
            out.append('":')
            _write(node[key], out)
        out.append("}")
    else:
        raise TypeError(f"unserializable node in canonical tree: {type(node).__name__}")


def dumps(tree: Tree) -> str:
    """Serialize a canonical tree to its unique text form."""
    out: list = []
    _write(tree, out)
    return "".join(out)


def wrap_floats(node):
    """Wrap every bare float in a tree as CFloat (ints stay ints).

    Used when ingesting parsed JSON (json.loads maps '1' to int and
    '1.5' to float, both of which re-serialize to their original text)
    and for hand-built trees that mix wrapped and bare numbers.
    """
    if isinstance(node, float):
        return CFloat(node)
    if isinstance(node, list):
        return [wrap_floats(x) for x in node]
    if isinstance(node, dict):
        return {k: wrap_floats(v) for k, v in node.items()}
    return node


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def tree_hash(tree: Tree) -> str:
    """256-bit digest of a canonical tree, as lowercase hex."""
    return sha256_hex(dumps(tree))
