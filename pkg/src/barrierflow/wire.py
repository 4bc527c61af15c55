"""Canonical binary encoding for operator state and snapshot files.

Everything that crosses a snapshot boundary (operator states, records,
manifests) is encoded with this codec. Two properties matter and rule out
json/pickle:

* bit-exact round-trips for the closed value universe we use (None, bool,
  int, float, str, bytes, list, tuple, dict), including tuple-vs-list
  identity and non-string dict keys;
* canonical bytes: semantically equal values encode identically regardless
  of dict insertion order, so snapshot comparison and digests are stable.

Format: one tag byte per value, big-endian length prefixes, dict entries
sorted by encoded key bytes. A single version byte heads every framed blob.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Any

WIRE_VERSION = 1

_T_NONE = b"N"
_T_TRUE = b"T"
_T_FALSE = b"F"
_T_INT = b"i"
_T_FLOAT = b"f"
_T_STR = b"s"
_T_BYTES = b"b"
_T_LIST = b"l"
_T_TUPLE = b"t"
_T_DICT = b"d"


class WireError(ValueError):
    """Raised on malformed or truncated wire data."""


def _pack_len(n: int) -> bytes:
    return struct.pack(">I", n)


def encode(value: Any) -> bytes:
    """Encode a value to canonical bytes. Raises WireError on unsupported types."""
    out: list[bytes] = []
    _encode_into(value, out)
    return b"".join(out)


def _encode_into(value: Any, out: list[bytes]) -> None:
    if value is None:
        out.append(_T_NONE)
    elif value is True:
        out.append(_T_TRUE)
    elif value is False:
        out.append(_T_FALSE)
    elif isinstance(value, int):
        raw = value.to_bytes((value.bit_length() + 8) // 8 or 1, "big", signed=True)
        out.append(_T_INT + _pack_len(len(raw)) + raw)
    elif isinstance(value, float):
        out.append(_T_FLOAT + struct.pack(">d", value))
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out.append(_T_STR + _pack_len(len(raw)) + raw)
    elif isinstance(value, bytes):
        out.append(_T_BYTES + _pack_len(len(value)) + value)
    elif isinstance(value, (list, tuple)):
        out.append((_T_LIST if isinstance(value, list) else _T_TUPLE) + _pack_len(len(value)))
        for item in value:
            _encode_into(item, out)
    elif isinstance(value, dict):
        entries = sorted((encode(k), encode(v)) for k, v in value.items())
        out.append(_T_DICT + _pack_len(len(entries)))
        for k, v in entries:
            out.append(k)
            out.append(v)
    else:
        raise WireError(f"unsupported type for wire encoding: {type(value).__name__}")


def decode(data: bytes) -> Any:
    """Decode canonical bytes back to the original value."""
    value, pos = _decode_at(data, 0)
    if pos != len(data):
        raise WireError(f"trailing bytes after value ({len(data) - pos})")
    return value


def _take(data: bytes, pos: int, n: int) -> tuple[bytes, int]:
    if pos + n > len(data):
        raise WireError("truncated wire data")
    return data[pos : pos + n], pos + n


def _decode_at(data: bytes, pos: int) -> tuple[Any, int]:
    tag, pos = _take(data, pos, 1)
    if tag == _T_NONE:
        return None, pos
    if tag == _T_TRUE:
        return True, pos
    if tag == _T_FALSE:
        return False, pos
    if tag == _T_INT:
        raw, pos = _take(data, pos, 4)
        (n,) = struct.unpack(">I", raw)
        raw, pos = _take(data, pos, n)
        return int.from_bytes(raw, "big", signed=True), pos
    if tag == _T_FLOAT:
        raw, pos = _take(data, pos, 8)
        return struct.unpack(">d", raw)[0], pos
    if tag in (_T_STR, _T_BYTES):
        raw, pos = _take(data, pos, 4)
        (n,) = struct.unpack(">I", raw)
        raw, pos = _take(data, pos, n)
        return (raw.decode("utf-8") if tag == _T_STR else raw), pos
    if tag in (_T_LIST, _T_TUPLE):
        raw, pos = _take(data, pos, 4)
        (n,) = struct.unpack(">I", raw)
        items = []
        for _ in range(n):
            item, pos = _decode_at(data, pos)
            items.append(item)
        return (items if tag == _T_LIST else tuple(items)), pos
    if tag == _T_DICT:
        raw, pos = _take(data, pos, 4)
        (n,) = struct.unpack(">I", raw)
        result = {}
        for _ in range(n):
            k, pos = _decode_at(data, pos)
            v, pos = _decode_at(data, pos)
            result[k] = v
        return result, pos
    raise WireError(f"unknown wire tag {tag!r}")


def frame(value: Any) -> bytes:
    """Length-prefixed, versioned blob: version byte + u32 length + payload."""
    body = encode(value)
    return bytes([WIRE_VERSION]) + _pack_len(len(body)) + body


def unframe(blob: bytes) -> Any:
    if len(blob) < 5:
        raise WireError("blob too short for frame header")
    if blob[0] != WIRE_VERSION:
        raise WireError(f"unsupported wire version {blob[0]}")
    (n,) = struct.unpack(">I", blob[1:5])
    if len(blob) != 5 + n:
        raise WireError("frame length mismatch")
    return decode(blob[5:])


def digest(value: Any) -> str:
    """Hex sha256 of the canonical encoding."""
    return hashlib.sha256(encode(value)).hexdigest()


def copy_value(value: Any) -> Any:
    """Deep copy through the codec; doubles as a serializability check."""
    return decode(encode(value))
