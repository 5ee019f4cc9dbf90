"""Versioned, length-prefixed message framing.

A message is ``MAGIC | version u16 | kind | section count u16`` followed by
``name | u64 length | payload`` per section. Short strings are u8
length-prefixed UTF-8. Section order is preserved, so encoding is byte-exact
and transcripts can be replayed.
"""

from __future__ import annotations

import struct

from ..errors import TransportError

MAGIC = b"IPM"
VERSION = 1


def _short(text: str) -> bytes:
    raw = text.encode()
    if len(raw) > 255:
        raise ValueError("name too long")
    return bytes([len(raw)]) + raw


def encode_message(kind: str, sections: dict[str, bytes]) -> bytes:
    parts = [MAGIC, struct.pack(">H", VERSION), _short(kind), struct.pack(">H", len(sections))]
    for name, payload in sections.items():
        parts += [_short(name), struct.pack(">Q", len(payload)), bytes(payload)]
    return b"".join(parts)


def decode_message(data: bytes) -> tuple[str, dict[str, bytes]]:
    try:
        if data[:3] != MAGIC:
            raise TransportError("bad magic")
        (version,) = struct.unpack(">H", data[3:5])
        if version != VERSION:
            raise TransportError(f"unsupported message version {version}")
        pos = 5
        kind, pos = _read_short(data, pos)
        (count,) = struct.unpack(">H", data[pos : pos + 2])
        pos += 2
        sections = {}
        for _ in range(count):
            name, pos = _read_short(data, pos)
            (length,) = struct.unpack(">Q", data[pos : pos + 8])
            pos += 8
            if pos + length > len(data):
                raise TransportError("truncated section")
            sections[name] = data[pos : pos + length]
            pos += length
        if pos != len(data):
            raise TransportError("trailing bytes")
        return kind, sections
    except struct.error as exc:
        raise TransportError("truncated message") from exc


def _read_short(data: bytes, pos: int) -> tuple[str, int]:
    if pos >= len(data):
        raise TransportError("truncated message")
    n = data[pos]
    end = pos + 1 + n
    if end > len(data):
        raise TransportError("truncated message")
    return data[pos + 1 : end].decode(), end
