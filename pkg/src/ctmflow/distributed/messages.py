"""Message values exchanged between agents and their byte encoding.

Wire format
-----------
A stream is a concatenation of records. Each record is little-endian::

    u32  length of the rest of the record in bytes
    u32  sender cell index
    u8   kind code (see :class:`Kind`)
    f64  payload values, ``(length - 5) / 8`` of them

Any transport that moves these records between processes can replace the
in-process bus; only value equality is expected across transports.
"""

from __future__ import annotations

import struct
from enum import IntEnum
from typing import Iterable, NamedTuple

from ..errors import ProtocolViolation

_HEAD = struct.Struct("<IIB")


class Kind(IntEnum):
    ZETA_VALUE = 1
    FLOW_VALUE = 2
    ETA_NEEDED_VALUES = 3
    FINAL_FLAG = 4
    VIOLATION_NOTICE = 5
    DMAX_BROADCAST = 6


class Message(NamedTuple):
    sender: int
    kind: Kind
    payload: tuple

    def encode(self) -> bytes:
        n = len(self.payload)
        return _HEAD.pack(5 + 8 * n, self.sender, int(self.kind)) + struct.pack(f"<{n}d", *self.payload)


def encode_messages(messages: Iterable[Message]) -> bytes:
    return b"".join(m.encode() for m in messages)


def decode_messages(data: bytes) -> list:
    """Parse a byte stream produced by :func:`encode_messages`.

    Raises
    ------
    ProtocolViolation
        On a truncated record, a payload that is not a whole number of
        doubles or an unknown kind code.
    """
    out = []
    pos = 0
    size = len(data)
    while pos < size:
        if size - pos < _HEAD.size:
            raise ProtocolViolation("truncated record header")
        length, sender, code = _HEAD.unpack_from(data, pos)
        body = length - 5
        if body < 0 or body % 8 or pos + 4 + length > size:
            raise ProtocolViolation(f"malformed record at byte {pos}")
        try:
            kind = Kind(code)
        except ValueError:
            raise ProtocolViolation(f"unknown message kind {code}") from None
        payload = struct.unpack_from(f"<{body // 8}d", data, pos + _HEAD.size)
        out.append(Message(sender, kind, tuple(payload)))
        pos += 4 + length
    return out
