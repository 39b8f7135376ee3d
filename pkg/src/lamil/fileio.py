"""Byte-level reader with offset-aware error reporting.

Both binary formats (LAMB bags, LAMP checkpoints) are little-endian and
reject malformed input by naming the byte offset where parsing failed.
"""

from __future__ import annotations

import struct

import numpy as np


class FormatError(ValueError):
    """Malformed binary file; str(err) names the byte offset."""

    def __init__(self, offset: int, message: str):
        super().__init__(f"at byte {offset}: {message}")
        self.offset = offset


class ByteReader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, count: int, what: str) -> bytes:
        if self.offset + count > len(self.data):
            raise FormatError(
                self.offset,
                f"truncated while reading {what} "
                f"({count} bytes needed, {len(self.data) - self.offset} left)",
            )
        chunk = self.data[self.offset : self.offset + count]
        self.offset += count
        return chunk

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def string(self, what: str) -> str:
        at = self.offset
        length = self.u16(f"{what} length")
        raw = self.take(length, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(at, f"{what} is not valid UTF-8") from exc

    def array(self, dtype: str, count: int, what: str) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        raw = self.take(itemsize * count, what)
        return np.frombuffer(raw, dtype=dtype).copy()

    def expect_end(self) -> None:
        if self.offset != len(self.data):
            raise FormatError(
                self.offset, f"{len(self.data) - self.offset} trailing bytes"
            )


def encode_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError(f"string too long to encode: {len(raw)} bytes")
    return struct.pack("<H", len(raw)) + raw
