"""Canonical byte encoding: length-prefixed field concatenation.

Everything that is hashed, signed, or persisted goes through these helpers so
that identity is independent of any in-memory or wire representation. Each
field is a 4-byte big-endian length followed by the raw bytes; integers are
encoded as 8-byte big-endian unsigned values before prefixing. The encoding
is injective, which is what makes "one flipped byte breaks verification"
hold everywhere.
"""

from __future__ import annotations

import struct

from .errors import ChainFormatError


def encode_bytes(value: bytes) -> bytes:
    return struct.pack(">I", len(value)) + value


def encode_str(value: str) -> bytes:
    return encode_bytes(value.encode("utf-8"))


def encode_u64(value: int) -> bytes:
    if value < 0:
        raise ValueError(f"cannot encode negative integer {value}")
    return encode_bytes(struct.pack(">Q", value))


class Reader:
    """Sequential decoder over a canonical byte string."""

    def __init__(self, data: bytes, *, what: str = "data"):
        self._data = data
        self._pos = 0
        self._what = what

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise ChainFormatError(f"truncated {self._what} at offset {self._pos}")
        out = self._data[self._pos:self._pos + n]
        self._pos += n
        return out

    def read_bytes(self) -> bytes:
        (length,) = struct.unpack(">I", self._take(4))
        return self._take(length)

    def read_str(self) -> str:
        raw = self.read_bytes()
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ChainFormatError(f"invalid utf-8 in {self._what}") from e

    def read_u64(self) -> int:
        raw = self.read_bytes()
        if len(raw) != 8:
            raise ChainFormatError(f"bad integer width in {self._what}")
        return struct.unpack(">Q", raw)[0]

    def expect_bytes(self, n: int) -> bytes:
        raw = self.read_bytes()
        if len(raw) != n:
            raise ChainFormatError(
                f"expected {n}-byte field in {self._what}, got {len(raw)}"
            )
        return raw

    @property
    def exhausted(self) -> bool:
        return self._pos == len(self._data)

    def require_exhausted(self) -> None:
        if not self.exhausted:
            raise ChainFormatError(f"trailing bytes in {self._what}")
