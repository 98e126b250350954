"""Little-endian record reader/writer shared by the index file formats.

Every index file is ``header | body | crc32`` where the trailing CRC-32
covers all preceding bytes.  Readers raise :class:`IndexFormatError`
carrying the byte offset of the first problem found.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np


class IndexFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def seal(payload: bytes) -> bytes:
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def unseal(data: bytes, magic: bytes, version: int) -> bytes:
    """Check magic, version and CRC; return the payload without the trailer."""
    data = bytes(data)
    if len(data) < len(magic) + 2 + 4:
        raise IndexFormatError("file too short for header", len(data))
    if data[: len(magic)] != magic:
        raise IndexFormatError(f"bad magic {data[:len(magic)]!r}, expected {magic!r}", 0)
    (ver,) = struct.unpack_from("<H", data, len(magic))
    if ver != version:
        raise IndexFormatError(f"unsupported format version {ver}, expected {version}", len(magic))
    payload, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise IndexFormatError("checksum mismatch, file is truncated or corrupted", len(data) - 4)
    return payload


class Reader:
    def __init__(self, buf: bytes, offset: int = 0):
        self.buf = buf
        self.offset = offset

    def _need(self, size: int):
        if self.offset + size > len(self.buf):
            raise IndexFormatError(
                f"unexpected end of data reading {size} bytes", self.offset
            )

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        self._need(size)
        vals = struct.unpack_from(fmt, self.buf, self.offset)
        self.offset += size
        return vals

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        size = dt.itemsize * count
        self._need(size)
        a = np.frombuffer(self.buf, dtype=dt, count=count, offset=self.offset)
        self.offset += size
        return a.astype(dt.newbyteorder("="))

    def seek(self, offset: int):
        if not 0 <= offset <= len(self.buf):
            raise IndexFormatError(f"offset {offset} outside file", self.offset)
        self.offset = offset
