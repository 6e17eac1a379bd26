"""Length-prefixed binary I/O shared by the store and graph file formats."""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

from sentgraph.errors import SchemaVersionMismatch, StorageError

_NONE = 0xFFFFFFFF


def put_str(buf: bytearray, s: str | None) -> None:
    if s is None:
        buf += struct.pack("<I", _NONE)
        return
    b = s.encode("utf-8")
    buf += struct.pack("<I", len(b))
    buf += b


class Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise StorageError(f"{self.path}: truncated file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str | None:
        n = self.u32()
        if n == _NONE:
            return None
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise StorageError(f"{self.path}: corrupt string") from exc


def open_checked(path: str | Path, magic: bytes, version: int) -> Reader:
    """Read a versioned file, verifying magic, trailing CRC32 and version byte."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise StorageError(f"{path}: {exc}") from exc
    if len(data) < len(magic) + 5 or data[: len(magic)] != magic:
        raise StorageError(f"{path}: not a {magic.decode()} file or truncated")
    found = data[len(magic)]
    if found != version:
        raise SchemaVersionMismatch(f"{path}: file version {found}, expected {version}")
    body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != crc:
        raise StorageError(f"{path}: checksum mismatch (truncated or corrupt)")
    reader = Reader(body, path)
    reader.take(len(magic) + 1)
    return reader


def write_checked(path: str | Path, buf: bytearray) -> None:
    path = Path(path)
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(bytes(buf))
        tmp.replace(path)
    except OSError as exc:
        raise StorageError(f"{path}: {exc}") from exc
