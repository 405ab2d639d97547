"""
Named-tensor container file.

Byte layout (all integers little-endian):

    header   magic b"KGLT" | version u16 | entry count u32
    entry    name length u16 | name (UTF-8) | dtype code u8 | ndim u8 |
             dims u32 * ndim | raw little-endian values
    trailer  CRC-32 u32 of every preceding byte

dtype codes: 1 = float64, 2 = float32, 3 = int64.

Files are written to a temporary sibling and renamed, and fully validated
before any tensor is returned, so a corrupt file never yields a partial load.
"""
import os
import struct
import tempfile
import zlib
from typing import Dict, Mapping

import numpy as np

from ..errors import CheckpointError, MissingFileError

MAGIC = b"KGLT"
VERSION = 1

_HEADER = struct.Struct("<4sHI")
_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<f4"), 3: np.dtype("<i8")}
_CODES = {np.dtype("float64"): 1, np.dtype("float32"): 2, np.dtype("int64"): 3}


def write_container(path: str, tensors: Mapping[str, np.ndarray]):
    chunks = [_HEADER.pack(MAGIC, VERSION, len(tensors))]
    for name, array in tensors.items():
        array = np.asarray(array)
        code = _CODES.get(array.dtype)
        if code is None:
            raise CheckpointError(f"unsupported dtype {array.dtype} for tensor '{name}'")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", code, array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes())
    body = b"".join(chunks)
    payload = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def read_container(path: str) -> Dict[str, np.ndarray]:
    if not os.path.isfile(path):
        raise MissingFileError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        payload = f.read()

    if len(payload) < _HEADER.size + 4:
        raise CheckpointError(f"{path}: file too short for a container header")
    magic, version, count = _HEADER.unpack_from(payload, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: container version {version}, expected {VERSION}")
    body, (crc,) = payload[:-4], struct.unpack("<I", payload[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")

    tensors: Dict[str, np.ndarray] = {}
    offset = _HEADER.size
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", body, offset)
            offset += 2
            name = body[offset:offset + name_len].decode("utf-8")
            offset += name_len
            code, ndim = struct.unpack_from("<BB", body, offset)
            offset += 2
            shape = struct.unpack_from(f"<{ndim}I", body, offset)
            offset += 4 * ndim
            dtype = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if offset + nbytes > len(body):
                raise CheckpointError(f"{path}: tensor '{name}' runs past end of file")
            if nbytes:
                values = np.frombuffer(body, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset)
            else:
                values = np.empty(0, dtype=dtype)
            tensors[name] = values.reshape(shape).astype(dtype.newbyteorder("="))
            offset += nbytes
    except (struct.error, KeyError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: malformed entry ({e})") from e
    if offset != len(body):
        raise CheckpointError(f"{path}: {len(body) - offset} trailing bytes after last entry")
    return tensors
