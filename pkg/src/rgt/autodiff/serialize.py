"""RGT1 flat binary tensor container.

Layout: ``b"RGT1"``, u8 dtype code, u8 rank, rank x little-endian u64 dims,
then the row-major little-endian payload. Several records may be
concatenated in one stream.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Iterable, List, Union

import numpy as np

MAGIC = b"RGT1"

DTYPE_CODES = {
    np.dtype("float32"): 1,
    np.dtype("float64"): 2,
    np.dtype("uint8"): 3,
    np.dtype("uint16"): 4,
    np.dtype("int32"): 5,
    np.dtype("int64"): 6,
    np.dtype("bool"): 7,
}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


class FormatError(ValueError):
    pass


def write_array(stream: BinaryIO, arr) -> None:
    arr = np.asarray(arr)
    if arr.dtype not in DTYPE_CODES:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError("rank exceeds 255")
    stream.write(MAGIC)
    stream.write(struct.pack("<BB", DTYPE_CODES[arr.dtype], arr.ndim))
    stream.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    stream.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def read_array(stream: BinaryIO) -> np.ndarray:
    magic = stream.read(4)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    header = stream.read(2)
    if len(header) != 2:
        raise FormatError("truncated header")
    code, rank = struct.unpack("<BB", header)
    if code not in CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    dims = struct.unpack(f"<{rank}Q", stream.read(8 * rank)) if rank else ()
    dtype = CODE_DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = stream.read(count * dtype.itemsize)
    if len(payload) != count * dtype.itemsize:
        raise FormatError("truncated payload")
    return np.frombuffer(payload, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(dims)


def dumps(arr) -> bytes:
    buf = io.BytesIO()
    write_array(buf, arr)
    return buf.getvalue()


def loads(data: bytes) -> np.ndarray:
    return read_array(io.BytesIO(data))


def save(path: Union[str, Path], arrays: Union[np.ndarray, Iterable[np.ndarray]]) -> None:
    if isinstance(arrays, np.ndarray):
        arrays = [arrays]
    with open(path, "wb") as fh:
        for arr in arrays:
            write_array(fh, arr)


def load_all(path: Union[str, Path]) -> List[np.ndarray]:
    out = []
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    while buf.tell() < len(data):
        out.append(read_array(buf))
    return out


def load(path: Union[str, Path]) -> np.ndarray:
    arrays = load_all(path)
    if len(arrays) != 1:
        raise FormatError(f"expected one tensor in {path}, found {len(arrays)}")
    return arrays[0]
