"""
Flat weight manifest: the on-disk format for pretrained backbones and checkpoints.

Layout (little-endian throughout):

    b"ENFW"  u32 version  u32 record_count
    per record:
        u16 name_len, name (utf-8)
        u8  dtype_len, numpy dtype string ("<f4" for pretrained weights;
            checkpoints may also hold "<i8" and "|u1")
        u8  ndim, ndim x u32 dims
        u64 nbytes, raw array bytes (C order)
"""
import struct
import warnings
from collections import OrderedDict
from typing import Dict, Mapping, Union

import numpy as np
import torch
import torch.nn as nn

from common.errors import IntegrityError, ShapeError

MAGIC = b"ENFW"
VERSION = 1
ALLOWED_DTYPES = ("<f4", "<f8", "<i8", "|u1")

ArrayLike = Union[np.ndarray, torch.Tensor]


def _to_numpy(value: ArrayLike) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    arr = np.ascontiguousarray(value)
    if arr.dtype == np.float32:
        return arr.astype("<f4", copy=False)
    if arr.dtype == np.float64:
        return arr.astype("<f8", copy=False)
    if arr.dtype == np.int64:
        return arr.astype("<i8", copy=False)
    if arr.dtype == np.uint8:
        return arr
    raise ValueError(f"Unsupported dtype for weight manifest: {arr.dtype}")


def encode_manifest(tensors: Mapping[str, ArrayLike]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = _to_numpy(value)
        name_b = name.encode("utf-8")
        dtype_b = arr.dtype.str.encode("ascii")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<B", len(dtype_b)))
        chunks.append(dtype_b)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        raw = arr.tobytes(order="C")
        chunks.append(struct.pack("<Q", len(raw)))
        chunks.append(raw)
    return b"".join(chunks)


def decode_manifest(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    try:
        if blob[:4] != MAGIC:
            raise IntegrityError("Not a weight manifest (bad magic)")
        version, count = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise IntegrityError(f"Unsupported manifest version {version}")
        pos = 12
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (dtype_len,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dtype = blob[pos:pos + dtype_len].decode("ascii")
            pos += dtype_len
            if dtype not in ALLOWED_DTYPES:
                raise IntegrityError(f"Record {name!r} has unsupported dtype {dtype!r}")
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            (nbytes,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
            if pos + nbytes > len(blob):
                raise IntegrityError(f"Record {name!r} is truncated")
            arr = np.frombuffer(blob, dtype=np.dtype(dtype), count=nbytes // np.dtype(dtype).itemsize, offset=pos)
            out[name] = arr.reshape(shape).copy()
            pos += nbytes
        if pos != len(blob):
            raise IntegrityError("Trailing bytes after last record")
    except struct.error as e:
        raise IntegrityError(f"Weight manifest is truncated or corrupt: {e}") from e
    except (UnicodeDecodeError, ValueError) as e:
        raise IntegrityError(f"Weight manifest is corrupt: {e}") from e
    return out


def write_manifest(path: str, tensors: Mapping[str, ArrayLike]) -> None:
    with open(path, "wb") as f:
        f.write(encode_manifest(tensors))


def read_manifest(path: str) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as f:
        return decode_manifest(f.read())


def state_dict_to_arrays(module: nn.Module) -> Dict[str, np.ndarray]:
    return {k: _to_numpy(v) for k, v in module.state_dict().items()}


def load_pretrained(module: nn.Module, path: str, prefix: str = "") -> nn.Module:
    """Load a manifest into `module`, checking every shape against the module.

    Records whose name does not start with `prefix` are ignored; the prefix is
    stripped before matching. Missing parameters keep their random init and
    trigger a warning; a shape disagreement is an error.
    """
    records = read_manifest(path)
    own = module.state_dict()
    loaded = {}
    for name, arr in records.items():
        if not name.startswith(prefix):
            continue
        key = name[len(prefix):]
        if key not in own:
            continue
        if tuple(own[key].shape) != tuple(arr.shape):
            raise ShapeError(f"{key}: manifest shape {tuple(arr.shape)} != model shape {tuple(own[key].shape)}")
        loaded[key] = torch.from_numpy(arr).to(own[key].dtype)
    missing = sorted(set(own) - set(loaded))
    if missing:
        warnings.warn(f"{path}: {len(missing)} parameters not in manifest (kept random init), e.g. {missing[:3]}")
    module.load_state_dict(loaded, strict=False)
    return module
