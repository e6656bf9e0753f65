"""On-disk formats: raw tensors, checkpoints, PGM previews.

Raw tensor: magic ``IERT``, u32 rank, u32 dims..., float32 little-endian
row-major payload.  Checkpoint: magic ``IER1``, u32 version, config hash,
then named tensors (float64 or int64).  Both round-trip bit-exactly.
"""

import hashlib
import json
import struct

import numpy as np

from .errors import FormatError

TENSOR_MAGIC = b"IERT"
CHECKPOINT_MAGIC = b"IER1"
CHECKPOINT_VERSION = 1

_DTYPE_CODES = {0: "<f8", 1: "<i8", 2: "<f4"}
_DTYPE_TO_CODE = {np.dtype("<f8"): 0, np.dtype("<i8"): 1, np.dtype("<f4"): 2}


def write_tensor(path, array):
    array = np.asarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", array.ndim))
        for d in array.shape:
            fh.write(struct.pack("<I", d))
        fh.write(np.ascontiguousarray(array).tobytes())


def read_tensor(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != TENSOR_MAGIC:
            raise FormatError(f"{path}: bad tensor magic {magic!r}")
        (rank,) = struct.unpack("<I", fh.read(4))
        shape = tuple(
            struct.unpack("<I", fh.read(4))[0] for _ in range(rank)
        )
        payload = fh.read()
    expected = int(np.prod(shape, dtype=np.int64)) * 4
    if len(payload) != expected:
        raise FormatError(f"{path}: payload of {len(payload)} bytes, "
                          f"expected {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)


def config_hash(config_dict):
    blob = json.dumps(config_dict, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def write_checkpoint(path, cfg_hash, tensors):
    """``tensors``: ordered dict of name -> ndarray (float64 or int64)."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        hash_bytes = cfg_hash.encode()
        fh.write(struct.pack("<I", len(hash_bytes)))
        fh.write(hash_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name, array in tensors.items():
            if array.dtype.kind == "i":
                array = np.asarray(array, dtype="<i8")
            else:
                array = np.asarray(array, dtype="<f8")
            name_bytes = name.encode()
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", _DTYPE_TO_CODE[array.dtype]))
            fh.write(struct.pack("<I", array.ndim))
            for d in array.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(array).tobytes())


def read_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        (hash_len,) = struct.unpack("<I", fh.read(4))
        cfg_hash = fh.read(hash_len).decode()
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode()
            (code,) = struct.unpack("<I", fh.read(4))
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = tuple(
                struct.unpack("<I", fh.read(4))[0] for _ in range(rank)
            )
            dtype = np.dtype(_DTYPE_CODES[code])
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            payload = fh.read(n_bytes)
            if len(payload) != n_bytes:
                raise FormatError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return cfg_hash, tensors


def write_pgm(path, sim_map):
    """8-bit PGM preview with [-1, 1] mapped linearly onto [0, 255]."""
    sim_map = np.asarray(sim_map, dtype=np.float64)
    pixels = np.clip(np.rint((sim_map + 1.0) / 2.0 * 255.0), 0, 255)
    pixels = pixels.astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(pixels.tobytes())
