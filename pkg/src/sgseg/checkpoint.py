"""Binary checkpoint files.

Layout (all integers little-endian)::

    b"SGSEG1"
    u32 config length, UTF-8 config text (``key = value`` lines)
    u32 record count
    per record:
        u32 name length, name bytes (UTF-8)
        u8  dtype tag: b"d" float64, b"f" float32, b"q" int64, b"i" int32, b"?" bool
        u32 rank, rank x u64 extents
        raw little-endian values, C order
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig, emit_config, parse_config_text

MAGIC = b"SGSEG1"
_TAGS = {
    np.dtype("<f8"): b"d",
    np.dtype("<f4"): b"f",
    np.dtype("<i8"): b"q",
    np.dtype("<i4"): b"i",
    np.dtype("bool"): b"?",
}
_DTYPES = {v: k for k, v in _TAGS.items()}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    weights: dict = field(default_factory=dict)  # "spnn.*", "gnn.*", "cnn.*" incl. BN buffers
    optimizer: dict = field(default_factory=dict)  # "adam.*"
    history: dict = field(default_factory=dict)  # "history.*" loss traces

    def arrays(self):
        return {**self.weights, **self.optimizer, **self.history}


def write_records(fh, arrays):
    fh.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in "=|<" else arr.dtype
        dt = np.dtype(dt)
        if dt not in _TAGS:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        fh.write(struct.pack("<I", len(nb)))
        fh.write(nb)
        fh.write(_TAGS[dt])
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def _read(fh, n):
    b = fh.read(n)
    if len(b) != n:
        raise CheckpointError("truncated checkpoint")
    return b


def read_records(fh):
    (count,) = struct.unpack("<I", _read(fh, 4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", _read(fh, 4))
        name = _read(fh, nlen).decode("utf-8")
        tag = _read(fh, 1)
        if tag not in _DTYPES:
            raise CheckpointError(f"{name}: unknown dtype tag {tag!r}")
        dt = _DTYPES[tag]
        (rank,) = struct.unpack("<I", _read(fh, 4))
        shape = struct.unpack(f"<{rank}Q", _read(fh, 8 * rank))
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        out[name] = np.frombuffer(_read(fh, n * dt.itemsize), dtype=dt).reshape(shape).copy()
    return out


def save_checkpoint(ckpt: Checkpoint, path):
    text = emit_config(ckpt.config).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(text)))
        fh.write(text)
        write_records(fh, ckpt.arrays())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        (clen,) = struct.unpack("<I", _read(fh, 4))
        config = parse_config_text(_read(fh, clen).decode("utf-8"))
        arrays = read_records(fh)
    ckpt = Checkpoint(config)
    for name, arr in arrays.items():
        if name.startswith("adam."):
            ckpt.optimizer[name] = arr
        elif name.startswith("history."):
            ckpt.history[name] = arr
        else:
            ckpt.weights[name] = arr
    return ckpt
