"""Binary weight container and embedding files.

Layout (all little-endian):
  magic "PDF2" (4 bytes) | version u32 = 1 | metadata count u32 |
  per entry: key-len u16, key bytes, val-len u16, val bytes |
  tensor count u32 |
  per tensor: name-len u16, name bytes, dtype u8 (0=f32, 1=f64),
              rank u8, dims u32 x rank, raw row-major data.

Embedding files are either a container holding a single tensor named
"embedding" of shape [192], or a raw 768-byte little-endian f32[192] blob.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .audio_io import atomic_output
from .errors import DomainError, FormatError

MAGIC = b"PDF2"
VERSION = 1
EMBEDDING_DIM = 192

_DTYPE_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


@dataclass
class ParamStore:
    """Named tensors plus string metadata. Insertion order is preserved."""

    tensors: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if not name:
            raise DomainError("tensor name must be non-empty")
        if name in self.tensors:
            raise DomainError(f"duplicate tensor name: {name}")
        self.tensors[name] = np.ascontiguousarray(value)
        return self.tensors[name]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self):
        return list(self.tensors.keys())

    def astype(self, dtype) -> "ParamStore":
        return ParamStore(
            {k: v.astype(dtype) for k, v in self.tensors.items()},
            dict(self.metadata),
        )

    def copy(self) -> "ParamStore":
        return ParamStore(
            {k: v.copy() for k, v in self.tensors.items()}, dict(self.metadata)
        )


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise DomainError(f"string too long for container: {s[:32]}...")
    return struct.pack("<H", len(raw)) + raw


def save_container(store: ParamStore, path: str | os.PathLike) -> None:
    """Serialize a ParamStore; written atomically, byte-stable across platforms."""
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(store.metadata))]
    for key, val in store.metadata.items():
        parts.append(_pack_str(str(key)))
        parts.append(_pack_str(str(val)))
    parts.append(struct.pack("<I", len(store.tensors)))
    for name, tensor in store.tensors.items():
        if tensor.dtype not in _DTYPE_CODE:
            raise DomainError(f"unsupported tensor dtype {tensor.dtype} for {name!r}")
        parts.append(_pack_str(name))
        parts.append(struct.pack("<BB", _DTYPE_CODE[tensor.dtype], tensor.ndim))
        parts.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        le = tensor.astype(tensor.dtype.newbyteorder("<"), copy=False)
        parts.append(np.ascontiguousarray(le).tobytes())
    blob = b"".join(parts)
    with atomic_output(path) as tmp:
        with open(tmp, "wb") as fh:
            fh.write(blob)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated container while reading {what}", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def string(self, what: str) -> str:
        n = self.u16(what + " length")
        raw = self.take(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid UTF-8 in {what}", self.pos - n) from exc


def load_container(path: str | os.PathLike) -> ParamStore:
    """Parse a container file; rejects bad magic/version/truncation with offsets."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise FormatError(f"bad magic; not a {MAGIC.decode()} container", 0)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}", 4)
    store = ParamStore()
    n_meta = r.u32("metadata count")
    for _ in range(n_meta):
        key = r.string("metadata key")
        val = r.string("metadata value")
        store.metadata[key] = val
    n_tensors = r.u32("tensor count")
    for _ in range(n_tensors):
        name = r.string("tensor name")
        code, rank = struct.unpack("<BB", r.take(2, f"tensor {name} header"))
        if code not in _CODE_DTYPE:
            raise FormatError(f"unknown dtype code {code} for tensor {name!r}", r.pos - 2)
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"tensor {name} dims"))
        dtype = _CODE_DTYPE[code]
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = r.take(count * dtype.itemsize, f"tensor {name} data")
        arr = np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
        store.add(name, arr)
    if r.pos != len(data):
        raise FormatError("trailing bytes after container payload", r.pos)
    return store


# ---------------------------------------------------------------------------
# Embedding files


def save_embedding(values: np.ndarray, path: str | os.PathLike, raw: bool = True) -> None:
    """Write a 192-dim embedding, raw f32 blob by default."""
    values = np.asarray(values, dtype=np.float32).reshape(-1)
    if values.shape[0] != EMBEDDING_DIM:
        raise DomainError(f"embedding must have {EMBEDDING_DIM} dims, got {values.shape[0]}")
    if raw:
        with atomic_output(path) as tmp:
            with open(tmp, "wb") as fh:
                fh.write(values.astype("<f4").tobytes())
    else:
        store = ParamStore()
        store.add("embedding", values)
        save_container(store, path)


def load_embedding(path: str | os.PathLike) -> np.ndarray:
    """Load an embedding file (container or raw form) and L2-normalize it."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        store = load_container(path)
        if "embedding" not in store:
            raise FormatError(f"{path}: container lacks an 'embedding' tensor")
        values = store["embedding"].reshape(-1).astype(np.float64)
    else:
        size = os.path.getsize(path)
        if size != EMBEDDING_DIM * 4:
            raise FormatError(
                f"{path}: raw embedding must be exactly {EMBEDDING_DIM * 4} bytes, got {size}"
            )
        with open(path, "rb") as fh:
            values = np.frombuffer(fh.read(), dtype="<f4").astype(np.float64)
    if values.shape[0] != EMBEDDING_DIM:
        raise FormatError(f"{path}: embedding has {values.shape[0]} dims, expected {EMBEDDING_DIM}")
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: embedding contains non-finite values")
    norm = float(np.linalg.norm(values))
    if norm <= 0.0:
        raise DomainError(f"{path}: embedding has zero norm")
    return values / norm
