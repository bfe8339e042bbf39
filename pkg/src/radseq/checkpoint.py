"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"RDSQ"                      magic
    u16                          format version (1)
    u32 + bytes                  UTF-8 JSON block: sequencer + head spec, seed,
                                 optional normalization stats and split record
    repeated until EOF:
      u16 + bytes                parameter name (UTF-8)
      u8                         rank
      u64 * rank                 extents
      f32 * prod(extents)        values, row-major

The JSON block is written with sorted keys and compact separators so that
save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .sequencer import SequencerModel, parameter_shapes, spec_from_dict, spec_to_dict

MAGIC = b"RDSQ"
VERSION = 1


def to_bytes(model: SequencerModel, extra: dict | None = None) -> bytes:
    meta = spec_to_dict(model.spec, model.head)
    meta["seed"] = int(model.seed)
    if extra:
        meta.update(extra)
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(blob)), blob]
    for name, arr in model.params.items():
        bname = name.encode("utf-8")
        parts.append(struct.pack("<H", len(bname)))
        parts.append(bname)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save(model: SequencerModel, path, extra: dict | None = None) -> None:
    """Write ``model`` (plus optional extra JSON metadata) to ``path``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    # write-then-rename so readers never see a half-written checkpoint
    with open(tmp, "wb") as f:
        f.write(to_bytes(model, extra))
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataError(f"{self.path}: truncated checkpoint at byte {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(data: bytes, path="<bytes>", dtype=np.float32) -> tuple[SequencerModel, dict]:
    """Decode a checkpoint; returns the model and the full JSON metadata."""
    r = _Reader(data, path)
    if r.take(4) != MAGIC:
        raise DataError(f"{path}: not a radseq checkpoint (bad magic)")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (n,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(n).decode("utf-8"))
    except ValueError as e:
        raise DataError(f"{path}: corrupt JSON block: {e}") from e
    spec, head = spec_from_dict(meta)
    expected = parameter_shapes(spec, head)
    params = {}
    while r.pos < len(data):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}Q")
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        params[name] = arr.astype(dtype)
    if {k: tuple(v.shape) for k, v in params.items()} != expected:
        raise DataError(f"{path}: parameter set does not match the stored spec")
    params = {k: params[k] for k in expected}
    return SequencerModel(spec, head, meta["seed"], params, np.dtype(dtype)), meta


def load(path, dtype=np.float32) -> tuple[SequencerModel, dict]:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    return from_bytes(data, path, dtype)
