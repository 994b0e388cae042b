"""Binary tensor container ("MVT1") and the checkpoint directory layout.

A record is: magic bytes ``MVT1``, a little-endian u32 rank, rank u32 dims,
then the raw little-endian float32 payload in row-major order. Dataset frames
use one record per file; checkpoints concatenate records into ``weights.mvt``
with a plain-text offset index so single parameters can be read back without
parsing the whole file.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"MVT1"
_MAX_RANK = 8


def _pack(arr: np.ndarray) -> bytes:
    a = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
    if a.ndim == 0:
        a = a.reshape(1)
    header = MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return header + a.tobytes()


def _unpack(buf: bytes, offset: int, where: str):
    if buf[offset : offset + 4] != MAGIC:
        raise DataError(f"{where}: bad magic at offset {offset}, expected MVT1")
    pos = offset + 4
    if pos + 4 > len(buf):
        raise DataError(f"{where}: truncated header")
    (rank,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    if not 1 <= rank <= _MAX_RANK:
        raise DataError(f"{where}: implausible rank {rank}")
    if pos + 4 * rank > len(buf):
        raise DataError(f"{where}: truncated dims")
    dims = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    count = int(np.prod(dims, dtype=np.int64))
    nbytes = 4 * count
    if pos + nbytes > len(buf):
        raise DataError(f"{where}: payload shorter than dims {dims} promise")
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(dims)
    return arr.astype(np.float32, copy=True), pos + nbytes


def write_mvt(path, arr) -> None:
    """Write one array as a single-record MVT1 file."""
    Path(path).write_bytes(_pack(arr))


def read_mvt(path) -> np.ndarray:
    """Read a single-record MVT1 file; raises DataError on any corruption."""
    buf = Path(path).read_bytes()
    arr, end = _unpack(buf, 0, str(path))
    if end != len(buf):
        raise DataError(f"{path}: {len(buf) - end} trailing bytes after payload")
    return arr


def save_checkpoint(ckpt_dir, params: dict, meta: dict) -> None:
    """Write named arrays plus metadata to a checkpoint directory.

    Layout: ``weights.mvt`` (concatenated MVT1 records), ``weights.idx``
    (lines of ``name<TAB>offset``), ``meta.txt`` (``key=value`` lines).
    """
    d = Path(ckpt_dir)
    d.mkdir(parents=True, exist_ok=True)
    blob = bytearray()
    index_lines = []
    for name, arr in params.items():
        if "\t" in name or "\n" in name:
            raise DataError(f"checkpoint parameter name {name!r} contains separator characters")
        index_lines.append(f"{name}\t{len(blob)}")
        blob += _pack(arr)
    (d / "weights.mvt").write_bytes(bytes(blob))
    (d / "weights.idx").write_text("\n".join(index_lines) + "\n")
    (d / "meta.txt").write_text("".join(f"{k}={v}\n" for k, v in meta.items()))


def load_checkpoint(ckpt_dir):
    """Read back (params, meta) written by save_checkpoint."""
    d = Path(ckpt_dir)
    idx_path, blob_path = d / "weights.idx", d / "weights.mvt"
    if not idx_path.exists() or not blob_path.exists():
        raise DataError(f"{ckpt_dir}: not a checkpoint directory (missing weights.idx/weights.mvt)")
    buf = blob_path.read_bytes()
    params = {}
    for line in idx_path.read_text().splitlines():
        if not line.strip():
            continue
        try:
            name, off_s = line.split("\t")
            offset = int(off_s)
        except ValueError as exc:
            raise DataError(f"{idx_path}: malformed index line {line!r}") from exc
        params[name], _ = _unpack(buf, offset, f"{blob_path}:{name}")
    meta = {}
    meta_path = d / "meta.txt"
    if meta_path.exists():
        for line in meta_path.read_text().splitlines():
            if line.strip():
                k, _, v = line.partition("=")
                meta[k] = v
    return params, meta
