"""Writers for the consumer's binary bundle formats.

Embedding files ("PSE1") and attribution files ("PSA1") are little-endian,
length-prefixed, CRC32-checked containers:

    PSE1 | u32 version=1 | u32 d | u32 M | str doc_id |
        M x [u32 l_i | l_i x str token | l_i*d float32] | u32 crc32
    PSA1 | u32 version=1 | u32 M | str doc_id | str method |
        M x [u32 l_i | l_i float32] | u32 crc32

Strings are u32-length-prefixed UTF-8; the CRC covers every preceding
byte.  The test suite round-trips every emitted file through the
consumer's own readers.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

EMBEDDING_MAGIC = b"PSE1"
ATTRIBUTION_MAGIC = b"PSA1"
FORMAT_VERSION = 1


def _u32(value: int) -> bytes:
    return struct.pack("<I", value)


def _string(value: str) -> bytes:
    raw = value.encode("utf-8")
    return _u32(len(raw)) + raw


def _write_checked(path: Path, body: bytes) -> None:
    crc = zlib.crc32(body) & 0xFFFFFFFF
    path.write_bytes(body + _u32(crc))


def write_embedding_file(
    path: str | Path,
    doc_id: str,
    dim: int,
    token_lists: list[list[str]],
    matrices: list[np.ndarray],
) -> None:
    if len(token_lists) != len(matrices) or not matrices:
        raise ValueError(f"{doc_id!r}: token lists and matrices must pair up")
    parts = [EMBEDDING_MAGIC, _u32(FORMAT_VERSION), _u32(dim),
             _u32(len(matrices)), _string(doc_id)]
    for tokens, matrix in zip(token_lists, matrices):
        matrix = np.ascontiguousarray(matrix, dtype="<f4")
        if matrix.shape != (len(tokens), dim) or not tokens:
            raise ValueError(
                f"{doc_id!r}: matrix shape {matrix.shape} does not match "
                f"{len(tokens)} tokens x {dim}"
            )
        if not np.all(np.isfinite(matrix)):
            raise ValueError(f"{doc_id!r}: non-finite embeddings")
        parts.append(_u32(len(tokens)))
        parts.extend(_string(t) for t in tokens)
        parts.append(matrix.tobytes())
    _write_checked(Path(path), b"".join(parts))


def write_attribution_file(
    path: str | Path,
    doc_id: str,
    scores: list[np.ndarray],
    method: str,
) -> None:
    if not scores:
        raise ValueError(f"{doc_id!r}: no sentences")
    parts = [ATTRIBUTION_MAGIC, _u32(FORMAT_VERSION), _u32(len(scores)),
             _string(doc_id), _string(method)]
    for vec in scores:
        vec = np.ascontiguousarray(vec, dtype="<f4")
        if vec.ndim != 1 or vec.shape[0] == 0 or not np.all(np.isfinite(vec)):
            raise ValueError(f"{doc_id!r}: bad score vector {vec.shape}")
        parts.append(_u32(vec.shape[0]))
        parts.append(vec.tobytes())
    _write_checked(Path(path), b"".join(parts))


def read_dataset(path: str | Path) -> list[dict]:
    """Line-delimited JSON records {id, text, label?}, in file order."""
    from .errors import DatasetError

    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {line_number}: invalid JSON ({exc.msg})")
            if not isinstance(record, dict) or "id" not in record or "text" not in record:
                raise DatasetError(f"line {line_number}: need 'id' and 'text' fields")
            if record["id"] in seen:
                raise DatasetError(f"line {line_number}: duplicate id {record['id']!r}")
            seen.add(record["id"])
            records.append(record)
    return records
