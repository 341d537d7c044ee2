"""On-disk formats: datasets, embedding/attribution bundles, model archives.

All binary payloads are little-endian float32 in row-major order, wrapped
in self-describing, CRC32-checked containers:

``.pse`` (embedding bundle)
    magic "PSE1" | u32 version=1 | u32 d | u32 M | str doc_id |
    M x [u32 l_i | l_i x str token | l_i*d float32] | u32 crc32

``.psa`` (attribution bundle)
    magic "PSA1" | u32 version=1 | u32 M | str doc_id | str method |
    M x [u32 l_i | l_i float32] | u32 crc32

``.psm`` (model archive)
    magic "PSM1" | u32 version=1 | u32 manifest_len | canonical-JSON manifest |
    per-parameter [u32 rows | u32 cols | rows*cols float32] | u32 crc32

Strings are u32-length-prefixed UTF-8.  The CRC covers every preceding
byte including the magic.  Readers validate magic, version, and declared
shapes against the file length before materializing any payload, then the
checksum, then payload finiteness.  Datasets are line-delimited JSON with
fields {id, text, label?}; labels are 0-based class indices.
"""

from __future__ import annotations

import json
import re
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    CorruptPayload,
    DuplicateId,
    ParseError,
    ShapeMismatch,
    VersionUnsupported,
)
from .segmentation import Document, segment_document

EMBEDDING_MAGIC = b"PSE1"
ATTRIBUTION_MAGIC = b"PSA1"
MODEL_MAGIC = b"PSM1"
FORMAT_VERSION = 1

_MODEL_PARAM_ORDER = ("w_query", "w_key", "w_value", "prototypes", "head")

# Document ids that can safely name bundle files on any filesystem.
SAFE_ID_RE = re.compile(r"^[A-Za-z0-9._-]+$")


@dataclass
class EmbeddingBundle:
    """Per-document token embeddings: one (l_i, d) float32 matrix per sentence."""

    doc_id: str
    dim: int
    token_lists: list[list[str]]
    matrices: list[np.ndarray]

    def validate(self) -> None:
        if len(self.token_lists) != len(self.matrices) or not self.matrices:
            raise ShapeMismatch(
                f"bundle {self.doc_id!r}: {len(self.token_lists)} token lists for "
                f"{len(self.matrices)} matrices"
            )
        for i, (tokens, matrix) in enumerate(zip(self.token_lists, self.matrices)):
            if matrix.ndim != 2 or matrix.shape != (len(tokens), self.dim):
                raise ShapeMismatch(
                    f"bundle {self.doc_id!r} sentence {i}: matrix shape {matrix.shape} "
                    f"!= ({len(tokens)}, {self.dim})"
                )
            if len(tokens) == 0:
                raise ShapeMismatch(f"bundle {self.doc_id!r} sentence {i}: no tokens")
            if not np.all(np.isfinite(matrix)):
                raise ShapeMismatch(
                    f"bundle {self.doc_id!r} sentence {i}: non-finite embeddings"
                )

    @property
    def token_counts(self) -> list[int]:
        return [len(t) for t in self.token_lists]


@dataclass
class AttributionBundle:
    """Per-document token attribution scores, one (l_i,) vector per sentence."""

    doc_id: str
    scores: list[np.ndarray]
    method: str = "unspecified"

    def validate(self, token_counts: list[int] | None = None) -> None:
        if not self.scores:
            raise ShapeMismatch(f"attributions {self.doc_id!r}: no sentences")
        for i, vec in enumerate(self.scores):
            if vec.ndim != 1 or vec.shape[0] == 0:
                raise ShapeMismatch(
                    f"attributions {self.doc_id!r} sentence {i}: bad shape {vec.shape}"
                )
            if not np.all(np.isfinite(vec)):
                raise ShapeMismatch(
                    f"attributions {self.doc_id!r} sentence {i}: non-finite scores"
                )
        if token_counts is not None:
            lengths = [int(v.shape[0]) for v in self.scores]
            if lengths != list(token_counts):
                raise ShapeMismatch(
                    f"attributions {self.doc_id!r}: lengths {lengths} != token counts "
                    f"{list(token_counts)}"
                )


# --- primitive writers/readers ------------------------------------------------

def _pack_u32(value: int) -> bytes:
    return struct.pack("<I", value)


def _pack_str(value: str) -> bytes:
    raw = value.encode("utf-8")
    return _pack_u32(len(raw)) + raw


class _Cursor:
    """Sequential reader that checks every declared size against the buffer."""

    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise CorruptPayload(
                f"{self.path}: declared sizes overrun the file length "
                f"(need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos})"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def floats(self, count: int) -> np.ndarray:
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4", count=count).copy()


def _finish_with_crc(path: Path, body: bytes) -> None:
    crc = zlib.crc32(body) & 0xFFFFFFFF
    path.write_bytes(body + _pack_u32(crc))


def _open_checked(path: str | Path, magic: bytes) -> _Cursor:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise CorruptPayload(f"{path}: file too short to hold a header")
    if data[:4] != magic:
        raise BadMagic(f"{path}: magic {data[:4]!r} != {magic!r}")
    version = struct.unpack("<I", data[4:8])[0]
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"{path}: version {version} unsupported")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CorruptPayload(f"{path}: checksum mismatch")
    cursor = _Cursor(data[:-4], str(path))
    cursor.pos = 8
    return cursor


# --- bundles -------------------------------------------------------------------

def write_bundle(bundle: EmbeddingBundle | AttributionBundle, path: str | Path) -> None:
    """Serialize a bundle; the container is chosen by the bundle's type."""
    path = Path(path)
    if isinstance(bundle, EmbeddingBundle):
        bundle.validate()
        parts = [EMBEDDING_MAGIC, _pack_u32(FORMAT_VERSION), _pack_u32(bundle.dim),
                 _pack_u32(len(bundle.matrices)), _pack_str(bundle.doc_id)]
        for tokens, matrix in zip(bundle.token_lists, bundle.matrices):
            parts.append(_pack_u32(len(tokens)))
            parts.extend(_pack_str(t) for t in tokens)
            parts.append(np.ascontiguousarray(matrix, dtype="<f4").tobytes())
    elif isinstance(bundle, AttributionBundle):
        bundle.validate()
        parts = [ATTRIBUTION_MAGIC, _pack_u32(FORMAT_VERSION),
                 _pack_u32(len(bundle.scores)), _pack_str(bundle.doc_id),
                 _pack_str(bundle.method)]
        for vec in bundle.scores:
            parts.append(_pack_u32(vec.shape[0]))
            parts.append(np.ascontiguousarray(vec, dtype="<f4").tobytes())
    else:
        raise TypeError(f"cannot serialize {type(bundle).__name__}")
    _finish_with_crc(path, b"".join(parts))


def read_bundle(path: str | Path) -> EmbeddingBundle | AttributionBundle:
    """Read either bundle kind, dispatching on the magic bytes."""
    magic = Path(path).open("rb").read(4)
    if magic == EMBEDDING_MAGIC:
        return _read_embedding_bundle(path)
    if magic == ATTRIBUTION_MAGIC:
        return _read_attribution_bundle(path)
    raise BadMagic(f"{path}: magic {magic!r} is neither {EMBEDDING_MAGIC!r} nor "
                   f"{ATTRIBUTION_MAGIC!r}")


def _read_embedding_bundle(path: str | Path) -> EmbeddingBundle:
    cur = _open_checked(path, EMBEDDING_MAGIC)
    dim = cur.u32()
    count = cur.u32()
    doc_id = cur.string()
    if dim == 0 or count == 0:
        raise ShapeMismatch(f"{path}: zero dim or sentence count")
    token_lists: list[list[str]] = []
    matrices: list[np.ndarray] = []
    for _ in range(count):
        length = cur.u32()
        if length == 0:
            raise ShapeMismatch(f"{path}: sentence with zero tokens")
        tokens = [cur.string() for _ in range(length)]
        matrix = cur.floats(length * dim).reshape(length, dim)
        token_lists.append(tokens)
        matrices.append(matrix)
    if cur.pos != len(cur.data):
        raise CorruptPayload(f"{path}: {len(cur.data) - cur.pos} trailing bytes")
    bundle = EmbeddingBundle(doc_id=doc_id, dim=dim, token_lists=token_lists,
                             matrices=matrices)
    try:
        bundle.validate()
    except ShapeMismatch as exc:
        raise CorruptPayload(f"{path}: {exc}") from exc
    return bundle


def _read_attribution_bundle(path: str | Path) -> AttributionBundle:
    cur = _open_checked(path, ATTRIBUTION_MAGIC)
    count = cur.u32()
    doc_id = cur.string()
    method = cur.string()
    if count == 0:
        raise ShapeMismatch(f"{path}: zero sentence count")
    scores = []
    for _ in range(count):
        length = cur.u32()
        if length == 0:
            raise ShapeMismatch(f"{path}: sentence with zero scores")
        scores.append(cur.floats(length))
    if cur.pos != len(cur.data):
        raise CorruptPayload(f"{path}: {len(cur.data) - cur.pos} trailing bytes")
    bundle = AttributionBundle(doc_id=doc_id, scores=scores, method=method)
    try:
        bundle.validate()
    except ShapeMismatch as exc:
        raise CorruptPayload(f"{path}: {exc}") from exc
    return bundle


def bundle_path(directory: str | Path, doc_id: str) -> Path:
    return Path(directory) / f"{doc_id}.pse"


def attribution_path(directory: str | Path, doc_id: str) -> Path:
    return Path(directory) / f"{doc_id}.psa"


# --- datasets -------------------------------------------------------------------

def read_dataset(path: str | Path) -> list[Document]:
    """Load a line-delimited JSON dataset and segment every document.

    Raises:
        ParseError: malformed JSON or a missing/ill-typed field, with the
            1-based line number.
        DuplicateId: two lines share an id.
    """
    documents: list[Document] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_number, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise ParseError(line_number, "record is not a JSON object")
            for key in ("id", "text"):
                if key not in record:
                    raise ParseError(line_number, f"missing field {key!r}")
                if not isinstance(record[key], str):
                    raise ParseError(line_number, f"field {key!r} must be a string")
            label = record.get("label")
            if label is not None and (isinstance(label, bool) or not isinstance(label, int)
                                      or label < 0):
                raise ParseError(line_number, "field 'label' must be a non-negative integer")
            doc_id = record["id"]
            if doc_id in seen:
                raise DuplicateId(doc_id)
            seen.add(doc_id)
            try:
                documents.append(segment_document(doc_id, record["text"], label))
            except Exception as exc:
                raise ParseError(line_number, f"cannot segment text: {exc}") from exc
    return documents


# --- model archives ----------------------------------------------------------------

def canonical_json(obj) -> bytes:
    """Stable JSON bytes: sorted keys, compact separators, UTF-8."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def save_model(model, path: str | Path) -> None:
    """Write a SurrogateModel archive (parameters must be float32).

    The float32 requirement makes save -> load -> predict bit-exact: a
    model trained here is returned already cast to storage precision.
    """
    from .prototypes import PrototypeAssociation  # noqa: F401  (documenting the record shape)

    arrays = {
        "w_query": model.attention.w_query,
        "w_key": model.attention.w_key,
        "w_value": model.attention.w_value,
        "prototypes": model.prototypes.vectors,
        "head": model.head.weights,
    }
    for name, arr in arrays.items():
        if arr.dtype != np.float32:
            raise ValueError(
                f"parameter {name!r} has dtype {arr.dtype}; archives store float32 "
                "(use model.astype_storage())"
            )
    manifest = {
        "format": "protosurrogate-model",
        "version": FORMAT_VERSION,
        "dim": model.dim,
        "num_prototypes": model.num_prototypes,
        "num_classes": model.num_classes,
        "eps": model.eps,
        "use_attributions": model.use_attributions,
        "trainable_prototypes": model.prototypes.trainable,
        "train_config": model.train_config,
        "associations": [
            {
                "prototype": k,
                "doc_id": a.doc_id,
                "sentence_index": a.sentence_index,
                "similarity": a.similarity,
                "text": a.text,
            }
            for k, a in enumerate(model.prototypes.associations)
        ],
        "params": [
            {"name": name, "rows": int(arrays[name].shape[0]),
             "cols": int(arrays[name].shape[1])}
            for name in _MODEL_PARAM_ORDER
        ],
    }
    body = [MODEL_MAGIC, _pack_u32(FORMAT_VERSION)]
    manifest_bytes = canonical_json(manifest)
    body.append(_pack_u32(len(manifest_bytes)))
    body.append(manifest_bytes)
    for name in _MODEL_PARAM_ORDER:
        arr = arrays[name]
        body.append(_pack_u32(arr.shape[0]))
        body.append(_pack_u32(arr.shape[1]))
        body.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    _finish_with_crc(Path(path), b"".join(body))


def load_model(path: str | Path):
    """Read a SurrogateModel archive back, bit-exactly."""
    from .encoder import AttentionParams
    from .prototypes import LinearHead, PrototypeAssociation, PrototypeSet
    from .surrogate import SurrogateModel

    cur = _open_checked(path, MODEL_MAGIC)
    manifest_len = cur.u32()
    try:
        manifest = json.loads(cur.take(manifest_len).decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise CorruptPayload(f"{path}: manifest is not valid JSON") from exc
    if manifest.get("version") != FORMAT_VERSION:
        raise VersionUnsupported(f"{path}: manifest version {manifest.get('version')}")

    declared = {p["name"]: (p["rows"], p["cols"]) for p in manifest["params"]}
    if set(declared) != set(_MODEL_PARAM_ORDER):
        raise CorruptPayload(f"{path}: manifest parameter set {sorted(declared)} unexpected")
    arrays = {}
    for entry in manifest["params"]:
        rows = cur.u32()
        cols = cur.u32()
        if (rows, cols) != (entry["rows"], entry["cols"]):
            raise ShapeMismatch(
                f"{path}: payload shape ({rows}, {cols}) != manifest "
                f"({entry['rows']}, {entry['cols']}) for {entry['name']!r}"
            )
        arrays[entry["name"]] = cur.floats(rows * cols).reshape(rows, cols)
    if cur.pos != len(cur.data):
        raise CorruptPayload(f"{path}: {len(cur.data) - cur.pos} trailing bytes")

    associations = [
        PrototypeAssociation(
            doc_id=a["doc_id"],
            sentence_index=a["sentence_index"],
            similarity=a["similarity"],
            text=a.get("text", ""),
        )
        for a in sorted(manifest["associations"], key=lambda a: a["prototype"])
    ]
    return SurrogateModel(
        attention=AttentionParams(
            w_query=arrays["w_query"], w_key=arrays["w_key"], w_value=arrays["w_value"]
        ),
        prototypes=PrototypeSet(
            vectors=arrays["prototypes"],
            trainable=manifest["trainable_prototypes"],
            associations=associations,
        ),
        head=LinearHead(weights=arrays["head"]),
        eps=manifest["eps"],
        use_attributions=manifest["use_attributions"],
        train_config=manifest["train_config"],
    )
