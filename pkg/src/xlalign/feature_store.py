"""Binary store for per-sentence, per-layer pooled encoder features (ALNF v1).

One file holds one language corpus. Each sentence carries an ``l x d`` float32
matrix: row ``i`` is the token-sum-pooled hidden state of encoder layer ``i``.
The token dimension is pooled away at extraction time; per-layer scalar
weighting commutes with token pooling, so nothing is lost for this model.

File layout (all integers little-endian)::

    magic   "ALNF" (4 bytes)
    version u32            -- currently 1
    n       u64            -- number of sentences
    l       u32            -- layers per sentence
    d       u32            -- feature dimension
    tag_len u8, tag bytes  -- UTF-8 language tag
    per sentence:
        sentence_id u64
        token_count u32
        l*d float32, row-major

A FeatureSet is immutable after load and safe for shared concurrent reads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    HeaderMismatchError,
    InvariantError,
    TruncatedError,
    VersionError,
)

MAGIC = b"ALNF"
VERSION = 1

_HEADER = struct.Struct("<4sIQII")
_SENT_HEADER = struct.Struct("<QI")


@dataclass
class SentenceFeatures:
    """Per-layer pooled features of a single sentence.

    ``layers`` has one row per encoder layer and one column per feature
    dimension; ``token_count`` is diagnostic only (the token axis is already
    summed away).
    """

    sentence_id: int
    token_count: int
    layers: np.ndarray  # (l, d) float32

    def __post_init__(self):
        self.layers = np.asarray(self.layers, dtype=np.float32)
        if self.layers.ndim != 2:
            raise InvariantError(
                f"sentence {self.sentence_id}: layers must be 2-D, got {self.layers.ndim}-D"
            )

    def __eq__(self, other):
        if not isinstance(other, SentenceFeatures):
            return NotImplemented
        return (
            self.sentence_id == other.sentence_id
            and self.token_count == other.token_count
            and self.layers.shape == other.layers.shape
            and np.array_equal(self.layers, other.layers)
        )


@dataclass
class FeatureSet:
    """An ordered corpus of SentenceFeatures for one language."""

    language: str
    n_layers: int
    dim: int
    sentences: list[SentenceFeatures] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.sentences)

    def __eq__(self, other):
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return (
            self.language == other.language
            and self.n_layers == other.n_layers
            and self.dim == other.dim
            and self.sentences == other.sentences
        )

    @property
    def ids(self) -> np.ndarray:
        return np.array([s.sentence_id for s in self.sentences], dtype=np.int64)

    def as_array(self, dtype=np.float64) -> np.ndarray:
        """Stack all sentences into an (n, l, d) array."""
        if not self.sentences:
            return np.zeros((0, self.n_layers, self.dim), dtype=dtype)
        return np.stack([s.layers for s in self.sentences]).astype(dtype)

    def validate(self) -> None:
        """Raise InvariantError unless every documented invariant holds."""
        if self.n_layers < 0 or self.dim < 0:
            raise InvariantError("n_layers and dim must be nonnegative")
        seen: set[int] = set()
        for s in self.sentences:
            if s.sentence_id < 0:
                raise InvariantError(f"negative sentence_id {s.sentence_id}")
            if s.sentence_id in seen:
                raise InvariantError(f"duplicate sentence_id {s.sentence_id}")
            seen.add(s.sentence_id)
            if s.layers.shape != (self.n_layers, self.dim):
                raise InvariantError(
                    f"sentence {s.sentence_id}: shape {s.layers.shape} != "
                    f"({self.n_layers}, {self.dim})"
                )
            if not np.isfinite(s.layers).all():
                raise InvariantError(f"sentence {s.sentence_id}: non-finite value")
        if len(self.language.encode("utf-8")) > 255:
            raise InvariantError("language tag longer than 255 bytes")


def from_arrays(
    language: str,
    ids: np.ndarray,
    features: np.ndarray,
    token_counts: np.ndarray | None = None,
) -> FeatureSet:
    """Build a FeatureSet from an (n, l, d) array and matching ids."""
    features = np.asarray(features)
    n, l, d = features.shape
    if token_counts is None:
        token_counts = np.ones(n, dtype=np.int64)
    sentences = [
        SentenceFeatures(int(ids[i]), int(token_counts[i]), features[i].astype(np.float32))
        for i in range(n)
    ]
    fs = FeatureSet(language, l, d, sentences)
    fs.validate()
    return fs


def write_features(path, fs: FeatureSet) -> None:
    """Serialize ``fs`` to ``path`` in ALNF v1. Invariants are checked first."""
    fs.validate()
    tag = fs.language.encode("utf-8")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, len(fs.sentences), fs.n_layers, fs.dim))
        f.write(struct.pack("<B", len(tag)))
        f.write(tag)
        for s in fs.sentences:
            f.write(_SENT_HEADER.pack(s.sentence_id, s.token_count))
            f.write(np.ascontiguousarray(s.layers, dtype="<f4").tobytes())


def read_features(path) -> FeatureSet:
    """Read an ALNF v1 file back into a FeatureSet.

    Distinct failure modes raise distinct errors: BadMagicError,
    VersionError, TruncatedError (file shorter than the header promises),
    HeaderMismatchError (trailing bytes).
    """
    with open(path, "rb") as f:
        blob = f.read()

    if len(blob) < _HEADER.size:
        raise TruncatedError(f"{path}: file shorter than the fixed header")
    magic, version, n, l, d = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionError(f"{path}: unsupported version {version}")
    off = _HEADER.size
    if len(blob) < off + 1:
        raise TruncatedError(f"{path}: missing language tag length")
    (tag_len,) = struct.unpack_from("<B", blob, off)
    off += 1
    if len(blob) < off + tag_len:
        raise TruncatedError(f"{path}: truncated language tag")
    language = blob[off : off + tag_len].decode("utf-8")
    off += tag_len

    row_bytes = l * d * 4
    sentences = []
    for _ in range(n):
        if len(blob) < off + _SENT_HEADER.size + row_bytes:
            raise TruncatedError(f"{path}: truncated mid-sentence at byte {off}")
        sid, token_count = _SENT_HEADER.unpack_from(blob, off)
        off += _SENT_HEADER.size
        rows = np.frombuffer(blob, dtype="<f4", count=l * d, offset=off).reshape(l, d)
        off += row_bytes
        sentences.append(SentenceFeatures(sid, token_count, rows.copy()))
    if off != len(blob):
        raise HeaderMismatchError(
            f"{path}: {len(blob) - off} trailing bytes beyond header-declared payload"
        )

    fs = FeatureSet(language, l, d, sentences)
    fs.validate()
    return fs


def expected_file_size(fs: FeatureSet) -> int:
    """Exact on-disk size of ``fs`` in bytes, computed from the header alone."""
    tag = len(fs.language.encode("utf-8"))
    return 4 + 4 + 8 + 4 + 4 + 1 + tag + len(fs.sentences) * (8 + 4 + fs.n_layers * fs.dim * 4)


def select_layers(fs: FeatureSet, layer_indices) -> FeatureSet:
    """Project every sentence onto the given layer rows, in the given order.

    Duplicate indices are allowed and produce duplicate rows.
    """
    indices = [int(i) for i in layer_indices]
    for i in indices:
        if not 0 <= i < fs.n_layers:
            raise IndexError(f"layer index {i} out of range [0, {fs.n_layers})")
    sentences = [
        SentenceFeatures(s.sentence_id, s.token_count, s.layers[indices, :].copy())
        for s in fs.sentences
    ]
    return FeatureSet(fs.language, len(indices), fs.dim, sentences)


def average_layers(fs: FeatureSet) -> FeatureSet:
    """Collapse the layer axis to its unweighted arithmetic mean (l' = 1)."""
    if fs.n_layers < 1:
        raise InvariantError("average_layers requires at least one layer")
    sentences = [
        SentenceFeatures(
            s.sentence_id,
            s.token_count,
            s.layers.astype(np.float64).mean(axis=0, keepdims=True).astype(np.float32),
        )
        for s in fs.sentences
    ]
    return FeatureSet(fs.language, 1, fs.dim, sentences)


def subset_by_ids(fs: FeatureSet, ids) -> FeatureSet:
    """New FeatureSet holding only the sentences whose id is in ``ids``, in id order."""
    wanted = set(int(i) for i in ids)
    sentences = [s for s in fs.sentences if s.sentence_id in wanted]
    return FeatureSet(fs.language, fs.n_layers, fs.dim, sentences)
