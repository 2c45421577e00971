"""Writer for the ALNF v1 feature file format.

Layout (little-endian): magic "ALNF" | version u32 | n_sentences u64 |
n_layers u32 | dim u32 | tag_len u8 + UTF-8 language tag | per sentence:
sentence_id u64, token_count u32, n_layers*dim float32 row-major.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"ALNF"
VERSION = 1

_HEADER = struct.Struct("<4sIQII")
_SENT_HEADER = struct.Struct("<QI")


class AlnfWriter:
    """Streaming writer: header first, then one record per sentence."""

    def __init__(self, path, language: str, n_layers: int, dim: int):
        tag = language.encode("utf-8")
        if len(tag) > 255:
            raise ValueError("language tag longer than 255 bytes")
        self.n_layers = n_layers
        self.dim = dim
        self.count = 0
        self._file = open(path, "wb")
        self._file.write(_HEADER.pack(MAGIC, VERSION, 0, n_layers, dim))
        self._file.write(struct.pack("<B", len(tag)))
        self._file.write(tag)

    def write_sentence(self, sentence_id: int, token_count: int, layers: np.ndarray) -> None:
        layers = np.ascontiguousarray(layers, dtype="<f4")
        if layers.shape != (self.n_layers, self.dim):
            raise ValueError(
                f"sentence {sentence_id}: expected ({self.n_layers}, {self.dim}), "
                f"got {layers.shape}"
            )
        if not np.isfinite(layers).all():
            raise ValueError(f"sentence {sentence_id}: non-finite feature value")
        self._file.write(_SENT_HEADER.pack(sentence_id, token_count))
        self._file.write(layers.tobytes())
        self.count += 1

    def close(self) -> None:
        # back-patch the sentence count now that it is known
        self._file.seek(8)
        self._file.write(struct.pack("<Q", self.count))
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()
