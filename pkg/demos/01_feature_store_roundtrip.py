"""Store per-layer pooled features in ALNF files and slice layer views.

The store holds one language per file: each sentence carries an l x d float32
matrix of token-sum-pooled hidden states, one row per encoder layer.
"""

import tempfile
from pathlib import Path

import numpy as np

from xlalign import average_layers, from_arrays, read_features, select_layers, write_features
from xlalign.feature_store import expected_file_size

rng = np.random.default_rng(0)
fs = from_arrays("de", ids=np.arange(5), features=rng.normal(size=(5, 4, 8)))

workdir = Path(tempfile.mkdtemp())
path = workdir / "de.alnf"
write_features(path, fs)
print(f"wrote {path} ({path.stat().st_size} bytes, header predicts {expected_file_size(fs)})")

back = read_features(path)
print(f"round trip bit-exact: {back == fs}")

middle = select_layers(fs, [1, 2])
print(f"selected layers [1, 2]: shape per sentence {middle.sentences[0].layers.shape}")

flat = average_layers(fs)
print(f"averaged layers: shape per sentence {flat.sentences[0].layers.shape}")
print("mean of all four rows equals the averaged row:",
      np.allclose(fs.sentences[0].layers.mean(axis=0), flat.sentences[0].layers[0], atol=1e-6))
