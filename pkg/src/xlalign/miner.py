"""Margin-based and absolute-similarity bitext retrieval.

Search is exact: cosine similarities are computed by blocked matrix products
over unit-normalized rows, so every result is reproducible and checkable
against a brute-force oracle. Ties anywhere break toward the lower sentence
id, giving a total order on results.

Margin scoring follows the ratio form: a candidate pair's raw cosine is
divided by the average cosine of each side's k nearest neighbors in the other
language, which demotes hub vectors that sit close to everything.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvariantError

_BLOCK = 1024
_WORKERS = 1


def configure_workers(n: int) -> None:
    """Set the thread count for query-block similarity computation.

    Each block's result is independent and written to a preallocated slot, so
    output is deterministic for any worker count; 1 means fully sequential.
    """
    global _WORKERS
    if n < 1:
        raise InvariantError("workers must be >= 1")
    _WORKERS = int(n)


@dataclass
class EmbeddingIndex:
    """Unit-normalized embedding rows with their sentence ids."""

    ids: np.ndarray  # (n,) int64
    vectors: np.ndarray  # (n, d) float64, unit rows

    def __len__(self) -> int:
        return len(self.ids)

    def validate(self) -> None:
        if len(self.ids) != self.vectors.shape[0]:
            raise InvariantError("ids and vectors disagree in length")
        if len(np.unique(self.ids)) != len(self.ids):
            raise InvariantError("duplicate ids in index")
        norms = np.linalg.norm(self.vectors, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise InvariantError("index rows must be unit norm")


@dataclass(frozen=True)
class ScoredPair:
    src_id: int
    trg_id: int
    score: float


@dataclass
class MiningConfig:
    """k neighbors for the margin scale, margin kind, and candidate direction."""

    k: int = 4
    margin_kind: str = "ratio"  # "ratio" | "absolute"
    direction: str = "union"  # "forward" | "backward" | "union"

    def __post_init__(self):
        if self.k < 1:
            raise InvariantError("k must be >= 1")
        if self.margin_kind not in ("ratio", "absolute"):
            raise InvariantError(f"unknown margin kind {self.margin_kind!r}")
        if self.direction not in ("forward", "backward", "union"):
            raise InvariantError(f"unknown direction {self.direction!r}")


def build_index(embeddings) -> EmbeddingIndex:
    """Normalize (id, vector) pairs, or an (ids, matrix) tuple, into an index."""
    if isinstance(embeddings, tuple) and len(embeddings) == 2:
        ids, vectors = embeddings
        ids = np.asarray(ids, dtype=np.int64)
        vectors = np.asarray(vectors, dtype=np.float64)
    else:
        pairs = list(embeddings)
        ids = np.array([int(i) for i, _ in pairs], dtype=np.int64)
        vectors = np.array([np.asarray(v, dtype=np.float64) for _, v in pairs])
    if vectors.ndim != 2:
        raise DimensionError("index vectors must form a 2-D matrix")
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0.0):
        raise InvariantError("zero vector cannot be indexed")
    index = EmbeddingIndex(ids, vectors / norms[:, None])
    index.validate()
    return index


def _knn_positions(
    index: EmbeddingIndex, queries: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Exact top-k by cosine for each query row; ties break to the lower id.

    Returns (positions, sims), each (n_queries, k), positions indexing into
    the index arrays, sims descending along axis 1.
    """
    n = len(index)
    if k > n:
        raise InvariantError(f"k={k} too large for index of size {n}")
    id_order = np.argsort(index.ids, kind="stable")
    vecs = index.vectors[id_order].T  # (d, n), columns in ascending-id order
    pos = np.empty((queries.shape[0], k), dtype=np.intp)
    sims = np.empty((queries.shape[0], k), dtype=np.float64)

    def run_block(start: int) -> None:
        block = queries[start : start + _BLOCK]
        s = block @ vecs  # (b, n)
        # stable argsort on -sims: equal sims keep ascending-id order
        top = np.argsort(-s, axis=1, kind="stable")[:, :k]
        rows = np.arange(block.shape[0])[:, None]
        sims[start : start + _BLOCK] = s[rows, top]
        pos[start : start + _BLOCK] = id_order[top]

    starts = range(0, queries.shape[0], _BLOCK)
    if _WORKERS > 1:
        with ThreadPoolExecutor(max_workers=_WORKERS) as pool:
            list(pool.map(run_block, starts))
    else:
        for start in starts:
            run_block(start)
    return pos, sims


def knn(index: EmbeddingIndex, queries: EmbeddingIndex, k: int):
    """Per-query lists of (neighbor id, cosine), best first. Requires k < index size."""
    if k >= len(index):
        raise InvariantError(f"k={k} must be smaller than the index size {len(index)}")
    pos, sims = _knn_positions(index, queries.vectors, k)
    return [
        [(int(index.ids[p]), float(s)) for p, s in zip(pos[q], sims[q])]
        for q in range(len(queries))
    ]


def margin_score(sim: float, fwd_neighbor_sims, bwd_neighbor_sims, k: int, kind: str) -> float:
    """Score one candidate pair from its raw cosine and both neighborhoods."""
    fwd = np.asarray(fwd_neighbor_sims, dtype=np.float64)
    bwd = np.asarray(bwd_neighbor_sims, dtype=np.float64)
    if fwd.shape != (k,) or bwd.shape != (k,):
        raise InvariantError(f"neighbor sim lists must have exactly k={k} entries")
    if kind == "absolute":
        return float(sim)
    if kind != "ratio":
        raise InvariantError(f"unknown margin kind {kind!r}")
    scale = (fwd.sum() + bwd.sum()) / (2.0 * k)
    if scale <= 0.0:
        raise InvariantError(f"ratio margin undefined for scale {scale}")
    return float(sim / scale)


def mine_candidates(
    src: EmbeddingIndex, trg: EmbeddingIndex, cfg: MiningConfig
) -> list[ScoredPair]:
    """Candidate translation pairs, margin-scored and sorted by score descending.

    Forward candidates are each source's k target neighbors; backward the
    symmetric set; union de-duplicates. The scale term always uses the full
    k-neighborhood of both members, so a pair scores the same from either
    direction.
    """
    if len(src) == 0 or len(trg) == 0:
        raise InvariantError("cannot mine with an empty index")
    if cfg.k >= min(len(src), len(trg)):
        raise InvariantError(f"k={cfg.k} must be smaller than both index sizes")
    k = cfg.k
    fwd_pos, fwd_sims = _knn_positions(trg, src.vectors, k)  # neighbors of src in trg
    bwd_pos, bwd_sims = _knn_positions(src, trg.vectors, k)  # neighbors of trg in src

    fwd_scale = fwd_sims.mean(axis=1)  # per src: avg sim of its k trg neighbors
    bwd_scale = bwd_sims.mean(axis=1)

    candidates: set[tuple[int, int]] = set()
    sim_of: dict[tuple[int, int], float] = {}
    if cfg.direction in ("forward", "union"):
        for i in range(len(src)):
            for j, s in zip(fwd_pos[i], fwd_sims[i]):
                candidates.add((i, int(j)))
                sim_of[(i, int(j))] = float(s)
    if cfg.direction in ("backward", "union"):
        for j in range(len(trg)):
            for i, s in zip(bwd_pos[j], bwd_sims[j]):
                candidates.add((int(i), j))
                sim_of[(int(i), j)] = float(s)

    pairs = []
    for i, j in candidates:
        sim = sim_of[(i, j)]
        if cfg.margin_kind == "ratio":
            scale = (fwd_scale[i] + bwd_scale[j]) / 2.0
            if scale <= 0.0:
                raise InvariantError(f"ratio margin undefined for scale {scale}")
            score = sim / scale
        else:
            score = sim
        pairs.append(ScoredPair(int(src.ids[i]), int(trg.ids[j]), float(score)))
    pairs.sort(key=lambda p: (-p.score, p.src_id, p.trg_id))
    return pairs


def retrieve_top1(src: EmbeddingIndex, trg: EmbeddingIndex) -> list[ScoredPair]:
    """For each source, its single best target by plain cosine (no margin)."""
    if len(trg) == 0:
        raise InvariantError("cannot retrieve from an empty target index")
    pos, sims = _knn_positions(trg, src.vectors, 1)
    return [
        ScoredPair(int(src.ids[i]), int(trg.ids[pos[i, 0]]), float(sims[i, 0]))
        for i in range(len(src))
    ]


def apply_threshold(pairs: list[ScoredPair], threshold: float) -> list[ScoredPair]:
    """Keep pairs scoring at or above the threshold, preserving order."""
    return [p for p in pairs if p.score >= threshold]


def optimize_threshold(pairs: list[ScoredPair], gold: set[tuple[int, int]]):
    """Threshold maximizing F1 against gold; ties prefer the larger threshold.

    The search space is the midpoints between consecutive distinct scores plus
    +/- infinity, which covers every achievable prediction set.
    """
    if not gold:
        raise InvariantError("gold set is empty")
    ordered = sorted(pairs, key=lambda p: -p.score)
    distinct: list[float] = []
    for p in ordered:
        if not distinct or p.score != distinct[-1]:
            distinct.append(p.score)
    thresholds = [np.inf]
    thresholds += [(a + b) / 2.0 for a, b in zip(distinct, distinct[1:])]
    thresholds.append(-np.inf)

    best_tau, best_f1 = np.inf, 0.0
    n_gold = len(gold)
    correct = 0
    kept = 0
    idx = 0
    for tau in thresholds:
        while idx < len(ordered) and ordered[idx].score >= tau:
            kept += 1
            if (ordered[idx].src_id, ordered[idx].trg_id) in gold:
                correct += 1
            idx += 1
        if kept == 0:
            f1 = 0.0
        else:
            precision = correct / kept
            recall = correct / n_gold
            f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        if f1 > best_f1:  # strict: earlier (larger) tau wins ties
            best_f1 = f1
            best_tau = tau
    return float(best_tau), float(best_f1)


# --- text formats -------------------------------------------------------------

def write_pairs(path, pairs: list[ScoredPair]) -> None:
    """One candidate per line: src_id<TAB>trg_id<TAB>score."""
    with open(path, "w") as f:
        for p in pairs:
            f.write(f"{p.src_id}\t{p.trg_id}\t{p.score!r}\n")


def read_pairs(path) -> list[ScoredPair]:
    pairs = []
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise InvariantError(f"{path}:{line_no}: expected 3 tab-separated fields")
            pairs.append(ScoredPair(int(parts[0]), int(parts[1]), float(parts[2])))
    return pairs


def read_gold(path) -> set[tuple[int, int]]:
    """Gold alignment file: src_id<TAB>trg_id per line."""
    gold = set()
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise InvariantError(f"{path}:{line_no}: expected 2 tab-separated fields")
            gold.add((int(parts[0]), int(parts[1])))
    return gold


def write_gold(path, gold) -> None:
    with open(path, "w") as f:
        for s, t in sorted(gold):
            f.write(f"{s}\t{t}\n")
