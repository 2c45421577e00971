"""Training objectives: triplet ranking with hard negatives, cycle, adversarial.

All losses are batch means so hyperparameters transfer across batch sizes.
Every randomized function takes an explicit seed or numpy Generator; the same
seed and inputs always reproduce the same value. Functions ending in
``_with_grad`` return analytic gradients alongside the value; the plain names
return the value only.

Subgradient conventions: a hinge term contributes gradient only when its
pre-activation is strictly positive; leaky-ReLU uses the slope branch at 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvariantError


@dataclass
class LossConfig:
    """Ranking-loss hyperparameters.

    ``margin`` is the hinge margin, ``n_negatives`` the number of sampled
    negatives per anchor and direction (1 hardest + the rest uniform),
    ``cycle_weight`` the multiplier on the cycle term in the combined
    unsupervised loss. Similarity is fixed to cosine.
    """

    margin: float = 0.0
    n_negatives: int = 1
    cycle_weight: float = 1.0

    def __post_init__(self):
        if self.margin < 0:
            raise InvariantError("margin must be >= 0")
        if self.n_negatives < 1:
            raise InvariantError("n_negatives must be >= 1")
        if self.cycle_weight < 0:
            raise InvariantError("cycle_weight must be >= 0")


@dataclass
class Batch:
    """Anchor-side and paired-side vectors; positives are aligned by index."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.a.shape != self.b.shape:
            raise DimensionError(f"batch sides differ: {self.a.shape} vs {self.b.shape}")


def as_rng(rng) -> np.random.Generator:
    """Coerce an int seed or Generator into a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.Generator(np.random.PCG64(rng))


def _unit_rows(x: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        raise InvariantError(f"zero vector in {what}")
    return x / norms[:, None], norms


def cosine(a, b) -> float:
    """Cosine similarity of two vectors. Zero vectors are rejected."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"cosine: shapes {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise InvariantError("cosine undefined for a zero vector")
    return float(a @ b / (na * nb))


def _uniform_without_replacement(rng: np.random.Generator, m: int, k: int) -> list[int]:
    """k distinct uniform draws from range(m) via Floyd's algorithm.

    Costs exactly k integer variates regardless of m, which keeps the
    generator stream position a simple function of the batch shape.
    """
    seen: set[int] = set()
    out: list[int] = []
    for j in range(m - k, m):
        t = int(rng.integers(0, j + 1))
        if t in seen:
            t = j
        seen.add(t)
        out.append(t)
    return out


def select_negatives(sims: np.ndarray, i: int, n: int, rng) -> list[int]:
    """Pick ``n`` negative indices for anchor ``i`` from a batch similarity matrix.

    ``sims[i, j]`` is the similarity of candidate ``j`` to anchor ``i``. The
    first index returned is the hardest negative (argmax over ``j != i``, ties
    to the lowest index); the remaining ``n - 1`` are drawn uniformly without
    replacement (Floyd's algorithm over the ascending candidate pool) from the
    other non-positives.
    """
    sims = np.asarray(sims)
    batch = sims.shape[1]
    if batch < n + 1:
        raise InvariantError(f"batch of {batch} too small for {n} negatives")
    rng = as_rng(rng)
    row = sims[i].astype(np.float64, copy=True)
    row[i] = -np.inf
    hardest = int(np.argmax(row))  # argmax returns the first (lowest) index on ties
    chosen = [hardest]
    if n > 1:
        pool = [j for j in range(batch) if j != i and j != hardest]
        positions = _uniform_without_replacement(rng, len(pool), n - 1)
        chosen.extend(pool[p] for p in positions)
    return chosen


def _select_all(sims: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """select_negatives for every anchor, ascending; returns (B, n) indices.

    Fast path with the same draws: the hardest negatives come from one masked
    argmax, and the per-anchor uniform draws consume the generator exactly as
    the per-anchor select_negatives calls would.
    """
    batch = sims.shape[0]
    if batch < n + 1:
        raise InvariantError(f"batch of {batch} too small for {n} negatives")
    masked = np.array(sims, dtype=np.float64)
    np.fill_diagonal(masked, -np.inf)
    hardest = np.argmax(masked, axis=1)  # first max = lowest index on ties
    out = np.empty((batch, n), dtype=np.intp)
    out[:, 0] = hardest
    if n > 1:
        for i in range(batch):
            # pool = ascending indices excluding i and hardest[i]
            lo, hi = sorted((i, int(hardest[i])))
            for col, p in enumerate(_uniform_without_replacement(rng, batch - 2, n - 1)):
                v = p + (p >= lo)
                out[i, col + 1] = v + (v >= hi)
    return out


def ranking_loss_with_grad(
    a: np.ndarray, b: np.ndarray, margin: float, n_negatives: int, rng
) -> tuple[float, np.ndarray, np.ndarray]:
    """Triplet ranking loss h and its gradients wrt both vector batches.

    Per anchor i the loss sums, over negatives selected independently for each
    direction, ``max(0, margin - sim(a_i,b_i) + sim(a_j,b_i))`` for a-side
    negatives ``a_j`` and ``max(0, margin - sim(a_i,b_i) + sim(a_i,b_j))`` for
    b-side negatives ``b_j``; the batch value is the mean over anchors.

    The generator is consumed in a fixed order (all a-side selections for
    anchors 0..B-1, then all b-side selections), so a given seed fully
    determines the value.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"ranking loss: shapes {a.shape} vs {b.shape}")
    batch = a.shape[0]
    if batch < 2:
        raise InvariantError("ranking loss needs a batch of at least 2")
    rng = as_rng(rng)

    ahat, anorm = _unit_rows(a, "anchor batch")
    bhat, bnorm = _unit_rows(b, "paired batch")
    sims = ahat @ bhat.T  # sims[i, j] = sim(a_i, b_j)
    pos = np.diag(sims).copy()

    neg_a = _select_all(sims.T, n_negatives, rng)  # sims.T[i, j] = sim(a_j, b_i)
    neg_b = _select_all(sims, n_negatives, rng)

    dsims = np.zeros_like(sims)
    total = 0.0
    w = 1.0 / batch
    rows = np.repeat(np.arange(batch), n_negatives)

    # a-side: terms margin - pos_i + sim(a_j, b_i)
    t_a = margin - pos[rows] + sims[neg_a.ravel(), rows]
    act = t_a > 0.0
    total += float(t_a[act].sum())
    np.add.at(dsims, (neg_a.ravel()[act], rows[act]), w)
    np.add.at(dsims, (rows[act], rows[act]), -w)

    # b-side: terms margin - pos_i + sim(a_i, b_j)
    t_b = margin - pos[rows] + sims[rows, neg_b.ravel()]
    act = t_b > 0.0
    total += float(t_b[act].sum())
    np.add.at(dsims, (rows[act], neg_b.ravel()[act]), w)
    np.add.at(dsims, (rows[act], rows[act]), -w)

    # back through sims = ahat @ bhat.T, then through row normalization
    da_hat = dsims @ bhat
    db_hat = dsims.T @ ahat
    da = (da_hat - (da_hat * ahat).sum(axis=1, keepdims=True) * ahat) / anorm[:, None]
    db = (db_hat - (db_hat * bhat).sum(axis=1, keepdims=True) * bhat) / bnorm[:, None]
    return total * w, da, db


def ranking_loss_h(batch: Batch, cfg: LossConfig, rng) -> float:
    """Value of the two-direction triplet ranking loss on a paired batch."""
    loss, _, _ = ranking_loss_with_grad(batch.a, batch.b, cfg.margin, cfg.n_negatives, rng)
    return loss


def cycle_loss_with_grad(
    y_s: np.ndarray,
    y_t: np.ndarray,
    f_map: np.ndarray,
    g_map: np.ndarray,
    cfg: LossConfig,
    rng,
):
    """Round-trip reconstruction ranking loss and gradients.

    Value is ``h(y_s, G(F(y_s))) + h(F(G(y_t)), y_t)``; each term draws its
    negatives from its own batch. Returns (loss, dy_s, dy_t, dF, dG).
    """
    rng = as_rng(rng)
    y_s = np.asarray(y_s, dtype=np.float64)
    y_t = np.asarray(y_t, dtype=np.float64)

    u = y_s @ f_map.T  # F(y_s)
    v = u @ g_map.T  # G(F(y_s))
    l1, dy_s, dv = ranking_loss_with_grad(y_s, v, cfg.margin, cfg.n_negatives, rng)
    dg = dv.T @ u
    du = dv @ g_map
    df = du.T @ y_s
    dy_s = dy_s + du @ f_map

    w = y_t @ g_map.T  # G(y_t)
    z = w @ f_map.T  # F(G(y_t))
    l2, dz, dy_t = ranking_loss_with_grad(z, y_t, cfg.margin, cfg.n_negatives, rng)
    df += dz.T @ w
    dw = dz @ f_map
    dg += dw.T @ y_t
    dy_t = dy_t + dw @ g_map

    return l1 + l2, dy_s, dy_t, df, dg


def cycle_loss(y_s, y_t, maps, cfg: LossConfig, rng) -> float:
    """Value of the cycle-consistency loss for CycleMaps ``maps``."""
    loss, *_ = cycle_loss_with_grad(y_s, y_t, maps.forward, maps.backward, cfg, rng)
    return loss


def discriminator_scores_with_grad(disc, y: np.ndarray):
    """Critic scores for a batch plus the cache needed for backprop."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[1] != disc.w1.shape[1]:
        raise DimensionError(f"discriminator expects dim {disc.w1.shape[1]}, got {y.shape[1]}")
    pre = y @ disc.w1.T + disc.b1
    act = np.where(pre > 0.0, pre, disc.leaky_slope * pre)
    scores = act @ disc.w2 + disc.b2
    return scores, (y, pre, act)


def discriminator_backward(disc, cache, dscores: np.ndarray):
    """Gradients of sum(dscores * scores) wrt critic parameters and inputs."""
    y, pre, act = cache
    slope = np.where(pre > 0.0, 1.0, disc.leaky_slope)
    dact = dscores[:, None] * disc.w2[None, :]
    dpre = dact * slope
    grads = {
        "w1": dpre.T @ y,
        "b1": dpre.sum(axis=0),
        "w2": act.T @ dscores,
        "b2": np.array(dscores.sum()),
    }
    dy = dpre @ disc.w1
    return grads, dy


def discriminator_loss(y_s, y_t, disc) -> float:
    """Critic objective: mean score of the source batch minus the target batch."""
    ss, _ = discriminator_scores_with_grad(disc, np.asarray(y_s, dtype=np.float64))
    st, _ = discriminator_scores_with_grad(disc, np.asarray(y_t, dtype=np.float64))
    if ss.size == 0 or st.size == 0:
        raise InvariantError("discriminator loss needs nonempty batches")
    return float(ss.mean() - st.mean())


def adversarial_loss(y_s, y_t, disc) -> float:
    """Encoder-side objective: exactly the negated discriminator loss."""
    return -discriminator_loss(y_s, y_t, disc)


def unsupervised_loss(y_s, y_t, model, cfg: LossConfig, rng) -> float:
    """Combined objective ``L_adv + cycle_weight * L_cycle`` of the full model."""
    if model.disc is None or model.cycle is None:
        raise InvariantError("unsupervised loss needs a discriminator and cycle maps")
    adv = adversarial_loss(y_s, y_t, model.disc)
    cyc = cycle_loss(y_s, y_t, model.cycle, cfg, rng)
    return adv + cfg.cycle_weight * cyc


def supervised_loss(y_s, y_t, cfg: LossConfig, rng) -> float:
    """Ranking loss on index-aligned translation pairs."""
    return ranking_loss_h(Batch(y_s, y_t), cfg, rng)
