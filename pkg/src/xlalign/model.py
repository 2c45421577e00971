"""The trainable alignment head and its analytic gradients.

The encoder is a softmax-weighted combination of per-layer pooled features
followed by an affine map; it is shared across languages. Unsupervised
training adds two pure-linear cycle maps between the language encoding spaces
and a one-hidden-layer leaky-ReLU critic emitting an unbounded scalar score.

Parameters live in plain float64 numpy arrays; all differentiation is manual
reverse mode. ``gradients`` is the single entry point the trainer uses: it
returns the loss value and a dict of gradients covering exactly the
parameters the given loss kind is allowed to update.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import losses
from .errors import BadMagicError, DimensionError, InvariantError, TruncatedError, VersionError
from .feature_store import SentenceFeatures

CHECKPOINT_MAGIC = b"ALNM"
CHECKPOINT_VERSION = 1

FLAG_LAYER_COMBINATION = 1 << 0
FLAG_LINEAR_MAP = 1 << 1
FLAG_CYCLE = 1 << 2
FLAG_DISC = 1 << 3
FLAG_TRAIN_STATE = 1 << 4

LOSS_KINDS = ("supervised", "cycle", "discriminator", "adversarial", "combined")


@dataclass
class ExtractionModule:
    """Softmax layer combination plus affine map: y = M (sum_l w_l x_l) + b."""

    layer_logits: np.ndarray  # (l,)
    weight: np.ndarray  # (d_out, d_in)
    bias: np.ndarray  # (d_out,)


@dataclass
class CycleMaps:
    """Pure linear maps between the two languages' encoding spaces."""

    forward: np.ndarray  # (d, d), source space -> target space
    backward: np.ndarray  # (d, d), target space -> source space


@dataclass
class Discriminator:
    """One-hidden-layer critic scoring language identity, no output activation."""

    w1: np.ndarray  # (h, d)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h,)
    b2: np.ndarray  # (1,), kept as an array so optimizer updates are in place
    leaky_slope: float = 0.1

    def __post_init__(self):
        self.b2 = np.atleast_1d(np.asarray(self.b2, dtype=np.float64))


@dataclass
class AlignmentModel:
    extraction: ExtractionModule
    cycle: CycleMaps | None = None
    disc: Discriminator | None = None
    use_layer_combination: bool = True
    use_linear_map: bool = True

    @property
    def n_layers(self) -> int:
        return self.extraction.layer_logits.shape[0]

    @property
    def d_in(self) -> int:
        return self.extraction.weight.shape[1]

    @property
    def d_out(self) -> int:
        if not self.use_linear_map:
            return self.d_in
        return self.extraction.weight.shape[0]

    def validate(self) -> None:
        ext = self.extraction
        for name, arr in (("layer_logits", ext.layer_logits), ("weight", ext.weight), ("bias", ext.bias)):
            if not np.isfinite(arr).all():
                raise InvariantError(f"non-finite values in extraction.{name}")
        if ext.bias.shape[0] != ext.weight.shape[0]:
            raise InvariantError("bias length must match map rows")
        if not self.use_linear_map and ext.weight.shape[0] != ext.weight.shape[1]:
            raise InvariantError("disabling the linear map requires d_out == d_in")
        if self.cycle is not None:
            d = self.d_out
            for name, arr in (("forward", self.cycle.forward), ("backward", self.cycle.backward)):
                if arr.shape != (d, d):
                    raise InvariantError(f"cycle.{name} must be ({d}, {d})")
                if not np.isfinite(arr).all():
                    raise InvariantError(f"non-finite values in cycle.{name}")
        if self.disc is not None:
            if self.disc.w1.shape[0] < 1:
                raise InvariantError("discriminator hidden width must be >= 1")
            if self.disc.w1.shape[1] != self.d_out:
                raise InvariantError("discriminator input dim must match d_out")
            for name in ("w1", "b1", "w2", "b2"):
                if not np.isfinite(getattr(self.disc, name)).all():
                    raise InvariantError(f"non-finite values in disc.{name}")


def default_hidden_width(d: int) -> int:
    """Desk-scale critic width: 8 * sqrt(d), rounded."""
    return max(1, int(round(8.0 * np.sqrt(d))))


def init_model(
    n_layers: int,
    d_in: int,
    d_out: int | None = None,
    hidden: int | None = None,
    mode: str = "unsupervised",
    seed: int = 0,
    use_layer_combination: bool = True,
    use_linear_map: bool = True,
) -> AlignmentModel:
    """Fresh model at the do-nothing point: uniform layer weights, identity maps.

    The critic is the only randomly initialized component; ``seed`` controls it.
    """
    if d_out is None:
        d_out = d_in
    theta = np.zeros(n_layers)
    if d_out == d_in:
        weight = np.eye(d_out)
    else:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(2,))))
        weight = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_out, d_in))
    bias = np.zeros(d_out)
    extraction = ExtractionModule(theta, weight, bias)

    cycle = disc = None
    if mode == "unsupervised":
        # Random cycle maps, not identity: at margin 0 the identity pair
        # (F, G) = (I, I) reconstructs exactly no matter what the encoder
        # does, so every hinge stays inactive and the cycle term would never
        # produce a gradient. Random maps make reconstruction ranking a live
        # constraint from step one.
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(1,))))
        cycle = CycleMaps(
            rng.normal(0.0, 1.0 / np.sqrt(d_out), size=(d_out, d_out)),
            rng.normal(0.0, 1.0 / np.sqrt(d_out), size=(d_out, d_out)),
        )
        # Paired +/- rows with shared output weights make each unit pair an
        # |v . y| detector at initialization: lrelu(a) + lrelu(-a) =
        # (1 - slope) |a|. Language identity in embedding clouds shows up
        # first in second moments, and an even critic sees those immediately
        # instead of having to discover them.
        h = hidden if hidden is not None else default_hidden_width(d_out)
        h += h % 2
        v = rng.normal(0.0, 1.0 / np.sqrt(d_out), size=(h // 2, d_out))
        w1 = np.empty((h, d_out))
        w1[0::2] = v
        w1[1::2] = -v
        gamma = rng.normal(0.0, 1.0 / np.sqrt(h), size=h // 2)
        w2 = np.empty(h)
        w2[0::2] = gamma
        w2[1::2] = gamma
        disc = Discriminator(w1=w1, b1=np.zeros(h), w2=w2, b2=np.zeros(1))
    elif mode != "supervised":
        raise InvariantError(f"unknown mode {mode!r}")

    model = AlignmentModel(extraction, cycle, disc, use_layer_combination, use_linear_map)
    model.validate()
    return model


def layer_weights(theta: np.ndarray) -> np.ndarray:
    """Softmax of the layer logits; positive, sums to 1, shift-invariant."""
    theta = np.asarray(theta, dtype=np.float64)
    e = np.exp(theta - theta.max())
    return e / e.sum()


def encode(model: AlignmentModel, sf: SentenceFeatures) -> np.ndarray:
    """Embed one sentence: weighted layer combination then affine map."""
    x = np.asarray(sf.layers, dtype=np.float64)
    if x.shape != (model.n_layers, model.d_in):
        raise DimensionError(
            f"sentence {sf.sentence_id}: features {x.shape}, model wants "
            f"({model.n_layers}, {model.d_in})"
        )
    return encode_batch(model, x[None, :, :])[0]


def encode_batch(model: AlignmentModel, x: np.ndarray) -> np.ndarray:
    """Embed a stacked (B, l, d_in) feature array into (B, d_out)."""
    y, _ = encode_forward(model, x)
    return y


def encode_features(model: AlignmentModel, fs) -> tuple[np.ndarray, np.ndarray]:
    """Encode a whole FeatureSet; returns (ids, embeddings)."""
    return fs.ids, encode_batch(model, fs.as_array())


def encode_forward(model: AlignmentModel, x: np.ndarray):
    """Forward pass with cache for backprop. x is (B, l, d_in) float64."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != model.n_layers or x.shape[2] != model.d_in:
        raise DimensionError(f"expected (B, {model.n_layers}, {model.d_in}), got {x.shape}")
    if model.use_layer_combination:
        w = layer_weights(model.extraction.layer_logits)
    else:
        w = np.full(model.n_layers, 1.0 / model.n_layers)
    combined = np.einsum("l,bld->bd", w, x)
    if model.use_linear_map:
        y = combined @ model.extraction.weight.T + model.extraction.bias
    else:
        y = combined
    return y, (x, w, combined)


def encode_backward(model: AlignmentModel, cache, dy: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the encoder parameters given upstream dL/dy.

    Parameters switched off by ablation flags are absent from the result.
    """
    x, w, combined = cache
    grads: dict[str, np.ndarray] = {}
    if model.use_linear_map:
        grads["weight"] = dy.T @ combined
        grads["bias"] = dy.sum(axis=0)
        dcombined = dy @ model.extraction.weight
    else:
        dcombined = dy
    if model.use_layer_combination:
        dw = np.einsum("bd,bld->l", dcombined, x)
        grads["layer_logits"] = w * (dw - float(w @ dw))  # softmax jacobian
    return grads


def discriminator_score(disc: Discriminator, y: np.ndarray) -> float:
    """Critic score of a single embedding."""
    scores, _ = losses.discriminator_scores_with_grad(disc, np.asarray(y, dtype=np.float64)[None, :])
    return float(scores[0])


def cycle_map(maps: CycleMaps, y: np.ndarray, direction: str) -> np.ndarray:
    """Map an embedding across languages: 's2t' applies F, 't2s' applies G."""
    y = np.asarray(y, dtype=np.float64)
    if direction == "s2t":
        m = maps.forward
    elif direction == "t2s":
        m = maps.backward
    else:
        raise InvariantError(f"direction must be 's2t' or 't2s', got {direction!r}")
    if y.shape[-1] != m.shape[1]:
        raise DimensionError(f"cycle map expects dim {m.shape[1]}, got {y.shape[-1]}")
    return y @ m.T


def trainable_parameters(model: AlignmentModel, group: str = "encoder") -> dict[str, np.ndarray]:
    """Live parameter arrays by name. ``group`` is 'encoder' or 'discriminator'.

    The encoder group includes the cycle maps when present; ablation flags
    remove the corresponding entries.
    """
    if group == "discriminator":
        if model.disc is None:
            return {}
        return {
            "w1": model.disc.w1,
            "b1": model.disc.b1,
            "w2": model.disc.w2,
            "b2": model.disc.b2,
        }
    params: dict[str, np.ndarray] = {}
    if model.use_layer_combination:
        params["layer_logits"] = model.extraction.layer_logits
    if model.use_linear_map:
        params["weight"] = model.extraction.weight
        params["bias"] = model.extraction.bias
    if model.cycle is not None:
        params["cycle_forward"] = model.cycle.forward
        params["cycle_backward"] = model.cycle.backward
    return params


def set_parameter(model: AlignmentModel, name: str, value: np.ndarray) -> None:
    """Overwrite one named parameter (used by the optimizer and tests)."""
    if name == "layer_logits":
        model.extraction.layer_logits = value
    elif name == "weight":
        model.extraction.weight = value
    elif name == "bias":
        model.extraction.bias = value
    elif name == "cycle_forward":
        model.cycle.forward = value
    elif name == "cycle_backward":
        model.cycle.backward = value
    elif name == "w1":
        model.disc.w1 = value
    elif name == "b1":
        model.disc.b1 = value
    elif name == "w2":
        model.disc.w2 = value
    elif name == "b2":
        model.disc.b2 = np.atleast_1d(np.asarray(value, dtype=np.float64))
    else:
        raise KeyError(name)


def gradients(
    model: AlignmentModel,
    loss_kind: str,
    batch_s: np.ndarray,
    batch_t: np.ndarray,
    cfg: losses.LossConfig,
    rng=0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss value and analytic gradients for one training step.

    ``batch_s`` and ``batch_t`` are stacked (B, l, d_in) feature arrays. The
    returned dict mirrors exactly the parameters the named loss kind trains:
    encoder parameters for 'supervised' and 'adversarial', encoder plus cycle
    maps for 'cycle' and 'combined', critic parameters for 'discriminator'.
    """
    if loss_kind not in LOSS_KINDS:
        raise InvariantError(f"unknown loss kind {loss_kind!r}")
    batch_s = np.asarray(batch_s, dtype=np.float64)
    batch_t = np.asarray(batch_t, dtype=np.float64)
    if batch_s.shape[0] == 0 or batch_t.shape[0] == 0:
        raise InvariantError("empty batch")

    y_s, cache_s = encode_forward(model, batch_s)
    y_t, cache_t = encode_forward(model, batch_t)

    def encoder_grads(dy_s, dy_t):
        gs = encode_backward(model, cache_s, dy_s)
        gt = encode_backward(model, cache_t, dy_t)
        return {k: gs[k] + gt[k] for k in gs}

    if loss_kind == "supervised":
        loss, dy_s, dy_t = losses.ranking_loss_with_grad(
            y_s, y_t, cfg.margin, cfg.n_negatives, rng
        )
        return loss, encoder_grads(dy_s, dy_t)

    if loss_kind == "cycle":
        if model.cycle is None:
            raise InvariantError("model has no cycle maps")
        loss, dy_s, dy_t, df, dg = losses.cycle_loss_with_grad(
            y_s, y_t, model.cycle.forward, model.cycle.backward, cfg, rng
        )
        grads = encoder_grads(dy_s, dy_t)
        grads["cycle_forward"] = df
        grads["cycle_backward"] = dg
        return loss, grads

    if model.disc is None:
        raise InvariantError("model has no discriminator")
    ss, dcache_s = losses.discriminator_scores_with_grad(model.disc, y_s)
    st, dcache_t = losses.discriminator_scores_with_grad(model.disc, y_t)
    disc_value = float(ss.mean() - st.mean())
    ds_s = np.full(ss.shape, 1.0 / ss.shape[0])
    ds_t = np.full(st.shape, -1.0 / st.shape[0])

    if loss_kind == "discriminator":
        g_s, _ = losses.discriminator_backward(model.disc, dcache_s, ds_s)
        g_t, _ = losses.discriminator_backward(model.disc, dcache_t, ds_t)
        return disc_value, {k: np.atleast_1d(g_s[k] + g_t[k]) for k in g_s}

    # encoder's view: L_adv = -L_disc, gradients flow through the scores into y
    _, dy_s = losses.discriminator_backward(model.disc, dcache_s, -ds_s)
    _, dy_t = losses.discriminator_backward(model.disc, dcache_t, -ds_t)
    adv_value = -disc_value

    if loss_kind == "adversarial":
        return adv_value, encoder_grads(dy_s, dy_t)

    # combined: L_adv + cycle_weight * L_cycle
    if model.cycle is None:
        raise InvariantError("model has no cycle maps")
    cyc_value, cy_s, cy_t, df, dg = losses.cycle_loss_with_grad(
        y_s, y_t, model.cycle.forward, model.cycle.backward, cfg, rng
    )
    lam = cfg.cycle_weight
    grads = encoder_grads(dy_s + lam * cy_s, dy_t + lam * cy_t)
    grads["cycle_forward"] = lam * df
    grads["cycle_backward"] = lam * dg
    return adv_value + lam * cyc_value, grads


# --- checkpoint serialization ------------------------------------------------

def _flags(model: AlignmentModel, train_state: bool) -> int:
    flags = 0
    if model.use_layer_combination:
        flags |= FLAG_LAYER_COMBINATION
    if model.use_linear_map:
        flags |= FLAG_LINEAR_MAP
    if model.cycle is not None:
        flags |= FLAG_CYCLE
    if model.disc is not None:
        flags |= FLAG_DISC
    if train_state:
        flags |= FLAG_TRAIN_STATE
    return flags


def parameter_blocks(model: AlignmentModel) -> list[tuple[str, np.ndarray]]:
    """All parameter arrays in declared serialization order."""
    ext = model.extraction
    blocks = [("layer_logits", ext.layer_logits), ("weight", ext.weight), ("bias", ext.bias)]
    if model.cycle is not None:
        blocks += [("cycle_forward", model.cycle.forward), ("cycle_backward", model.cycle.backward)]
    if model.disc is not None:
        blocks += [
            ("w1", model.disc.w1),
            ("b1", model.disc.b1),
            ("w2", model.disc.w2),
            ("b2", model.disc.b2),
        ]
    return blocks


def write_model(f, model: AlignmentModel, train_state: bool = False) -> None:
    """Write the ALNM header and parameter blocks to an open binary file."""
    model.validate()
    h = model.disc.w1.shape[0] if model.disc is not None else 0
    d_out = model.extraction.weight.shape[0]
    f.write(CHECKPOINT_MAGIC)
    f.write(
        struct.pack(
            "<IIIIII",
            CHECKPOINT_VERSION,
            _flags(model, train_state),
            model.n_layers,
            model.d_in,
            d_out,
            h,
        )
    )
    slope = model.disc.leaky_slope if model.disc is not None else 0.0
    f.write(struct.pack("<d", slope))
    for _, arr in parameter_blocks(model):
        f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, f, path):
        self.f = f
        self.path = path

    def take(self, nbytes: int) -> bytes:
        blob = self.f.read(nbytes)
        if len(blob) != nbytes:
            raise TruncatedError(f"{self.path}: expected {nbytes} more bytes, got {len(blob)}")
        return blob

    def array(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(self.take(count * 8), dtype="<f8").reshape(shape).copy()

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def read_model(f, path="<checkpoint>") -> tuple[AlignmentModel, int, "_Reader"]:
    """Read the ALNM header and parameter blocks from an open binary file."""
    r = _Reader(f, path)
    magic = r.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    version, flags, l, d_in, d_out, h = struct.unpack("<IIIIII", r.take(24))
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    (slope,) = struct.unpack("<d", r.take(8))

    extraction = ExtractionModule(r.array((l,)), r.array((d_out, d_in)), r.array((d_out,)))
    cycle = disc = None
    if flags & FLAG_CYCLE:
        cycle = CycleMaps(r.array((d_out, d_out)), r.array((d_out, d_out)))
    if flags & FLAG_DISC:
        disc = Discriminator(
            r.array((h, d_out)),
            r.array((h,)),
            r.array((h,)),
            r.array((1,)),
            leaky_slope=slope,
        )
    model = AlignmentModel(
        extraction,
        cycle,
        disc,
        use_layer_combination=bool(flags & FLAG_LAYER_COMBINATION),
        use_linear_map=bool(flags & FLAG_LINEAR_MAP),
    )
    model.validate()
    return model, flags, r


def save_model(path, model: AlignmentModel) -> None:
    """Write a parameters-only checkpoint."""
    with open(path, "wb") as f:
        write_model(f, model)


def load_model(path) -> AlignmentModel:
    """Read a checkpoint, ignoring any optimizer state it may carry."""
    with open(path, "rb") as f:
        model, _, _ = read_model(f, path)
    return model
