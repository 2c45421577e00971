"""Adam training loops for the alignment head.

Unsupervised training alternates ``kappa`` critic updates (each on a fresh
batch from both languages) with one encoder + cycle-map update on the combined
loss. Supervised training takes one Adam step per aligned batch. Multi-pair
training cycles through the corpora round-robin; the single-pair entry points
are the one-corpus special case of the same loop, so they are step-for-step
identical to it.

Everything is deterministic given the run seed: batch order comes from
per-epoch permutations keyed by (seed, corpus, language, epoch), and negative
sampling inside the losses is keyed by (seed, step). Checkpoints carry the
optimizer moments and those counters, so a resumed run continues bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from .errors import HeaderMismatchError, InvariantError
from .feature_store import FeatureSet
from .losses import LossConfig, adversarial_loss, cycle_loss
from .model import AlignmentModel, read_model, trainable_parameters, write_model

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# spawn-key namespaces under the run seed
_NS_SAMPLER = 3
_NS_LOSS = 4

TRACE_COLUMNS = ("step", "loss_disc", "loss_adv", "loss_cycle", "loss_total")


@dataclass
class TrainConfig:
    """Hyperparameters of one training run.

    Documented defaults: lr 0.001; mining-style runs use n_negatives=1,
    margin=0, cycle_weight=5, kappa=2; retrieval-style runs use
    n_negatives=2, margin=0.2, cycle_weight=10, kappa=2. Supervised runs use
    n_negatives=1, margin=0.
    """

    mode: str = "supervised"  # "supervised" | "unsupervised"
    margin: float = 0.0
    n_negatives: int = 1
    cycle_weight: float = 5.0
    kappa: int = 2
    lr: float = 0.001
    critic_lr: float | None = None  # None: same as lr
    batch_size: int = 128
    total_steps: int = 2000
    seed: int = 0
    clip: float | None = None
    use_adversarial: bool = True
    use_cycle: bool = True

    def __post_init__(self):
        if self.mode not in ("supervised", "unsupervised"):
            raise InvariantError(f"unknown mode {self.mode!r}")
        if self.mode == "unsupervised":
            if self.kappa < 1 and self.use_adversarial:
                raise InvariantError("kappa must be >= 1 in unsupervised mode")
            if not (self.use_adversarial or self.use_cycle):
                raise InvariantError("unsupervised mode needs at least one loss term")
        if self.batch_size < 2:
            raise InvariantError("batch_size must be >= 2 (ranking needs a negative)")
        if self.lr <= 0:
            raise InvariantError("lr must be positive")
        if self.total_steps < 0:
            raise InvariantError("total_steps must be >= 0")

    @property
    def loss_config(self) -> LossConfig:
        return LossConfig(self.margin, self.n_negatives, self.cycle_weight)

    @property
    def encoder_loss_kind(self) -> str:
        if self.mode == "supervised":
            return "supervised"
        if self.use_adversarial and self.use_cycle:
            return "combined"
        return "adversarial" if self.use_adversarial else "cycle"


@dataclass
class PairCorpus:
    """A bilingual corpus; ``paired`` means index-aligned translations."""

    features_s: FeatureSet
    features_t: FeatureSet
    paired: bool = False

    def __post_init__(self):
        if self.paired and len(self.features_s) != len(self.features_t):
            raise InvariantError(
                f"paired corpus sides differ: {len(self.features_s)} vs {len(self.features_t)}"
            )


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
            v={k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, in place; returns the same objects."""
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1**state.t
    bc2 = 1.0 - ADAM_BETA2**state.t
    for key in sorted(grads):
        if key not in params:
            raise InvariantError(f"gradient for unknown parameter {key!r}")
        g = np.asarray(grads[key], dtype=np.float64).reshape(params[key].shape)
        m = state.m[key]
        v = state.v[key]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        params[key] -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return params, state


class EpochSampler:
    """Without-replacement batch sampler, reshuffled per epoch from the run seed.

    Batches that would spill past the epoch end are dropped; the next epoch
    starts with a fresh permutation. State is just (epoch, cursor), which
    makes checkpoints trivial.
    """

    def __init__(self, n_items, batch_size, seed, namespace, epoch=0, cursor=0):
        if batch_size > n_items:
            raise InvariantError(f"batch_size {batch_size} exceeds corpus size {n_items}")
        self.n_items = int(n_items)
        self.batch_size = int(batch_size)
        self.seed = seed
        self.namespace = tuple(int(x) for x in namespace)
        self.epoch = int(epoch)
        self.cursor = int(cursor)
        self._perm_epoch = -1
        self._perm: np.ndarray | None = None

    def _permutation(self) -> np.ndarray:
        if self._perm_epoch != self.epoch:
            ss = np.random.SeedSequence(self.seed, spawn_key=self.namespace + (self.epoch,))
            self._perm = np.random.Generator(np.random.PCG64(ss)).permutation(self.n_items)
            self._perm_epoch = self.epoch
        return self._perm

    def next_batch(self) -> np.ndarray:
        if self.cursor + self.batch_size > self.n_items:
            self.epoch += 1
            self.cursor = 0
        perm = self._permutation()
        batch = perm[self.cursor : self.cursor + self.batch_size]
        self.cursor += self.batch_size
        return batch


@dataclass
class TrainState:
    """Everything beyond the parameters needed to resume a run exactly."""

    step: int
    seed: int
    enc_adam: AdamState
    disc_adam: AdamState | None
    sampler_states: list[list[tuple[int, int]]]  # per corpus, per sampler (epoch, cursor)


@dataclass
class TraceRow:
    step: int
    loss_disc: float
    loss_adv: float
    loss_cycle: float
    loss_total: float


def _loss_rng_seed(seed: int, step: int, sub: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(_NS_LOSS, step, sub))
    return np.random.Generator(np.random.PCG64(ss))


def _check_finite(value: float, step: int, what: str) -> None:
    if not np.isfinite(value):
        raise FloatingPointError(f"{what} became non-finite at step {step}: {value}")


def train_multipair(
    corpora: list[PairCorpus],
    model: AlignmentModel,
    cfg: TrainConfig,
    resume: TrainState | None = None,
) -> tuple[AlignmentModel, list[TraceRow]]:
    """Round-robin training over one or more corpora; returns (model, trace).

    The model is updated in place. With ``resume`` the loop continues from the
    stored step with the stored optimizer moments and sampler positions, which
    reproduces an uninterrupted run bit-exactly.
    """
    if not corpora:
        raise InvariantError("no corpora given")
    for c in corpora:
        if len(c.features_s) == 0 or len(c.features_t) == 0:
            raise InvariantError("empty corpus")
        if c.features_s.dim != model.d_in or c.features_t.dim != model.d_in:
            raise InvariantError("corpus dim does not match model d_in")
        if c.features_s.n_layers != model.n_layers or c.features_t.n_layers != model.n_layers:
            raise InvariantError("corpus layer count does not match model")
        if cfg.mode == "supervised" and not c.paired:
            raise InvariantError("supervised mode requires paired corpora")
    unsup = cfg.mode == "unsupervised"
    if unsup and cfg.use_cycle and model.cycle is None:
        raise InvariantError("unsupervised training needs cycle maps on the model")
    if unsup and cfg.use_adversarial and model.disc is None:
        raise InvariantError("adversarial training needs a discriminator on the model")

    arrays = [
        (c.features_s.as_array(np.float64), c.features_t.as_array(np.float64)) for c in corpora
    ]

    enc_params = trainable_parameters(model, "encoder")
    if not unsup or not cfg.use_cycle:
        enc_params.pop("cycle_forward", None)
        enc_params.pop("cycle_backward", None)
    disc_params = trainable_parameters(model, "discriminator") if unsup and cfg.use_adversarial else {}

    if resume is not None and len(resume.sampler_states) != len(corpora):
        raise InvariantError(
            f"checkpoint was trained on {len(resume.sampler_states)} corpora, got {len(corpora)}"
        )
    samplers: list[list[EpochSampler]] = []
    for ci, c in enumerate(corpora):
        if cfg.mode == "supervised":
            langs = [len(c.features_s)]
        else:
            langs = [len(c.features_s), len(c.features_t)]
        states = resume.sampler_states[ci] if resume else [(0, 0)] * len(langs)
        samplers.append(
            [
                EpochSampler(
                    n, cfg.batch_size, cfg.seed, (_NS_SAMPLER, ci, li), epoch=st[0], cursor=st[1]
                )
                for li, (n, st) in enumerate(zip(langs, states))
            ]
        )

    if resume is not None:
        if resume.seed != cfg.seed:
            raise InvariantError(
                f"checkpoint was trained with seed {resume.seed}, config says {cfg.seed}"
            )
        enc_adam = resume.enc_adam
        disc_adam = resume.disc_adam if disc_params else None
        start = resume.step
    else:
        enc_adam = AdamState.init_like(enc_params)
        disc_adam = AdamState.init_like(disc_params) if disc_params else None
        start = 0

    lcfg = cfg.loss_config
    kind = cfg.encoder_loss_kind
    trace: list[TraceRow] = []

    for step in range(start, cfg.total_steps):
        ci = step % len(corpora)
        xs_all, xt_all = arrays[ci]
        group = samplers[ci]
        loss_disc = 0.0

        if unsup and cfg.use_adversarial:
            for sub in range(cfg.kappa):
                bs = group[0].next_batch()
                bt = group[1].next_batch()
                loss_disc, dgrads = model_mod.gradients(
                    model, "discriminator", xs_all[bs], xt_all[bt], lcfg
                )
                _check_finite(loss_disc, step, "discriminator loss")
                adam_step(disc_params, dgrads, disc_adam, cfg.critic_lr or cfg.lr)
                if cfg.clip is not None:
                    for arr in disc_params.values():
                        np.clip(arr, -cfg.clip, cfg.clip, out=arr)

        if cfg.mode == "supervised":
            idx = group[0].next_batch()
            xs, xt = xs_all[idx], xt_all[idx]
        else:
            xs = xs_all[group[0].next_batch()]
            xt = xt_all[group[1].next_batch()]

        rng = _loss_rng_seed(cfg.seed, step, cfg.kappa)
        loss_total, grads = model_mod.gradients(model, kind, xs, xt, lcfg, rng)
        _check_finite(loss_total, step, "encoder loss")

        loss_adv = loss_cycle = 0.0
        if unsup:
            y_s = model_mod.encode_batch(model, xs)
            y_t = model_mod.encode_batch(model, xt)
            if cfg.use_adversarial:
                loss_adv = adversarial_loss(y_s, y_t, model.disc)
            if cfg.use_cycle:
                rng = _loss_rng_seed(cfg.seed, step, cfg.kappa)
                loss_cycle = cycle_loss(y_s, y_t, model.cycle, lcfg, rng)

        adam_step(enc_params, grads, enc_adam, cfg.lr)
        trace.append(TraceRow(step, loss_disc, loss_adv, loss_cycle, loss_total))

    model._train_state = TrainState(  # stashed for save_checkpoint
        cfg.total_steps,
        cfg.seed,
        enc_adam,
        disc_adam,
        [[(s.epoch, s.cursor) for s in group] for group in samplers],
    )
    return model, trace


def train_unsupervised(
    corpus: PairCorpus, model: AlignmentModel, cfg: TrainConfig, resume: TrainState | None = None
):
    """Adversarial + cycle training on one (possibly unpaired) corpus."""
    if cfg.mode != "unsupervised":
        raise InvariantError("cfg.mode must be 'unsupervised'")
    return train_multipair([corpus], model, cfg, resume)


def train_supervised(
    corpus: PairCorpus, model: AlignmentModel, cfg: TrainConfig, resume: TrainState | None = None
):
    """Ranking-loss training on one paired corpus."""
    if cfg.mode != "supervised":
        raise InvariantError("cfg.mode must be 'supervised'")
    if not corpus.paired:
        raise InvariantError("supervised training requires a paired corpus")
    return train_multipair([corpus], model, cfg, resume)


def write_trace_csv(path, trace: list[TraceRow]) -> None:
    with open(path, "w") as f:
        f.write(",".join(TRACE_COLUMNS) + "\n")
        for row in trace:
            f.write(
                f"{row.step},{row.loss_disc!r},{row.loss_adv!r},"
                f"{row.loss_cycle!r},{row.loss_total!r}\n"
            )


# --- checkpointing -----------------------------------------------------------

def _write_adam(f, state: AdamState) -> None:
    f.write(struct.pack("<QI", state.t, len(state.m)))
    for key in sorted(state.m):
        kb = key.encode("utf-8")
        f.write(struct.pack("<B", len(kb)))
        f.write(kb)
        arr = state.m[key]
        f.write(struct.pack("<B", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(state.v[key], dtype="<f8").tobytes())


def _read_adam(r) -> AdamState:
    t, n_keys = struct.unpack("<QI", r.take(12))
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    for _ in range(n_keys):
        (klen,) = struct.unpack("<B", r.take(1))
        key = r.take(klen).decode("utf-8")
        (ndim,) = struct.unpack("<B", r.take(1))
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        m[key] = r.array(shape)
        v[key] = r.array(shape)
    return AdamState(m, v, t)


def save_checkpoint(path, model: AlignmentModel, state: TrainState | None = None) -> None:
    """Write parameters, and when given, optimizer moments and rng counters."""
    if state is None:
        state = getattr(model, "_train_state", None)
    with open(path, "wb") as f:
        write_model(f, model, train_state=state is not None)
        if state is None:
            return
        f.write(struct.pack("<QQ", state.step, state.seed))
        f.write(struct.pack("<I", len(state.sampler_states)))
        for group in state.sampler_states:
            f.write(struct.pack("<B", len(group)))
            for epoch, cursor in group:
                f.write(struct.pack("<QQ", epoch, cursor))
        f.write(struct.pack("<B", 1 + (state.disc_adam is not None)))
        _write_adam(f, state.enc_adam)
        if state.disc_adam is not None:
            _write_adam(f, state.disc_adam)


def load_checkpoint(path) -> tuple[AlignmentModel, TrainState | None]:
    """Read a checkpoint; the TrainState is None for parameters-only files."""
    with open(path, "rb") as f:
        model, flags, r = read_model(f, path)
        if not flags & model_mod.FLAG_TRAIN_STATE:
            if f.read(1):
                raise HeaderMismatchError(f"{path}: trailing bytes after parameter blocks")
            return model, None
        step, seed = struct.unpack("<QQ", r.take(16))
        (n_corpora,) = struct.unpack("<I", r.take(4))
        sampler_states = []
        for _ in range(n_corpora):
            (n_samplers,) = struct.unpack("<B", r.take(1))
            sampler_states.append(
                [struct.unpack("<QQ", r.take(16)) for _ in range(n_samplers)]
            )
        (n_groups,) = struct.unpack("<B", r.take(1))
        enc_adam = _read_adam(r)
        disc_adam = _read_adam(r) if n_groups > 1 else None
        if f.read(1):
            raise HeaderMismatchError(f"{path}: trailing bytes after optimizer state")
    return model, TrainState(step, seed, enc_adam, disc_adam, sampler_states)
