"""Layer sweeps and threshold transfer on small synthetic instances.

The layer sweep trains one model per single-layer view; the layer generated
with the least noise wins. Threshold transfer mines three language pairs from
one generator family and reuses the pivot pair's calibrated threshold, which
costs at most a small F1 drop.
"""

import numpy as np

from xlalign import (
    MiningConfig,
    MiningTask,
    SynthConfig,
    TrainConfig,
    generate,
    init_model,
    layer_sweep,
    threshold_transfer,
    train_supervised,
)
from xlalign.evaluation import format_report_table
from xlalign.feature_store import subset_by_ids
from xlalign.trainer import PairCorpus

# --- layer sweep: layer 1 is generated cleanest and should win ---------------
cfg = SynthConfig(
    latent_dim=8, dim=16, n_layers=3, n_sentences=400, noise=0.02,
    layer_noise_profile=(1.2, 0.0, 1.2), transform_divergence=0.2, seed=4,
)
corpus = generate(cfg)
train_ids, held_ids = np.arange(300), np.arange(300, 400)
src, trg = corpus.language("src"), corpus.language("trg")
train = PairCorpus(subset_by_ids(src, train_ids), subset_by_ids(trg, train_ids), paired=True)
held = PairCorpus(subset_by_ids(src, held_ids), subset_by_ids(trg, held_ids), paired=True)

tc = TrainConfig(mode="supervised", total_steps=150, batch_size=64, seed=0)
reports = layer_sweep(train, held, tc, layers=[0, 1, 2])
print("single-layer sweep (layer 1 planted cleanest):")
print(format_report_table(reports))

# --- threshold transfer across three pairs -----------------------------------
cfg = SynthConfig(
    latent_dim=8, dim=16, n_layers=2, n_sentences=600, noise=0.15,
    transform_divergence=0.1, languages=("src", "t1", "t2", "t3"), seed=5,
)
corpus = generate(cfg)
train_ids, held_ids = np.arange(400), np.arange(400, 600)
model = init_model(n_layers=cfg.n_layers, d_in=cfg.dim, mode="supervised")
pair = PairCorpus(
    subset_by_ids(corpus.language("src"), train_ids),
    subset_by_ids(corpus.language("t1"), train_ids),
    paired=True,
)
train_supervised(pair, model, TrainConfig(mode="supervised", total_steps=300, batch_size=64, seed=1))

gold = {(int(i), int(i)) for i in held_ids}
tasks = [
    MiningTask(f"src-{t}", subset_by_ids(corpus.language("src"), held_ids),
               subset_by_ids(corpus.language(t), held_ids), gold)
    for t in ("t1", "t2", "t3")
]
print("threshold transfer (pivot: src-t1):")
for label, optimized, transferred in threshold_transfer(model, tasks[0], tasks[1:], MiningConfig(k=4)):
    gap = optimized.metrics["f1"] - transferred.metrics["f1"]
    print(f"  {label}: optimized F1 {optimized.metrics['f1']:.3f} "
          f"(tau {optimized.threshold:.4f}), transferred F1 {transferred.metrics['f1']:.3f}, "
          f"gap {gap:.3f}")
