"""Metrics and experiment drivers: mining F1, retrieval P@1, Spearman, sweeps.

Drivers operate on feature files plus gold files and never touch raw text.
Gold pairs are sets of (src_id, trg_id); retrieval gold is a dict mapping
every source id to its translation's id; STS gold maps a pair id to a human
similarity score.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import miner
from .errors import InvariantError
from .feature_store import FeatureSet, select_layers
from .model import encode_features, init_model
from .trainer import PairCorpus, TrainConfig, train_multipair


@dataclass
class GoldAlignment:
    """Reference translation pairs for mining evaluation."""

    pairs: set[tuple[int, int]]

    @classmethod
    def from_file(cls, path) -> "GoldAlignment":
        return cls(miner.read_gold(path))


@dataclass
class EvalReport:
    """One evaluation outcome: a task label, its metrics, and the config used."""

    task: str
    metrics: dict[str, float]
    threshold: float | None = None
    config: dict = field(default_factory=dict)

    def to_record(self) -> str:
        parts = [f"task={self.task}"]
        for key, value in self.metrics.items():
            parts.append(f"{key}={value!r}")
        if self.threshold is not None:
            parts.append(f"threshold={self.threshold!r}")
        for key, value in sorted(self.config.items()):
            parts.append(f"cfg.{key}={value}")
        return " ".join(parts)


def format_report_table(reports: list[EvalReport]) -> str:
    """Aligned, human-readable table of reports."""
    metric_names: list[str] = []
    for r in reports:
        for m in r.metrics:
            if m not in metric_names:
                metric_names.append(m)
    header = ["task"] + metric_names + ["threshold"]
    rows = [header]
    for r in reports:
        row = [r.task]
        for m in metric_names:
            row.append("" if m not in r.metrics else f"{r.metrics[m]:.4f}")
        row.append("" if r.threshold is None else f"{r.threshold:.6f}")
        rows.append(row)
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_reports(path, reports: list[EvalReport]) -> None:
    """Aligned table followed by one machine-readable record per report."""
    with open(path, "w") as f:
        f.write(format_report_table(reports))
        f.write("\n")
        for r in reports:
            f.write(r.to_record() + "\n")


# --- metrics ------------------------------------------------------------------

def f1(predicted: set[tuple[int, int]], gold: set[tuple[int, int]]):
    """(precision, recall, F1); empty predictions score zero by convention."""
    if not gold:
        raise InvariantError("gold set is empty")
    if not predicted:
        return 0.0, 0.0, 0.0
    correct = len(predicted & gold)
    precision = correct / len(predicted)
    recall = correct / len(gold)
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


def p_at_1(predicted: dict[int, int], gold: dict[int, int]) -> float:
    """Fraction of gold sources whose retrieved target matches; missing is wrong."""
    if not gold:
        raise InvariantError("gold bijection is empty")
    hits = sum(1 for src, trg in gold.items() if predicted.get(src) == trg)
    return hits / len(gold)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    sorted_vals = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # average rank, 1-based
        i = j + 1
    return ranks


def spearman(sims, gold_scores) -> float:
    """Rank correlation with average-rank tie handling."""
    a = np.asarray(sims, dtype=np.float64)
    b = np.asarray(gold_scores, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InvariantError("spearman needs two equal-length 1-D lists")
    if len(a) < 2:
        raise InvariantError("spearman needs at least 2 observations")
    ra, rb = _average_ranks(a), _average_ranks(b)
    sa, sb = ra.std(), rb.std()
    if sa == 0.0 or sb == 0.0:
        raise InvariantError("spearman undefined: zero rank variance")
    return float(((ra - ra.mean()) * (rb - rb.mean())).mean() / (sa * sb))


# --- drivers ------------------------------------------------------------------

@dataclass
class MiningTask:
    """One mining evaluation: two feature sets plus their gold alignment."""

    label: str
    src: FeatureSet
    trg: FeatureSet
    gold: set[tuple[int, int]]


def _as_gold(gold) -> set[tuple[int, int]]:
    return gold.pairs if isinstance(gold, GoldAlignment) else set(gold)


def _encode_index(model, fs: FeatureSet) -> miner.EmbeddingIndex:
    ids, vectors = encode_features(model, fs)
    return miner.build_index((ids, vectors))


def mine_scored_pairs(model, src_fs, trg_fs, cfg: miner.MiningConfig):
    """Encode both sides and produce margin-scored candidates."""
    return miner.mine_candidates(_encode_index(model, src_fs), _encode_index(model, trg_fs), cfg)


def run_mining_eval(model, src_fs, trg_fs, gold, cfg: miner.MiningConfig, label="mining") -> EvalReport:
    """Encode, mine, optimize the threshold against gold, report P/R/F1."""
    gold = _as_gold(gold)
    pairs = mine_scored_pairs(model, src_fs, trg_fs, cfg)
    tau, _ = miner.optimize_threshold(pairs, gold)
    kept = {(p.src_id, p.trg_id) for p in miner.apply_threshold(pairs, tau)}
    precision, recall, score = f1(kept, gold)
    return EvalReport(
        task=label,
        metrics={"precision": precision, "recall": recall, "f1": score},
        threshold=tau,
        config={"k": cfg.k, "margin_kind": cfg.margin_kind, "direction": cfg.direction},
    )


def run_retrieval_eval(model, src_fs, trg_fs, gold: dict[int, int], label="retrieval") -> EvalReport:
    """Encode, retrieve the top-1 target by plain cosine, report accuracy."""
    hits = miner.retrieve_top1(_encode_index(model, src_fs), _encode_index(model, trg_fs))
    predicted = {p.src_id: p.trg_id for p in hits}
    return EvalReport(task=label, metrics={"accuracy": p_at_1(predicted, gold)})


def run_sts_eval(model, fs_a, fs_b, gold_scores: dict[int, float], label="sts") -> EvalReport:
    """Cosine of encoded pairs against human scores, as Spearman correlation."""
    ids_a, ya = encode_features(model, fs_a)
    ids_b, yb = encode_features(model, fs_b)
    pos_a = {int(i): k for k, i in enumerate(ids_a)}
    pos_b = {int(i): k for k, i in enumerate(ids_b)}
    sims, golds = [], []
    for pid, score in sorted(gold_scores.items()):
        if pid not in pos_a or pid not in pos_b:
            raise InvariantError(f"sts pair id {pid} missing from the feature sets")
        a, b = ya[pos_a[pid]], yb[pos_b[pid]]
        sims.append(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
        golds.append(score)
    return EvalReport(task=label, metrics={"spearman": spearman(sims, golds)})


def threshold_transfer(model, pivot: MiningTask, others: list[MiningTask], cfg: miner.MiningConfig):
    """F1 under each task's own optimal threshold versus the pivot's threshold.

    Returns a list of (task label, optimized report, transferred report); the
    first entry is the pivot evaluated against itself.
    """
    if not others:
        raise InvariantError("threshold_transfer needs at least one non-pivot task")
    pivot_pairs = mine_scored_pairs(model, pivot.src, pivot.trg, cfg)
    pivot_tau, _ = miner.optimize_threshold(pivot_pairs, pivot.gold)

    results = []
    for task in [pivot] + list(others):
        pairs = mine_scored_pairs(model, task.src, task.trg, cfg)
        tau, _ = miner.optimize_threshold(pairs, task.gold)
        own = f1({(p.src_id, p.trg_id) for p in miner.apply_threshold(pairs, tau)}, task.gold)
        piv = f1(
            {(p.src_id, p.trg_id) for p in miner.apply_threshold(pairs, pivot_tau)}, task.gold
        )
        results.append(
            (
                task.label,
                EvalReport(f"{task.label}/optimized", {"f1": own[2]}, threshold=tau),
                EvalReport(f"{task.label}/transferred", {"f1": piv[2]}, threshold=pivot_tau),
            )
        )
    return results


ABLATION_LOSSES = ("adversarial", "cycle", "combined", "supervised")
ABLATION_COMPONENTS = ("combination", "map", "both")


def _cell_config(base: TrainConfig, loss_variant: str) -> TrainConfig:
    if loss_variant == "supervised":
        return replace(base, mode="supervised", use_adversarial=True, use_cycle=True)
    return replace(
        base,
        mode="unsupervised",
        use_adversarial=loss_variant in ("adversarial", "combined"),
        use_cycle=loss_variant in ("cycle", "combined"),
    )


def train_and_score(
    train_pair: PairCorpus,
    eval_pair: PairCorpus,
    cfg: TrainConfig,
    use_layer_combination: bool = True,
    use_linear_map: bool = True,
    hidden: int | None = None,
) -> float:
    """Train a fresh model under ``cfg`` and return held-out retrieval accuracy."""
    d = train_pair.features_s.dim
    model = init_model(
        n_layers=train_pair.features_s.n_layers,
        d_in=d,
        mode=cfg.mode,
        seed=cfg.seed,
        hidden=hidden,
        use_layer_combination=use_layer_combination,
        use_linear_map=use_linear_map,
    )
    train_multipair([train_pair], model, cfg)
    gold = {int(i): int(i) for i in eval_pair.features_s.ids}
    return run_retrieval_eval(model, eval_pair.features_s, eval_pair.features_t, gold).metrics[
        "accuracy"
    ]


def ablation_suite(
    train_pair: PairCorpus,
    eval_pair: PairCorpus,
    base_cfg: TrainConfig,
    seeds=(0,),
) -> list[EvalReport]:
    """The 12-cell grid {adv, cycle, adv+cycle, supervised} x {combination, map, both}.

    Each cell reports the median held-out accuracy over the given seeds.
    """
    reports = []
    for loss_variant in ABLATION_LOSSES:
        for component in ABLATION_COMPONENTS:
            accs = []
            for seed in seeds:
                cfg = replace(_cell_config(base_cfg, loss_variant), seed=int(seed))
                accs.append(
                    train_and_score(
                        train_pair,
                        eval_pair,
                        cfg,
                        use_layer_combination=component in ("combination", "both"),
                        use_linear_map=component in ("map", "both"),
                    )
                )
            reports.append(
                EvalReport(
                    task=f"ablation/{loss_variant}/{component}",
                    metrics={"accuracy": float(np.median(accs))},
                    config={"seeds": len(seeds)},
                )
            )
    return reports


def layer_sweep(
    train_pair: PairCorpus,
    eval_pair: PairCorpus,
    cfg: TrainConfig,
    layers,
) -> list[EvalReport]:
    """Train and evaluate on each single-layer view of the feature sets."""
    reports = []
    for layer in layers:
        tp = PairCorpus(
            select_layers(train_pair.features_s, [layer]),
            select_layers(train_pair.features_t, [layer]),
            paired=train_pair.paired,
        )
        ep = PairCorpus(
            select_layers(eval_pair.features_s, [layer]),
            select_layers(eval_pair.features_t, [layer]),
            paired=eval_pair.paired,
        )
        acc = train_and_score(tp, ep, cfg)
        reports.append(EvalReport(task=f"layer/{layer}", metrics={"accuracy": acc}))
    return reports


def read_sts_gold(path) -> dict[int, float]:
    """STS gold file: id<TAB>score per line."""
    gold: dict[int, float] = {}
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise InvariantError(f"{path}:{line_no}: expected 2 tab-separated fields")
            gold[int(parts[0])] = float(parts[1])
    return gold
