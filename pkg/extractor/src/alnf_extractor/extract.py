"""Run a pretrained encoder over a text corpus and pool hidden states into ALNF.

For every sentence and every selected layer the extractor stores the sum over
token positions of that layer's hidden states (the embedding layer counts as
layer 0). The backbone is never updated; inference runs in float32 with
gradients disabled. Padding positions never enter the sum; special tokens
(sentence start/end markers) are included by default and excluded with a
flag.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

from .alnf import AlnfWriter

logger = logging.getLogger(__name__)


@dataclass
class ExtractionJob:
    corpus_path: str
    model_id: str
    output_path: str
    layer_indices: list[int] | None = None  # None: every layer incl. embeddings
    batch_size: int = 32
    max_length: int = 256
    language: str = "xx"
    exclude_special_tokens: bool = False
    device: str = "cpu"


@dataclass
class ExtractionStats:
    sentences_written: int = 0
    empty_lines_skipped: int = 0
    sentences_truncated: int = 0
    n_layers: int = 0
    dim: int = 0
    layer_indices: list[int] = field(default_factory=list)


def _read_corpus(path) -> tuple[list[tuple[int, str]], int]:
    """Non-empty (line_number, sentence) pairs; line numbers are 0-based."""
    kept: list[tuple[int, str]] = []
    skipped = 0
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f):
            text = line.rstrip("\n")
            if text.strip():
                kept.append((line_no, text))
            else:
                skipped += 1
    return kept, skipped


def pool_hidden_states(
    hidden_states: tuple[torch.Tensor, ...],
    attention_mask: torch.Tensor,
    special_tokens_mask: torch.Tensor,
    layer_indices: list[int],
    exclude_special_tokens: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Sum token vectors per selected layer. Returns (B, l, d) and token counts."""
    keep = attention_mask.bool()
    if exclude_special_tokens:
        keep = keep & ~special_tokens_mask.bool()
    weights = keep.unsqueeze(-1).to(hidden_states[0].dtype)
    pooled = torch.stack(
        [(hidden_states[idx] * weights).sum(dim=1) for idx in layer_indices], dim=1
    )
    return (
        pooled.to(torch.float32).cpu().numpy(),
        keep.sum(dim=1).cpu().numpy(),
    )


def extract(job: ExtractionJob) -> ExtractionStats:
    """Encode the corpus and write one ALNF v1 file; returns run statistics."""
    tokenizer = AutoTokenizer.from_pretrained(job.model_id)
    model = AutoModel.from_pretrained(job.model_id, output_hidden_states=True)
    model = model.to(job.device).to(torch.float32).eval()

    depth = model.config.num_hidden_layers
    layers = job.layer_indices if job.layer_indices is not None else list(range(depth + 1))
    for idx in layers:
        if not 0 <= idx <= depth:
            raise ValueError(f"layer index {idx} outside [0, {depth}] (0 = embeddings)")

    sentences, skipped = _read_corpus(job.corpus_path)
    if skipped:
        logger.info("skipped %d empty lines", skipped)

    stats = ExtractionStats(
        empty_lines_skipped=skipped,
        n_layers=len(layers),
        dim=model.config.hidden_size,
        layer_indices=list(layers),
    )
    writer = AlnfWriter(job.output_path, job.language, len(layers), model.config.hidden_size)
    try:
        with torch.no_grad():
            for start in range(0, len(sentences), job.batch_size):
                batch = sentences[start : start + job.batch_size]
                texts = [text for _, text in batch]
                full_lengths = [
                    len(tokenizer(t, add_special_tokens=True)["input_ids"]) for t in texts
                ]
                enc = tokenizer(
                    texts,
                    padding=True,
                    truncation=True,
                    max_length=job.max_length,
                    return_tensors="pt",
                    return_special_tokens_mask=True,
                )
                special = enc.pop("special_tokens_mask")
                out = model(**{k: v.to(job.device) for k, v in enc.items()})
                pooled, counts = pool_hidden_states(
                    out.hidden_states,
                    enc["attention_mask"],
                    special,
                    layers,
                    job.exclude_special_tokens,
                )
                for row, (line_no, _) in enumerate(batch):
                    if full_lengths[row] > job.max_length:
                        stats.sentences_truncated += 1
                    writer.write_sentence(line_no, int(counts[row]), pooled[row])
                    stats.sentences_written += 1
    finally:
        writer.close()
    if stats.sentences_truncated:
        logger.info("truncated %d over-length sentences", stats.sentences_truncated)
    return stats
