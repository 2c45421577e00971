"""CLI: dump per-layer pooled encoder features for a text corpus into ALNF."""

from __future__ import annotations

import argparse
import logging
import sys

from .extract import ExtractionJob, extract


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="alnf-extract",
        description="Pool per-layer hidden states of a pretrained encoder into an ALNF file.",
    )
    p.add_argument("--corpus", required=True, help="UTF-8 text, one sentence per line")
    p.add_argument("--model", required=True, help="model hub identifier or local path")
    p.add_argument("--layers", default=None,
                   help="comma-separated layer indices, 0 = embedding layer "
                        "(default: all layers)")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--max-len", type=int, default=256)
    p.add_argument("--language", default="xx", help="language tag stored in the file")
    p.add_argument("--exclude-special", action="store_true",
                   help="drop sentence start/end markers from the token sum")
    p.add_argument("--device", default="cpu")
    p.add_argument("--out", required=True, help="output .alnf path")
    return p


def main(argv=None) -> None:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    layers = None
    if args.layers:
        layers = [int(x) for x in args.layers.split(",")]
    job = ExtractionJob(
        corpus_path=args.corpus,
        model_id=args.model,
        output_path=args.out,
        layer_indices=layers,
        batch_size=args.batch,
        max_length=args.max_len,
        language=args.language,
        exclude_special_tokens=args.exclude_special,
        device=args.device,
    )
    try:
        stats = extract(job)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        sys.exit(1)
    print(
        f"wrote {stats.sentences_written} sentences "
        f"({stats.n_layers} layers x {stats.dim} dims) to {args.out}; "
        f"{stats.empty_lines_skipped} empty lines skipped, "
        f"{stats.sentences_truncated} truncated"
    )


if __name__ == "__main__":
    main()
