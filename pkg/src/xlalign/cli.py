"""Command-line entry point: synth | train | mine | eval | sweep | inspect.

Every randomized command requires an explicit --seed so that artifacts are
byte-for-byte reproducible. Exit codes: 0 success, 2 usage, 3 missing or
unreadable file, 4 malformed file, 5 invariant violation, 6 a suite config's
assertion threshold failed.
"""

from __future__ import annotations

import argparse
import sys

from . import evaluation, feature_store, miner, model as model_mod, synth, trainer
from .errors import FormatError, InvariantError, XlalignError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_INVARIANT = 5
EXIT_ASSERTION = 6


def read_config_file(path) -> dict[str, str]:
    """Line-oriented key=value config; blank lines and # comments ignored."""
    out: dict[str, str] = {}
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{line_no}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=["supervised", "unsupervised"], default="supervised")
    p.add_argument("--alpha", type=float, default=0.0, help="hinge margin")
    p.add_argument("--n-neg", type=int, default=1, help="negatives per anchor and direction")
    p.add_argument("--lambda", dest="cycle_weight", type=float, default=5.0,
                   help="cycle loss weight")
    p.add_argument("--kappa", type=int, default=2, help="critic steps per encoder step")
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--clip", type=float, default=None, help="critic weight clip bound")
    p.add_argument("--d-out", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None, help="critic hidden width")
    p.add_argument("--no-layer-combination", action="store_true")
    p.add_argument("--no-linear-map", action="store_true")
    p.add_argument("--no-adversarial", action="store_true")
    p.add_argument("--no-cycle", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xlalign",
        description="Train alignment heads over frozen encoder features and mine bitext.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic feature corpus with gold alignment")
    p.add_argument("--preset", choices=["desk"], default=None,
                   help="desk = latent 16, dim 32, 4 layers, 2500 sentences, "
                        "divergence 0.15, junk subspace 8 @ 2.0")
    p.add_argument("--languages", default=None, help="comma-separated tags (default src,trg)")
    p.add_argument("--latent-dim", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--sentences", type=int, default=None)
    p.add_argument("--sigma", type=float, default=None, help="per-layer feature noise")
    p.add_argument("--divergence", type=float, default=None,
                   help="cross-language transform divergence in [0, 1]")
    p.add_argument("--nuisance-dim", type=int, default=None)
    p.add_argument("--nuisance-scale", type=float, default=None)
    p.add_argument("--hub-count", type=int, default=None)
    p.add_argument("--hub-strength", type=float, default=0.9)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train an alignment model on feature files")
    p.add_argument("--pairs", nargs="+", required=True, metavar="ALNF",
                   help="feature files, two per corpus: src1 trg1 [src2 trg2 ...]")
    p.add_argument("--paired", action="store_true",
                   help="sentences are index-aligned translations (required for supervised)")
    p.add_argument("--layers", default=None,
                   help="train on this comma-separated subset of feature layers")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="checkpoint path; loss CSV lands beside it")
    _add_train_flags(p)

    p = sub.add_parser("mine", help="mine scored candidate pairs from two feature files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features-src", required=True)
    p.add_argument("--features-trg", required=True)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--margin", choices=["ratio", "absolute"], default="ratio")
    p.add_argument("--direction", choices=["forward", "backward", "union"], default="union")
    p.add_argument("--threshold", type=float, default=None,
                   help="keep only pairs scoring at or above this value")
    p.add_argument("--workers", type=int, default=1,
                   help="threads for similarity blocks; output is identical for any value")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score mined pairs or run retrieval/STS evaluation")
    p.add_argument("--task", choices=["mining", "retrieval", "sts"], default=None)
    p.add_argument("--pairs-file", default=None, help="mined pairs (mining task)")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--features-src", default=None)
    p.add_argument("--features-trg", default=None)
    p.add_argument("--gold", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="run an ablation / layer / threshold-transfer suite")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--suite", choices=["ablation", "layers", "transfer"], default=None,
                   help="overrides suite= in the config file")
    p.add_argument("--seed", type=int, default=None, help="overrides seed= in the config file")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("inspect", help="print checkpoint header and learned layer weights")
    p.add_argument("checkpoint")
    return parser


def cmd_synth(args) -> int:
    from pathlib import Path

    # explicit flags override the preset; without a preset, generic defaults
    overrides = {}
    flag_map = [
        ("latent_dim", args.latent_dim),
        ("dim", args.dim),
        ("n_layers", args.layers),
        ("n_sentences", args.sentences),
        ("noise", args.sigma),
        ("transform_divergence", args.divergence),
        ("nuisance_dim", args.nuisance_dim),
        ("nuisance_scale", args.nuisance_scale),
    ]
    for key, val in flag_map:
        if val is not None:
            overrides[key] = val
    if args.languages is not None:
        overrides["languages"] = tuple(args.languages.split(","))
    if args.hub_count:
        overrides["hub"] = synth.HubSpec(args.hub_count, args.hub_strength)
    if args.preset == "desk":
        cfg = synth.desk_config(seed=args.seed, **overrides)
    else:
        cfg = synth.SynthConfig(seed=args.seed, **overrides)
    corpus = synth.generate_hubbed(cfg) if cfg.hub else synth.generate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for tag in cfg.languages:
        feature_store.write_features(out / f"{tag}.alnf", corpus.language(tag))
    miner.write_gold(out / "gold.tsv", corpus.gold_pairs())
    print(f"wrote {len(cfg.languages)} feature files and gold.tsv to {out}")
    return EXIT_OK


def _load_corpora(paths: list[str], paired: bool) -> list[trainer.PairCorpus]:
    if len(paths) % 2 != 0:
        raise InvariantError("--pairs wants an even number of feature files (src trg ...)")
    corpora = []
    for i in range(0, len(paths), 2):
        fs_s = feature_store.read_features(paths[i])
        fs_t = feature_store.read_features(paths[i + 1])
        corpora.append(trainer.PairCorpus(fs_s, fs_t, paired=paired))
    return corpora


def cmd_train(args) -> int:
    paired = args.paired or args.mode == "supervised"
    corpora = _load_corpora(args.pairs, paired)
    if args.layers:
        picked = [int(x) for x in args.layers.split(",")]
        corpora = [
            trainer.PairCorpus(
                feature_store.select_layers(c.features_s, picked),
                feature_store.select_layers(c.features_t, picked),
                paired=c.paired,
            )
            for c in corpora
        ]
    first = corpora[0].features_s
    cfg = trainer.TrainConfig(
        mode=args.mode,
        margin=args.alpha,
        n_negatives=args.n_neg,
        cycle_weight=args.cycle_weight,
        kappa=args.kappa,
        lr=args.lr,
        batch_size=args.batch,
        total_steps=args.steps,
        seed=args.seed,
        clip=args.clip,
        use_adversarial=not args.no_adversarial,
        use_cycle=not args.no_cycle,
    )
    model = model_mod.init_model(
        n_layers=first.n_layers,
        d_in=first.dim,
        d_out=args.d_out,
        hidden=args.hidden,
        mode=args.mode,
        seed=args.seed,
        use_layer_combination=not args.no_layer_combination,
        use_linear_map=not args.no_linear_map,
    )
    _, trace = trainer.train_multipair(corpora, model, cfg)
    trainer.save_checkpoint(args.out, model)
    trace_path = str(args.out) + ".loss.csv"
    trainer.write_trace_csv(trace_path, trace)
    print(f"trained {cfg.total_steps} steps; checkpoint {args.out}, trace {trace_path}")
    return EXIT_OK


def cmd_mine(args) -> int:
    miner.configure_workers(args.workers)
    model = model_mod.load_model(args.checkpoint)
    fs_s = feature_store.read_features(args.features_src)
    fs_t = feature_store.read_features(args.features_trg)
    cfg = miner.MiningConfig(k=args.k, margin_kind=args.margin, direction=args.direction)
    pairs = evaluation.mine_scored_pairs(model, fs_s, fs_t, cfg)
    if args.threshold is not None:
        pairs = miner.apply_threshold(pairs, args.threshold)
    miner.write_pairs(args.out, pairs)
    print(f"wrote {len(pairs)} scored pairs to {args.out}")
    return EXIT_OK


def _infer_eval_task(args) -> str:
    if args.task:
        return args.task
    return "mining" if args.pairs_file else "retrieval"


def cmd_eval(args) -> int:
    task = _infer_eval_task(args)
    if task == "mining":
        if not args.pairs_file:
            raise InvariantError("mining evaluation needs --pairs-file")
        pairs = miner.read_pairs(args.pairs_file)
        gold = miner.read_gold(args.gold)
        tau, _ = miner.optimize_threshold(pairs, gold)
        kept = {(p.src_id, p.trg_id) for p in miner.apply_threshold(pairs, tau)}
        precision, recall, score = evaluation.f1(kept, gold)
        report = evaluation.EvalReport(
            "mining",
            {"precision": precision, "recall": recall, "f1": score},
            threshold=tau,
        )
    else:
        for flag, name in [
            (args.checkpoint, "--checkpoint"),
            (args.features_src, "--features-src"),
            (args.features_trg, "--features-trg"),
        ]:
            if not flag:
                raise InvariantError(f"{task} evaluation needs {name}")
        model = model_mod.load_model(args.checkpoint)
        fs_s = feature_store.read_features(args.features_src)
        fs_t = feature_store.read_features(args.features_trg)
        if task == "retrieval":
            gold_pairs = miner.read_gold(args.gold)
            gold = {s: t for s, t in gold_pairs}
            report = evaluation.run_retrieval_eval(model, fs_s, fs_t, gold)
        else:
            gold_scores = evaluation.read_sts_gold(args.gold)
            report = evaluation.run_sts_eval(model, fs_s, fs_t, gold_scores)
    evaluation.write_reports(args.out, [report])
    print(report.to_record())
    return EXIT_OK


def _sweep_corpora(conf: dict, seed: int):
    cfg = synth.SynthConfig(
        latent_dim=int(conf.get("latent_dim", 16)),
        dim=int(conf.get("dim", 32)),
        n_layers=int(conf.get("layers", 4)),
        languages=tuple(conf.get("languages", "src,trg").split(",")),
        n_sentences=int(conf.get("sentences", 2500)),
        noise=float(conf.get("sigma", 0.01)),
        layer_noise_profile=(
            tuple(float(x) for x in conf["layer_noise_profile"].split(","))
            if "layer_noise_profile" in conf
            else None
        ),
        transform_divergence=float(conf.get("divergence", synth.DEFAULT_DIVERGENCE)),
        nuisance_dim=int(conf.get("nuisance_dim", 0)),
        nuisance_scale=float(conf.get("nuisance_scale", 0.0)),
        seed=seed,
    )
    corpus = synth.generate(cfg)
    n_train = int(conf.get("train_sentences", max(1, cfg.n_sentences - 500)))
    train_ids, held_ids = synth.split_ids(cfg, n_train)
    return cfg, corpus, train_ids, held_ids


def _sweep_train_config(conf: dict, seed: int, mode: str) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        mode=mode,
        margin=float(conf.get("alpha", 0.0)),
        n_negatives=int(conf.get("n_neg", 1)),
        cycle_weight=float(conf.get("lambda", 5.0)),
        kappa=int(conf.get("kappa", 2)),
        lr=float(conf.get("lr", 0.001)),
        batch_size=int(conf.get("batch", 128)),
        total_steps=int(conf.get("steps", 2000)),
        seed=seed,
        clip=float(conf["clip"]) if "clip" in conf else None,
    )


def cmd_sweep(args) -> int:
    miner.configure_workers(args.workers)
    conf = read_config_file(args.config)
    suite = args.suite or conf.get("suite")
    if suite not in ("ablation", "layers", "transfer"):
        raise InvariantError(f"unknown or missing suite {suite!r}")
    seed = args.seed if args.seed is not None else int(conf.get("seed", -1))
    if seed < 0:
        raise InvariantError("sweep needs --seed or seed= in the config file")
    seeds = tuple(int(s) for s in conf.get("seeds", str(seed)).split(","))

    cfg, corpus, train_ids, held_ids = _sweep_corpora(conf, seed)
    fs = {tag: corpus.language(tag) for tag in cfg.languages}
    s_tag, t_tag = cfg.languages[0], cfg.languages[1]
    sub = feature_store.subset_by_ids
    train_pair = trainer.PairCorpus(
        sub(fs[s_tag], train_ids), sub(fs[t_tag], train_ids), paired=True
    )
    held_pair = trainer.PairCorpus(
        sub(fs[s_tag], held_ids), sub(fs[t_tag], held_ids), paired=True
    )

    if suite == "ablation":
        base = _sweep_train_config(conf, seed, "unsupervised")
        reports = evaluation.ablation_suite(train_pair, held_pair, base, seeds=seeds)
    elif suite == "layers":
        base = _sweep_train_config(conf, seed, conf.get("mode", "supervised"))
        layers = [int(x) for x in conf.get("sweep_layers", "0,1,2,3").split(",")]
        reports = evaluation.layer_sweep(train_pair, held_pair, base, layers)
    else:
        model = model_mod.init_model(
            n_layers=cfg.n_layers, d_in=cfg.dim, mode="supervised", seed=seed
        )
        tc = _sweep_train_config(conf, seed, "supervised")
        trainer.train_multipair([train_pair], model, tc)
        gold = {(int(i), int(i)) for i in held_ids}
        tasks = [
            evaluation.MiningTask(
                f"{s_tag}-{tag}", sub(fs[s_tag], held_ids), sub(fs[tag], held_ids), gold
            )
            for tag in cfg.languages[1:]
        ]
        results = evaluation.threshold_transfer(
            model, tasks[0], tasks[1:], miner.MiningConfig()
        )
        reports = [r for _, opt, tra in results for r in (opt, tra)]
    evaluation.write_reports(args.out, reports)
    print(f"wrote {len(reports)} reports to {args.out}")

    # assert_min_<metric>=x entries in the config gate the exit code
    failures = []
    for key, value in conf.items():
        if not key.startswith("assert_min_"):
            continue
        metric = key[len("assert_min_"):]
        floor = float(value)
        for r in reports:
            if metric in r.metrics and r.metrics[metric] < floor:
                failures.append(f"{r.task}: {metric}={r.metrics[metric]:.4f} < {floor}")
    if failures:
        for line in failures:
            print(f"assertion failed: {line}", file=sys.stderr)
        return EXIT_ASSERTION
    return EXIT_OK


def cmd_inspect(args) -> int:
    model, state = trainer.load_checkpoint(args.checkpoint)
    weights = model_mod.layer_weights(model.extraction.layer_logits)
    print(f"checkpoint: {args.checkpoint}")
    print(
        f"layers={model.n_layers} d_in={model.d_in} "
        f"d_out={model.extraction.weight.shape[0]}"
    )
    print(f"layer_combination={model.use_layer_combination} linear_map={model.use_linear_map}")
    print(f"cycle_maps={'yes' if model.cycle else 'no'} "
          f"discriminator={'yes' if model.disc else 'no'}")
    if model.disc is not None:
        print(f"critic_hidden={model.disc.w1.shape[0]} leaky_slope={model.disc.leaky_slope}")
    if state is not None:
        print(f"train_state: step={state.step} seed={state.seed}")
    print("learned layer weights:")
    for i, w in enumerate(weights):
        print(f"  layer {i}: {w:.6f}")
    return EXIT_OK


_HANDLERS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "mine": cmd_mine,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "inspect": cmd_inspect,
}


def dispatch(argv: list[str]) -> int:
    """Parse argv and run the chosen subcommand, mapping failures to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return _HANDLERS[args.command](args)
    except FileNotFoundError as e:
        print(f"error: missing file: {e.filename or e}", file=sys.stderr)
        return EXIT_IO
    except PermissionError as e:
        print(f"error: cannot access {e.filename or e}", file=sys.stderr)
        return EXIT_IO
    except FormatError as e:
        print(f"error: malformed file: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except (InvariantError, XlalignError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVARIANT


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
