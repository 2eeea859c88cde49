"""Single executable for the whole pipeline.

Subcommands: prepare, split, mix, synth, train, eval, grid, predict,
augment, mine, report. Configuration precedence is defaults < --config file
< explicit flags; every run funnels its randomness through one seed, and
every output artifact gets a `<name>.run.json` sidecar recording the
resolved configuration (JSON artifacts additionally embed it under
"run_config").

Relative paths resolve under $MDER_DATA_DIR when that variable is set.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

from . import augment as augment_mod
from . import mining, train as train_mod
from .corpus import (
    SplitSpec,
    SyntheticSpec,
    build_mixed,
    builtin_grammar,
    corpus_from_text,
    generate_synthetic,
    load_corpus,
    split_corpus,
    write_corpus,
)
from .errors import ConfigurationError, MderError
from .model import (
    AblationFlags,
    ModelConfig,
    lexicon_fingerprint,
    load_checkpoint,
    save_checkpoint,
)
from .rules import default_lexicon, load_lexicon_dir
from .train import TrainConfig, aggregate_reports, evaluate, grid as run_grid

PROG = "mder"


def resolve_path(p: str) -> Path:
    path = Path(p)
    base = os.environ.get("MDER_DATA_DIR")
    if base and not path.is_absolute():
        return Path(base) / path
    return path


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with resolve_path(path).open(encoding="utf-8") as fh:
        cfg = json.load(fh)
    unknown = set(cfg) - {"model", "train"}
    if unknown:
        raise ConfigurationError(
            f"config file has unknown sections {sorted(unknown)}"
        )
    return cfg


def _model_config(args) -> ModelConfig:
    cfg = ModelConfig().to_dict()
    cfg.update(_load_config_file(getattr(args, "config", None)).get("model", {}))
    return ModelConfig.from_dict(cfg)


def _train_config(args) -> TrainConfig:
    cfg = {
        "batch_size": 16,
        "learning_rate": 0.001,
        "dropout": 0.5,
        "max_epochs": 50,
        "patience": 10,
    }
    cfg.update(_load_config_file(getattr(args, "config", None)).get("train", {}))
    for flag, key in (
        ("batch_size", "batch_size"),
        ("learning_rate", "learning_rate"),
        ("dropout", "dropout"),
        ("max_epochs", "max_epochs"),
        ("patience", "patience"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    return TrainConfig(
        seed=args.seed,
        ablation=AblationFlags.from_names(getattr(args, "ablation", None) or []),
        **cfg,
    )


def _lexicon(args):
    lexicon_dir = getattr(args, "lexicon_dir", None)
    if lexicon_dir:
        return load_lexicon_dir(resolve_path(lexicon_dir))
    return default_lexicon()


def _run_config(args, command: str) -> dict:
    info = {"command": command, "seed": getattr(args, "seed", None)}
    for key, value in sorted(vars(args).items()):
        if key in ("func", "command"):
            continue
        info[key] = str(value) if isinstance(value, Path) else value
    try:
        info["model"] = _model_config(args).to_dict()
    except ConfigurationError:
        pass
    return info


def _atomic_write_text(out_path: Path, text: str) -> None:
    tmp = out_path.with_name(out_path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(out_path)


def _write_sidecar(out_path: Path, run_config: dict) -> None:
    sidecar = out_path.with_name(out_path.name + ".run.json")
    _atomic_write_text(sidecar, json.dumps(run_config, indent=2))


def _write_json(obj: dict, out_path: Path, run_config: dict) -> None:
    obj = dict(obj)
    obj["run_config"] = run_config
    _atomic_write_text(out_path, json.dumps(obj, indent=2))
    _write_sidecar(out_path, run_config)


def _parse_ratio(value: str) -> tuple[Fraction, Fraction, Fraction]:
    parts = value.split(":")
    if len(parts) != 3:
        raise ConfigurationError(f"ratio must be train:val:test, got {value!r}")
    nums = [Fraction(p) for p in parts]
    total = sum(nums)
    return tuple(n / total for n in nums)


# --------------------------------------------------------------------------
# Subcommand implementations
# --------------------------------------------------------------------------


def cmd_prepare(args) -> int:
    text = resolve_path(args.input).read_text(encoding="utf-8")
    corpus = corpus_from_text(text, resolve_path(args.out).stem)
    out = resolve_path(args.out)
    write_corpus(corpus, out)
    _write_sidecar(out, _run_config(args, "prepare"))
    print(f"wrote {len(corpus)} sentences to {out}")
    return 0


def cmd_split(args) -> int:
    corpus = load_corpus(resolve_path(args.input))
    train_f, val_f, test_f = _parse_ratio(args.ratio)
    spec = SplitSpec(train_f, val_f, test_f, seed=args.seed)
    folds = split_corpus(corpus, spec)
    out_dir = resolve_path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_config = _run_config(args, "split")
    for fold, label in zip(folds, ("train", "val", "test")):
        path = out_dir / f"{corpus.name}-{label}.jsonl"
        write_corpus(fold, path)
        _write_sidecar(path, run_config)
        print(f"{label}: {len(fold)} sentences -> {path}")
    return 0


def cmd_mix(args) -> int:
    corpora = [load_corpus(resolve_path(p)) for p in args.inputs]
    mixed = build_mixed(corpora, args.per_area, args.seed)
    out = resolve_path(args.out)
    write_corpus(mixed, out)
    _write_sidecar(out, _run_config(args, "mix"))
    print(f"wrote {len(mixed)} sentences to {out}")
    return 0


def cmd_synth(args) -> int:
    if args.grammar:
        grammar = SyntheticSpec.from_file(resolve_path(args.grammar))
    else:
        grammar = builtin_grammar(args.area)
    corpus = generate_synthetic(grammar, args.n, args.seed, name=args.name)
    out = resolve_path(args.out)
    write_corpus(corpus, out)
    _write_sidecar(out, _run_config(args, "synth"))
    print(f"wrote {len(corpus)} sentences to {out}")
    return 0


def _train_once(args, train_corpus, val_corpus, lexicon, seed):
    model_config = _model_config(args)
    train_config = _train_config(args)
    train_config.seed = seed

    def progress(entry):
        print(
            json.dumps(
                {
                    "epoch": entry.epoch,
                    "train_loss": round(entry.train_loss, 6),
                    "val_f1": round(entry.val_f1, 6),
                    "seconds": round(entry.seconds, 3),
                }
            )
        )

    return train_mod.train(
        train_corpus, val_corpus, model_config, train_config, lexicon,
        progress=progress,
    )


def cmd_train(args) -> int:
    train_corpus = load_corpus(resolve_path(args.train))
    val_corpus = load_corpus(resolve_path(args.val))
    lexicon = _lexicon(args)
    run_config = _run_config(args, "train")
    out = resolve_path(args.out)

    repeats = args.repeats or 1
    reports = []
    first_result = None
    for r in range(repeats):
        result = _train_once(args, train_corpus, val_corpus, lexicon, args.seed + r)
        if first_result is None:
            first_result = result
        if args.test:
            test_corpus = load_corpus(resolve_path(args.test))
            reports.append(
                evaluate(result.model, result.vocab, test_corpus, lexicon)
            )

    save_checkpoint(
        out,
        first_result.model,
        first_result.vocab,
        lexicon_fp=lexicon_fingerprint(lexicon),
        run_config=run_config,
    )
    _write_sidecar(out, run_config)
    summary = {"train_report": first_result.report.to_dict()}
    if reports:
        summary["test"] = [r.to_dict() for r in reports]
        summary["test_aggregate"] = aggregate_reports(reports)
    _write_json(summary, out.with_name(out.name + ".report.json"), run_config)
    print(f"checkpoint -> {out}")
    return 0


def cmd_eval(args) -> int:
    model, vocab, _ = load_checkpoint(resolve_path(args.checkpoint))
    corpus = load_corpus(resolve_path(args.corpus))
    report = evaluate(model, vocab, corpus, _lexicon(args))
    out = resolve_path(args.out)
    _write_json(report.to_dict(), out, _run_config(args, "eval"))
    print(json.dumps({"precision": report.precision, "recall": report.recall,
                      "f1": report.f1}))
    return 0


def cmd_grid(args) -> int:
    corpora = [load_corpus(resolve_path(p)) for p in args.inputs]
    report = run_grid(
        corpora,
        _model_config(args),
        _train_config(args),
        lexicon=_lexicon(args),
    )
    out = resolve_path(args.out)
    _write_json(report.to_dict(), out, _run_config(args, "grid"))
    for name, row in zip(report.names, report.f1):
        print(name, " ".join(f"{v:.4f}" for v in row))
    return 0


def cmd_predict(args) -> int:
    model, vocab, _ = load_checkpoint(resolve_path(args.checkpoint))
    corpus = load_corpus(resolve_path(args.input))
    texts = [s.text for s in corpus]
    spans = train_mod.predict_spans(model, vocab, texts, _lexicon(args))
    out = resolve_path(args.out)
    # written raw: predictions need not satisfy gold-annotation invariants
    with out.open("w", encoding="utf-8") as fh:
        for text, found in zip(texts, spans):
            obj = {
                "text": text,
                "entities": [
                    {"start": s.start, "end": s.end, "kind": s.kind} for s in found
                ],
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
    _write_sidecar(out, _run_config(args, "predict"))
    print(f"wrote predictions for {len(texts)} sentences to {out}")
    return 0


def cmd_augment(args) -> int:
    corpus = load_corpus(resolve_path(args.input))
    source = (
        load_corpus(resolve_path(args.glossary_from))
        if args.glossary_from
        else corpus
    )
    glossary = augment_mod.build_glossaries(source)
    grown = augment_mod.augment(
        corpus, args.multiplier, glossary, args.seed, allow_self=not args.no_self
    )
    out = resolve_path(args.out)
    write_corpus(grown, out)
    _write_sidecar(out, _run_config(args, "augment"))
    print(f"wrote {len(grown)} sentences to {out}")
    return 0


def cmd_mine(args) -> int:
    alias_map = (
        mining.load_alias_map(resolve_path(args.alias_file))
        if args.alias_file
        else None
    )
    exclude = (
        mining.load_exclusions(resolve_path(args.exclude_file))
        if args.exclude_file
        else None
    )
    categories = (
        mining.load_categories(resolve_path(args.category_file))
        if args.category_file
        else {}
    )
    papers = mining.load_papers(resolve_path(args.papers), alias_map, exclude)
    years = args.years or sorted({p.year for p in papers})
    out_dir = resolve_path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_config = _run_config(args, "mine")

    ranking_rows = []
    frequency_rows = []
    for year in years:
        g = mining.build_graph(papers, year)
        filtered = mining.filter_edges(g, args.min_edge_weight)
        mining.annotate_categories(filtered, categories)
        mining.write_graph_json(filtered, out_dir / f"methods-{year}.json")
        _write_sidecar(out_dir / f"methods-{year}.json", run_config)
        mining.write_graphml(filtered, out_dir / f"methods-{year}.graphml")
        scores = mining.betweenness(filtered)
        for rank, (name, score) in enumerate(
            mining.top_k(scores, args.top_k) if scores else [], start=1
        ):
            ranking_rows.append((year, rank, name, score))
        for name, count in sorted(mining.dataset_frequency(papers, year).items()):
            frequency_rows.append((year, name, count))

    rankings_path = out_dir / "method-centrality.csv"
    mining.write_rankings_csv(ranking_rows, rankings_path)
    _write_sidecar(rankings_path, run_config)

    freq_path = out_dir / "dataset-frequency.csv"
    with freq_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["year", "dataset", "papers"])
        writer.writerows(frequency_rows)
    _write_sidecar(freq_path, run_config)
    print(f"mined {len(years)} year(s) into {out_dir}")
    return 0


def cmd_report(args) -> int:
    reports = []
    for path in args.inputs:
        with resolve_path(path).open(encoding="utf-8") as fh:
            obj = json.load(fh)
        reports.append(obj)
    rows = []
    for path, obj in zip(args.inputs, reports):
        rows.append(
            {
                "source": str(path),
                "precision": obj.get("precision"),
                "recall": obj.get("recall"),
                "f1": obj.get("f1"),
            }
        )
    values = [r["f1"] for r in rows if r["f1"] is not None]
    summary = {
        "reports": rows,
        "f1_mean": sum(values) / len(values) if values else 0.0,
    }
    out = resolve_path(args.out)
    if out.suffix == ".csv":
        with out.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["source", "precision", "recall", "f1"]
            )
            writer.writeheader()
            writer.writerows(rows)
        _write_sidecar(out, _run_config(args, "report"))
    else:
        _write_json(summary, out, _run_config(args, "report"))
    print(json.dumps({"reports": len(rows), "f1_mean": summary["f1_mean"]}))
    return 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Method/dataset entity recognition and literature mining",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master RNG seed")
    common.add_argument("--config", help="JSON config file (model/train sections)")

    modelish = argparse.ArgumentParser(add_help=False)
    modelish.add_argument(
        "--lexicon-dir",
        help="directory with methods.txt, datasets.txt, blacklist.txt",
    )
    modelish.add_argument(
        "--ablation",
        nargs="*",
        choices=list(AblationFlags.COMPONENTS),
        help="components to drop (rule cnn attention crf)",
    )
    modelish.add_argument("--batch-size", type=int, help="mini-batch size")
    modelish.add_argument(
        "--learning-rate", type=float, help="Adam learning rate"
    )
    modelish.add_argument("--dropout", type=float, help="dropout rate")
    modelish.add_argument("--max-epochs", type=int, help="epoch limit")
    modelish.add_argument(
        "--patience", type=int, help="early-stopping patience (epochs)"
    )

    p = sub.add_parser("prepare", parents=[common],
                       help="segment plain text into a JSONL corpus")
    p.add_argument("input", help="plain-text file, blank-line paragraphs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("split", parents=[common],
                       help="split a corpus into train/val/test folds")
    p.add_argument("input")
    p.add_argument("--ratio", default="7:1:2", help="train:val:test ratio")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("mix", parents=[common],
                       help="sample equally from several corpora")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--per-area", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic annotated corpus")
    p.add_argument("--grammar", help="grammar JSON (templates + pools)")
    p.add_argument(
        "--area",
        default="generic",
        help="built-in grammar when --grammar is absent (nlp/cv/dm/ai/generic)",
    )
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--name", default="synthetic")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common, modelish],
                       help="train a tagger")
    p.add_argument("--train", required=True, help="training corpus JSONL")
    p.add_argument("--val", required=True, help="validation corpus JSONL")
    p.add_argument("--test", help="optional test corpus (enables --repeats)")
    p.add_argument(
        "--repeats", type=int, help="train N times (seed, seed+1, ...) and aggregate"
    )
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common, modelish],
                       help="evaluate a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", parents=[common, modelish],
                       help="n x n cross-corpus train/test matrix")
    p.add_argument("inputs", nargs="+", help="corpora (JSONL)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("predict", parents=[common, modelish],
                       help="tag sentences with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True, help="JSONL sentences")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("augment", parents=[common],
                       help="entity-substitution augmentation")
    p.add_argument("input")
    p.add_argument("out")
    p.add_argument("--multiplier", type=float, required=True)
    p.add_argument(
        "--no-self", action="store_true",
        help="never substitute a span with its own surface form",
    )
    p.add_argument(
        "--glossary-from", help="corpus supplying the glossaries (default: input)"
    )
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("mine", parents=[common],
                       help="co-occurrence graphs and rankings per year")
    p.add_argument("--papers", required=True, help="paper-entities JSONL")
    p.add_argument("--years", nargs="*", type=int)
    p.add_argument("--min-edge-weight", type=int, default=1)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--alias-file")
    p.add_argument("--exclude-file")
    p.add_argument("--category-file")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("report", parents=[common],
                       help="aggregate evaluation reports")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except MderError as exc:
        print(
            json.dumps({"error": str(exc), "type": type(exc).__name__}),
            file=sys.stderr,
        )
        return 2
    except FileNotFoundError as exc:
        print(
            json.dumps({"error": str(exc), "type": "FileNotFoundError"}),
            file=sys.stderr,
        )
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
