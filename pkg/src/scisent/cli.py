"""Command-line entry point: ``scisent <command> ...``.

Exit codes: 0 success, 1 usage or validation error, 2 partial data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import classify, clusteval, contrastive, corpus, encoder, reporting
from .fileio import atomic_write_text

log = logging.getLogger("scisent")

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2


class UsageError(Exception):
    pass


def _ratios(text: str) -> tuple[float, float, float]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ratios {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated ratios")
    return vals


def _labels_of(path) -> list[str]:
    return [s.label.value for s in corpus.read_records(path)]


def _check_rows(x: np.ndarray, labels: list, what: str) -> None:
    if len(x) != len(labels):
        raise UsageError(f"{what}: {len(x)} embedding rows but {len(labels)} records")


# ---------------------------------------------------------------------------
# commands

def cmd_extract(args) -> int:
    paths = corpus.article_paths(args.input)
    keywords = corpus.KeywordMap.load(args.keywords) if args.keywords else corpus.KeywordMap.default()
    sents, report = corpus.build_corpus(paths, keywords, workers=args.workers)
    if not paths:
        log.warning("no .xml files found in %s", args.input)
    corpus.write_records(sents, args.out)
    print(report.summary())
    for path, msg in report.errors:
        print(f"error\t{path}\t{msg}", file=sys.stderr)
    if report.errors:
        print(f"partial output: {len(report.errors)} file(s) failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_dedup(args) -> int:
    kept, removed = corpus.dedup_conflicting(corpus.read_records(args.corpus), full=args.full)
    corpus.write_records(kept, args.out)
    if args.removed:
        corpus.write_records(removed, args.removed)
    print(f"kept\t{len(kept)}")
    print(f"removed\t{len(removed)}")
    return EXIT_OK


def cmd_split(args) -> int:
    split = corpus.stratified_split(corpus.read_records(args.corpus), args.ratios, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in split.parts.items():
        corpus.write_records(part, out / f"{args.prefix}{name}.jsonl")
        print(f"{name}\t{len(part)}")
    return EXIT_OK


def cmd_stats(args) -> int:
    rows = corpus.corpus_stats(corpus.read_records(args.corpus), args.decimals)
    text = corpus.format_stats(rows, args.decimals)
    if args.out:
        atomic_write_text(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def _base_model(args) -> encoder.EncoderModel:
    if getattr(args, "model", None):
        return encoder.load_model(args.model)
    cfg = encoder.FeaturizerConfig(args.hash_dim)
    return encoder.random_baseline_model(args.random_baseline, cfg, args.dim, args.normalize)


def cmd_train(args) -> int:
    train_set = corpus.read_records(args.corpus)
    model = _base_model(args)
    config = contrastive.TrainConfig(
        margin=args.margin, epochs=args.epochs, batch_size=args.batch_size, peak_lr=args.lr,
        warmup_fraction=args.warmup, distance=args.distance, seed=args.seed, loss=args.loss,
        positives_only=args.positives_only)
    validation, triplets = [], []
    if args.validation:
        validation = corpus.read_records(args.validation)
        triplets, _ = contrastive.build_validation_triplets(validation, args.seed)

    history_lines = []
    hist_file = open(args.history, "w", encoding="utf-8") if args.history else None

    def on_record(rec):
        line = json.dumps(rec, sort_keys=True)
        history_lines.append(line)
        if hist_file:
            hist_file.write(line + "\n")
            hist_file.flush()

    try:
        result = contrastive.train(model, train_set, config, validation, triplets, on_record)
    finally:
        if hist_file:
            hist_file.close()
    encoder.save_model(result.model, args.out)

    inputs = {"corpus": args.corpus}
    if args.validation:
        inputs["validation"] = args.validation
    if args.model:
        inputs["init_model"] = args.model
    run = reporting.RunRecord(
        command="train",
        config={**config.to_dict(), "hash_dim": model.hash_dim, "out_dim": model.out_dim,
                "normalize_output": model.normalize_output, "optimizer": "sgd",
                "schedule": "warmup_linear", "init": args.model or f"random:{args.random_baseline}"},
        inputs=reporting.RunRecord.digests(inputs),
        extra={"skipped_batches": result.skipped_batches, "steps": len(
            [h for h in result.history if "step" in h]), "validation_triplets": len(triplets)},
    )
    last_acc = [h["validation_triplet_accuracy"] for h in result.history
                if "validation_triplet_accuracy" in h]
    if last_acc:
        run.raw["validation_triplet_accuracy"] = last_acc[-1]
        run.metrics = {k: round(100 * v, 2) for k, v in run.raw.items()}
    run.save(args.run or f"{args.out}.run.json")
    print(f"saved model to {args.out} ({run.extra['steps']} steps, "
          f"{result.skipped_batches} skipped batches)")
    return EXIT_OK


def cmd_encode(args) -> int:
    if not args.model and args.random_baseline is None:
        raise UsageError("one of --model or --random-baseline is required")
    model = _base_model(args)
    records = corpus.read_records(args.input)
    x = encoder.encode(model, [s.text for s in records])
    _check_rows(x, records, "encode")
    if args.tsv:
        encoder.export_embeddings(x, args.out)
    else:
        encoder.save_embeddings(x, args.out)
    print(f"{x.shape[0]}\t{x.shape[1]}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    x = encoder.load_embeddings(args.emb)
    labels = _labels_of(args.labels)
    _check_rows(x, labels, "cluster")
    rep = clusteval.cluster_eval(x, labels, seed=args.seed, restarts=args.restarts)
    keys = ["ari", "ami", "silhouette"]
    sys.stdout.write(rep.table(keys))
    if args.out:
        run = reporting.RunRecord(
            command="cluster",
            config={"seed": args.seed, "restarts": args.restarts, "k_rule": "distinct_labels",
                    "init": "k-means++", "max_iter": 300, "tol": 1e-4,
                    "ami_normalizer": "arithmetic", "distance": "euclidean"},
            inputs=reporting.RunRecord.digests({"emb": args.emb, "labels": args.labels}),
            metrics=rep.scaled(), raw=rep.metrics,
            extra={k: v for k, v in rep.extra.items()},
        )
        run.save(args.out)
    return EXIT_OK


def cmd_classify(args) -> int:
    xtr = encoder.load_embeddings(args.train_emb)
    ytr = _labels_of(args.train_labels)
    xte = encoder.load_embeddings(args.test_emb)
    yte = _labels_of(args.test_labels)
    _check_rows(xtr, ytr, "train")
    _check_rows(xte, yte, "test")
    rep = classify.classification_eval(xtr, ytr, xte, yte, args.classifier, args.seed)
    cm = rep.extra.pop("confusion")
    sys.stdout.write(f"f1_micro\t{rep.scaled()['f1_micro']:.2f}\n")
    if args.confusion:
        atomic_write_text(args.confusion, cm.to_tsv())
    if args.out:
        config = {"classifier": args.classifier, "seed": args.seed, "distance": "euclidean"}
        if args.classifier == "knn":
            config.update(k_rule="floor_sqrt_n_train", weighting="distance", k=rep.extra["k"])
        run = reporting.RunRecord(
            command="classify", config=config,
            inputs=reporting.RunRecord.digests({
                "train_emb": args.train_emb, "train_labels": args.train_labels,
                "test_emb": args.test_emb, "test_labels": args.test_labels}),
            metrics=rep.scaled(), raw=rep.metrics,
            extra={**rep.extra, "confusion": {"labels": cm.labels, "counts": cm.counts.tolist()}},
        )
        run.save(args.out)
    return EXIT_OK


def _parse_pair(text: str) -> dict:
    out = {}
    for item in text.split(","):
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"bad pair item {item!r}; expected key=value")
        out[key.strip()] = val.strip()
    if "fine_tuned" not in out or "baseline" not in out:
        raise UsageError("each --pair needs fine_tuned=... and baseline=...")
    return out


def cmd_report(args) -> int:
    runs = {}
    for path in args.runs:
        metrics = reporting.load_run_metrics(path)
        runs[path] = metrics
        runs.setdefault(Path(path).stem, metrics)
    pairs = [_parse_pair(p) for p in args.pair]
    for p in pairs:
        for role in ("fine_tuned", "baseline"):
            if p[role] not in runs:
                raise UsageError(f"unknown run {p[role]!r}")
    if args.metrics:
        keep = set(args.metrics.split(","))
        runs = {k: {m: v for m, v in r.items() if m in keep} for k, r in runs.items()}
    try:
        rows = reporting.comparison_rows(pairs, runs)
    except KeyError as e:
        raise UsageError(str(e.args[0])) from None
    text = reporting.render_comparison(rows, reporting.summarize(rows, args.ddof), args.format)
    if args.out:
        atomic_write_text(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_project(args) -> int:
    x = encoder.load_embeddings(args.emb)
    labels = _labels_of(args.labels)
    _check_rows(x, labels, "project")
    xy = reporting.pca_project(x)
    lines = ["x\ty\tlabel"] + [f"{a:.9g}\t{b:.9g}\t{lab}" for (a, b), lab in zip(xy, labels)]
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scisent", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON file of default option values")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(func=func)
        sp.add_argument("--seed", type=int, default=0)
        return sp

    sp = add("extract", cmd_extract, "extract labeled sentences from a directory of XML articles")
    sp.add_argument("--input", required=True)
    sp.add_argument("--keywords")
    sp.add_argument("--out", required=True)
    sp.add_argument("--workers", type=int, default=1)

    sp = add("dedup", cmd_dedup, "remove texts that occur under conflicting labels")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--removed")
    sp.add_argument("--full", action="store_true", help="also drop same-label repeats")

    sp = add("split", cmd_split, "stratified train/validation/test split")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--ratios", type=_ratios, default=(0.8, 0.1, 0.1))
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--prefix", default="")

    sp = add("stats", cmd_stats, "per-label counts and percentages")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out")
    sp.add_argument("--decimals", type=int, default=2)

    def model_source(sp):
        sp.add_argument("--model")
        sp.add_argument("--random-baseline", type=int, metavar="SEED")
        sp.add_argument("--dim", type=int, default=64)
        sp.add_argument("--hash-dim", type=int, default=32768)
        sp.add_argument("--normalize", action="store_true")

    sp = add("train", cmd_train, "train the projection with batch-all triplet loss")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--validation")
    model_source(sp)
    sp.set_defaults(random_baseline=0)
    sp.add_argument("--epochs", type=int, default=20)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--margin", type=float, default=5.0)
    sp.add_argument("--lr", type=float, default=1.0)
    sp.add_argument("--warmup", type=float, default=0.10)
    sp.add_argument("--distance", choices=contrastive.DISTANCES, default="euclidean")
    sp.add_argument("--loss", choices=contrastive.LOSSES, default="batch_all_triplet")
    sp.add_argument("--positives-only", action="store_true")
    sp.add_argument("--out", required=True)
    sp.add_argument("--history")
    sp.add_argument("--run")

    sp = add("encode", cmd_encode, "embed a corpus file")
    model_source(sp)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--tsv", action="store_true", help="write TSV instead of SEMB binary")

    sp = add("cluster", cmd_cluster, "k-means + ARI/AMI/Silhouette")
    sp.add_argument("--emb", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--restarts", type=int, default=10)
    sp.add_argument("--out")

    sp = add("classify", cmd_classify, "train/test an embedding classifier, report F1-micro")
    sp.add_argument("--train-emb", required=True)
    sp.add_argument("--train-labels", required=True)
    sp.add_argument("--test-emb", required=True)
    sp.add_argument("--test-labels", required=True)
    sp.add_argument("--classifier", choices=classify.CLASSIFIERS, default="knn")
    sp.add_argument("--confusion")
    sp.add_argument("--out")

    sp = add("report", cmd_report, "fine-tuned vs. baseline delta-percent table")
    sp.add_argument("--runs", nargs="+", required=True)
    sp.add_argument("--pair", action="append", required=True,
                    help="fine_tuned=RUN,baseline=RUN[,group=G][,name=N]")
    sp.add_argument("--metrics", help="comma-separated subset of metric keys")
    sp.add_argument("--ddof", type=int, default=0)
    sp.add_argument("--format", choices=("tsv", "text"), default="tsv")
    sp.add_argument("--out")

    sp = add("project", cmd_project, "2-D PCA coordinates for plotting")
    sp.add_argument("--emb", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--out", required=True)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cfg = json.loads(Path(known.config).read_text(encoding="utf-8"))
    shared = {k.replace("-", "_"): v for k, v in cfg.items() if not isinstance(v, dict)}
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for name, sp in subs.choices.items():
        own = {k.replace("-", "_"): v for k, v in cfg.get(name, {}).items()}
        dests = {a.dest for a in sp._actions}
        sp.set_defaults(**{k: v for k, v in {**shared, **own}.items() if k in dests})


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (OSError, ValueError) as e:
        print(f"error: bad config file: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError, KeyError, OSError, corpus.CorpusError,
            contrastive.TrainingError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
