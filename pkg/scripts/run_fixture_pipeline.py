"""extract -> dedup -> split -> train -> encode -> cluster/classify/project on an XML directory.

Defaults to the committed test fixtures, which exercise every command but give
a test part of two sentences, so their scores carry no signal. Point
``--input`` at a folder of PubMed Central XML files for a real run.

    python scripts/run_fixture_pipeline.py --work /tmp/scisent-run
"""

import argparse
import sys
from pathlib import Path

from scisent.cli import main as cli

HERE = Path(__file__).resolve().parent


def step(*argv) -> None:
    argv = [str(a) for a in argv]
    print("$ scisent " + " ".join(argv), flush=True)
    code = cli(argv)
    if code != 0:
        sys.exit(code)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--input", type=Path, default=HERE.parent / "tests" / "fixtures" / "articles")
    ap.add_argument("--work", type=Path, required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--dim", type=int, default=64)
    args = ap.parse_args()
    w = args.work
    w.mkdir(parents=True, exist_ok=True)
    split = w / "split"

    step("extract", "--input", args.input, "--out", w / "corpus.jsonl")
    step("dedup", "--corpus", w / "corpus.jsonl", "--out", w / "dedup.jsonl", "--removed", w / "removed.jsonl")
    step("stats", "--corpus", w / "dedup.jsonl")
    step("split", "--corpus", w / "dedup.jsonl", "--seed", args.seed, "--out-dir", split)
    step("train", "--corpus", split / "train.jsonl", "--validation", split / "validation.jsonl",
         "--dim", args.dim, "--epochs", args.epochs, "--seed", args.seed,
         "--out", w / "model.stpm", "--history", w / "history.jsonl")
    for name, model in (("trained", ["--model", w / "model.stpm"]),
                        ("baseline", ["--random-baseline", args.seed, "--dim", args.dim])):
        for part in ("train", "test"):
            step("encode", *model, "--in", split / f"{part}.jsonl", "--out", w / f"{name}_{part}.semb")
        step("cluster", "--emb", w / f"{name}_test.semb", "--labels", split / "test.jsonl",
             "--seed", args.seed, "--out", w / f"{name}_cluster.json")
        step("classify", "--train-emb", w / f"{name}_train.semb", "--train-labels", split / "train.jsonl",
             "--test-emb", w / f"{name}_test.semb", "--test-labels", split / "test.jsonl",
             "--out", w / f"{name}_classify.json")
        step("project", "--emb", w / f"{name}_test.semb", "--labels", split / "test.jsonl",
             "--out", w / f"{name}_xy.tsv")
    step("report", "--runs", *(w / f"{n}_{k}.json" for n in ("trained", "baseline") for k in ("cluster", "classify")),
         "--pair", "fine_tuned=trained_cluster,baseline=baseline_cluster,group=clustering",
         "--pair", "fine_tuned=trained_classify,baseline=baseline_classify,group=classification",
         "--metrics", "ari,ami,silhouette,f1_micro", "--format", "text")


if __name__ == "__main__":
    main()
