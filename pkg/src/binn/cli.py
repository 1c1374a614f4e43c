"""Command line driver: synth, ingest, embed, train, eval and recommend."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, config_values, load_config, read_manifest, write_manifest
from .core import SchemaError, VocabularyError, read_log, write_log
from .datagen import GenerationError, generate, write_labels
from .embed import EmbeddingSpace, export_embeddings, load_embeddings, train_witem2vec, with_retrieval
from .evaluation import (
    EvalReport,
    EvaluationError,
    ItemKNN,
    SPop,
    cold_start_eval,
    evaluate,
    format_report,
    history_length_cohorts,
)
from .ingest import SplitError, preprocess, split_by_time, write_split
from .model import BinnModel, TrainingError, vocabulary_check

log = logging.getLogger("binn")

FORMATS = """\
file formats:
  interaction log   one event per line, UTF-8, comma or tab separated:
                      user_id,item_id,behavior_code,timestamp
                    behavior_code is an integer in 1..num_behavior_types and
                    timestamp a non-negative integer; a first-line header
                    is optional (recognised by non-integer last fields)
  config / manifest INI with sections [synth] [embed] [binn] [ingest]; keys
                    are the config field names, e.g. [binn] hidden = 100.
                    Every manifest written by this tool is itself a valid
                    config: --config run/manifest.ini reproduces the run
  embeddings        context.tsv and target.tsv, one item per line:
                      item_id<TAB>c1<TAB>...<TAB>cd
                    plus counts.tsv (item_id<TAB>training frequency)
  labels            item_labels.tsv (item_id<TAB>cluster) and
                    user_labels.tsv (user_id<TAB>preferred_cluster)
  checkpoint        model.npz, a zip of .npy tensors with a JSON config echo
  report            INI; one [result.*] section per protocol, [timings] last

exit status: 0 success, 1 bad input (missing file, invalid data or config),
2 usage error.
"""


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="INI config file (see file formats below)")
    p.add_argument("--seed", type=int, help="seed for every randomised stage")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="binn", description="Next-item recommendation with behavior-intensive neural networks.",
        epilog=FORMATS, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=FORMATS,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        _common(p)
        return p

    p = add("synth", "generate a planted interaction log with ground-truth labels")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = add("ingest", "filter a log and split it at the cut time")
    p.add_argument("--log", type=Path, required=True, help="interaction log")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = add("embed", "train w-item2vec item embeddings on a training log")
    p.add_argument("--train", type=Path, required=True, help="training log (e.g. ingest's train.csv)")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = add("train", "train BINN against a frozen embedding space")
    p.add_argument("--train", type=Path, required=True, help="training log")
    p.add_argument("--embeddings", type=Path, required=True, help="directory written by embed")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = add("eval", "score a trained model and the S-POP / Item-KNN baselines")
    p.add_argument("--model", type=Path, required=True, help="directory written by train")
    p.add_argument("--split", type=Path, required=True, help="directory written by ingest")
    p.add_argument("--out", type=Path, required=True, help="report file")
    p.add_argument("--cold-start", action="store_true", help="step-by-step protocol on the cold-start users")
    p.add_argument("--cohorts", action="store_true", help="break results down by training-history length")
    p.add_argument("--steps", type=int, default=50, help="cold-start steps (default 50)")
    p.add_argument("-k", type=int, default=20, help="cut-off for Recall@k and MRR@k (default 20)")

    p = add("recommend", "top-k next items for every user of a history file")
    p.add_argument("--model", type=Path, required=True, help="directory written by train")
    p.add_argument("--history", type=Path, required=True, help="interaction log with the histories")
    p.add_argument("-k", type=int, default=20, help="list length (default 20)")
    p.add_argument("--cold-start", action="store_true", help="allow histories shorter than ts")
    return parser


def _space_from_dir(path: Path) -> EmbeddingSpace:
    manifest = read_manifest(path / "manifest.ini")
    counts = {}
    for line in (path / "counts.tsv").read_text(encoding="utf-8").splitlines():
        if line.strip():
            item, n = line.split("\t")
            counts[item] = int(n)
    ids = [line.split("\t", 1)[0] for line in (path / "context.tsv").read_text(encoding="utf-8").splitlines() if line.strip()]
    space = load_embeddings(path / "context.tsv", path / "target.tsv",
                            counts=np.array([counts[i] for i in ids], dtype=np.int64))
    return with_retrieval(space, manifest["outputs"].get("retrieval", "context"))


def cmd_synth(args, cfg):
    data = generate(cfg["synth"])
    args.out.mkdir(parents=True, exist_ok=True)
    write_log(data.corpus, args.out / "log.csv")
    write_labels(data, args.out / "item_labels.tsv", args.out / "user_labels.tsv")
    write_manifest(args.out / "manifest.ini", {
        "synth": config_values(cfg["synth"]),
        "outputs": {"log": "log.csv", "item_labels": "item_labels.tsv", "user_labels": "user_labels.tsv",
                    "users": len(data.corpus), "events": data.corpus.num_events},
    })
    print(f"wrote {data.corpus.num_events} events for {len(data.corpus)} users to {args.out / 'log.csv'}")


def cmd_ingest(args, cfg):
    ic = cfg["ingest"]
    corpus = read_log(args.log, ic.num_behavior_types)
    filtered = preprocess(corpus, ic.min_user_len, ic.min_item_count)
    split = split_by_time(filtered, ic.train_fraction)
    write_split(split, args.out, extra={"ingest": config_values(ic), "source": {"log": str(args.log)}})
    print(f"cut time {split.cut_time}: {len(split.train)} train users, {len(split.test)} test users, "
          f"{len(split.cold_start_users)} cold-start users")


def cmd_embed(args, cfg):
    nb = cfg["ingest"].num_behavior_types
    train = read_log(args.train, nb)
    ec = cfg["embed"]
    space = train_witem2vec(train, ec)
    args.out.mkdir(parents=True, exist_ok=True)
    export_embeddings(space, args.out / "context.tsv", "context")
    export_embeddings(space, args.out / "target.tsv", "target")
    with open(args.out / "counts.tsv", "w", encoding="utf-8") as fh:
        for item, n in zip(space.vocab.ids, space.vocab.counts):
            fh.write(f"{item}\t{int(n)}\n")
    write_manifest(args.out / "manifest.ini", {
        "embed": config_values(ec),
        "ingest": config_values(cfg["ingest"]),
        "source": {"train": str(args.train)},
        "outputs": {"context": "context.tsv", "target": "target.tsv", "counts": "counts.tsv",
                    "retrieval": space.retrieval, "items": len(space.vocab),
                    "objective": ",".join(repr(x) for x in space.objective_log)},
    })
    print(f"embedded {len(space.vocab)} items; objective by epoch: "
          + ", ".join(f"{x:.4f}" for x in space.objective_log))


def cmd_train(args, cfg):
    bc = cfg["binn"]
    train = read_log(args.train, bc.num_behavior_types)
    space = _space_from_dir(args.embeddings)
    if space.dim != bc.dim:
        log.info("binn.dim follows the embedding dimension %d", space.dim)
        bc = dataclasses.replace(bc, dim=space.dim)
    vocabulary_check(space, train)
    model = BinnModel(space, bc)
    model.train(train)
    args.out.mkdir(parents=True, exist_ok=True)
    model.save(args.out / "model.npz")
    write_manifest(args.out / "manifest.ini", {
        "binn": config_values(bc),
        "source": {"train": str(args.train), "embeddings": str(args.embeddings.resolve())},
        "outputs": {"checkpoint": "model.npz", "loss": ",".join(repr(x) for x in model.loss_log)},
    })
    print(f"trained on {len(train)} users; loss by epoch: " + ", ".join(f"{x:.5f}" for x in model.loss_log))


def _load_model(model_dir: Path) -> BinnModel:
    manifest = read_manifest(model_dir / "manifest.ini")
    space = _space_from_dir(Path(manifest["source"]["embeddings"]))
    return BinnModel.load(model_dir / manifest["outputs"]["checkpoint"], space)


def cmd_eval(args, cfg):
    model = _load_model(args.model)
    split_manifest = read_manifest(args.split / "manifest.ini")["split"]
    nb = int(split_manifest["num_behavior_types"])
    train = read_log(args.split / split_manifest["train"], nb)
    timings: dict[str, float] = {}
    results: dict[str, EvalReport] = {}
    if args.cold_start:
        cold = read_log(args.split / split_manifest["cold_start"], nb)
        t = time.perf_counter()
        series = cold_start_eval(model, cold, args.steps, args.k)
        timings["cold_start"] = time.perf_counter() - t
        for step, rep in enumerate(series, start=1):
            results[f"cold_start.step{step:03d}"] = rep
    else:
        test = read_log(args.split / split_manifest["test"], nb)
        for name, rec in (("binn", model), ("s_pop", SPop()), ("item_knn", None)):
            t = time.perf_counter()
            if rec is None:
                rec = ItemKNN(train)
            results[name] = evaluate(rec, test, args.k, train)
            if args.cohorts:
                results[name].breakdown = history_length_cohorts(rec, test, train, k=args.k)
            timings[name] = time.perf_counter() - t
    config = {"binn": config_values(model.config), "eval": {
        "protocol": "cold_start" if args.cold_start else "overall", "k": args.k,
        "cohorts": args.cohorts, "model": str(args.model), "split": str(args.split)}}
    text = format_report(config, results, timings)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(text, encoding="utf-8")
    for name, rep in results.items():
        if not name.startswith("cold_start.") or name.endswith(("step002", "step030")):
            print(f"{name}: recall@{rep.k}={rep.recall:.4f} mrr@{rep.k}={rep.mrr:.4f} ({rep.cases} cases)")


def cmd_recommend(args, cfg):
    model = _load_model(args.model)
    histories = read_log(args.history, model.config.num_behavior_types)
    for seq in histories:
        if len(seq) < model.config.ts and not args.cold_start:
            raise ValueError(f"user {seq.user_id} has {len(seq)} events, fewer than ts={model.config.ts}; "
                             "pass --cold-start to score short histories")
        for rank, (item, score) in enumerate(model.predict_next(seq, args.k, cold_start=args.cold_start), start=1):
            print(f"{seq.user_id}\t{rank}\t{item}\t{score:.6f}")


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "embed": cmd_embed, "train": cmd_train,
            "eval": cmd_eval, "recommend": cmd_recommend}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
        COMMANDS[args.command](args, cfg)
    except FileNotFoundError as exc:
        msg = f"file not found: {exc.filename}" if exc.filename else str(exc).strip("'\"")
        print(f"binn {args.command}: {msg}", file=sys.stderr)
        return 1
    except (ConfigError, SchemaError, SplitError, GenerationError, EvaluationError,
            TrainingError, VocabularyError, KeyError, ValueError, OSError) as exc:
        msg = str(exc).strip("'\"").splitlines()[0] if str(exc) else type(exc).__name__
        print(f"binn {args.command}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
