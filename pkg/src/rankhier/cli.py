"""Command-line entry points: preprocess, train, eval, rank, cluster-report.

Every option can come from a flat key=value config file (--config) with
command-line flags taking precedence over the file and the file over the
built-in defaults. Unknown config keys are rejected. Primary outputs are
timestamp-free so identical runs produce byte-identical files.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Callable, Sequence

import numpy as np

from .evaluation import (
    DEFAULT_METRICS,
    EvalReport,
    MetricResult,
    compute_metrics,
    cluster_report,
    degradation_report,
    evaluate_runs,
    load_candidate_groups,
    render_cluster_rows,
    score_candidate_groups,
    tfidf_score_groups,
    write_candidate_groups,
)
from .models import LTC_SIDES, MODEL_KINDS, ModelConfig, model_forward
from .text import (
    DataError,
    RankingTriple,
    Vocabulary,
    batchify,
    build_vocab,
    load_embeddings,
    load_pairs,
    load_triples,
    negative_sample,
    resolve_delimiter,
    text_to_chunked,
    tokenize,
    write_triples,
)
from .training import (
    CheckpointError,
    TrainConfig,
    TrainingDiverged,
    checkpoint_config,
    fit,
    load_checkpoint,
    save_checkpoint,
)

log = logging.getLogger("rankhier")

DELIMITER_CHOICES = ("_eos_", "_eot_", "sentence")


def _opt_float(s: str):
    return None if s == "none" else float(s)


def _opt_int(s: str):
    return None if s == "none" else int(s)


def _opt_str(s: str):
    return None if s == "none" else s


def _parse_bool(s: str) -> bool:
    if s in ("true", "1", "yes"):
        return True
    if s in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_seeds(s) -> list[int]:
    if isinstance(s, list):
        return [int(x) for x in s]
    return [int(part) for part in str(s).split(",") if part != ""]


def _parse_metrics(s) -> list[tuple[int, int]]:
    if isinstance(s, (list, tuple)) and s and isinstance(s[0], tuple):
        return list(s)
    specs = []
    for part in str(s).split(","):
        n, sep, k = part.partition(":")
        if not sep:
            raise ValueError(f"metric spec must look like n:k, got {part!r}")
        specs.append((int(n), int(k)))
    return specs


def _parse_paths(s) -> list[str]:
    if isinstance(s, list):
        return s
    return [part for part in str(s).split(",") if part]


# Per-command option registry: key -> (config-file parser, default).
_SHARED_MODEL = {
    "model": (str, "rde"),
    "delimiter": (str, "_eos_"),
    "ltc_side": (str, "answer"),
    "clusters": (int, 3),
    "ltc_dim": (int, 256),
    "embed_dim": (int, 300),
    "hidden": (int, 300),
    "chunk_hidden": (int, 300),
    "input_dropout": (_opt_float, None),
    "memory_dropout": (float, 0.8),
}
_SHARED_TRAIN = {
    "train": (str, None),
    "vocab": (str, None),
    "embeddings": (_opt_str, None),
    "seed": (int, 0),
    "epochs": (int, 10),
    "batch_size": (int, 64),
    "lr": (float, 0.001),
    "clip_norm": (float, 1.0),
    "max_words": (int, 40),
    "max_chunks": (int, 14),
    "patience": (_opt_int, None),
}
OPTION_REGISTRY: dict[str, dict] = {
    "preprocess": {
        "train": (str, None),
        "valid": (_opt_str, None),
        "test": (_opt_str, None),
        "out": (str, None),
        "neg": (int, 1),
        "eval_neg": (int, 9),
        "min_count": (int, 1),
        "seed": (int, 0),
    },
    "train": {**_SHARED_MODEL, **_SHARED_TRAIN,
              "valid": (str, None), "checkpoint": (str, None), "history": (str, None)},
    "eval": {**_SHARED_MODEL, **_SHARED_TRAIN,
             "data": (str, None), "report": (str, None),
             "checkpoint": (_parse_paths, None), "valid": (_opt_str, None),
             "seeds": (_parse_seeds, None), "metrics": (_parse_metrics, list(DEFAULT_METRICS)),
             "degradation": (_parse_bool, False), "tfidf": (_parse_bool, False),
             "cluster_samples": (_opt_str, None), "workers": (_opt_int, None)},
    "rank": {"checkpoint": (str, None), "vocab": (str, None), "question": (str, None),
             "candidates": (str, None), "delimiter": (str, "_eos_"),
             "max_words": (int, 40), "max_chunks": (int, 14)},
    "cluster-report": {"checkpoint": (str, None), "vocab": (str, None),
                       "samples": (str, None), "report": (_opt_str, None),
                       "delimiter": (str, "_eos_"),
                       "max_words": (int, 40), "max_chunks": (int, 14)},
}


class Options:
    """Merged option values accessed as attributes.

    ``explicit`` records which keys came from the config file or the
    command line (rather than registry defaults), letting commands defer
    unset options to values stored in a checkpoint.
    """

    def __init__(self, values: dict, explicit: set[str]):
        self.explicit = explicit
        self.__dict__.update(values)

    def require(self, *keys: str) -> None:
        for key in keys:
            if getattr(self, key) is None:
                raise DataError(f"missing required option --{key.replace('_', '-')}")


def _load_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise DataError(f"{path}: line {lineno}: expected key=value")
            values[key.strip()] = value.strip()
    return values


def merge_options(command: str, args: argparse.Namespace) -> Options:
    """Apply precedence: explicit flag > config file > registry default."""
    registry = OPTION_REGISTRY[command]
    merged = {key: default for key, (_, default) in registry.items()}
    explicit: set[str] = set()
    config_path = getattr(args, "config", None)
    if config_path:
        for key, raw in _load_config_file(config_path).items():
            if key not in registry:
                raise DataError(f"unknown configuration key {key!r} for command {command!r}")
            parse = registry[key][0]
            try:
                merged[key] = parse(raw)
            except ValueError as exc:
                raise DataError(f"bad value for configuration key {key!r}: {exc}") from exc
            explicit.add(key)
    for key in registry:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value
            explicit.add(key)
    return Options(merged, explicit)


def _worker_count(requested: int | None) -> int:
    cap = os.environ.get("RANKHIER_THREADS")
    workers = requested if requested is not None else (int(cap) if cap else 1)
    if cap:
        workers = min(workers, int(cap))
    return max(1, workers)


def _model_config(opts: Options, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        kind=opts.model,
        embed_dim=opts.embed_dim,
        hidden_dim=opts.hidden,
        chunk_hidden_dim=opts.chunk_hidden,
        ltc_clusters=opts.clusters,
        ltc_dim=opts.ltc_dim,
        ltc_side=opts.ltc_side,
        input_dropout=opts.input_dropout,
        memory_dropout=opts.memory_dropout,
    )


def _train_config(opts: Options, model: ModelConfig, seed: int | None = None) -> TrainConfig:
    return TrainConfig(
        model=model,
        learning_rate=opts.lr,
        clip_norm=opts.clip_norm,
        batch_size=opts.batch_size,
        epochs=opts.epochs,
        seed=opts.seed if seed is None else seed,
        max_words=opts.max_words,
        max_chunks=opts.max_chunks,
        patience=opts.patience,
    )


def _load_embedding_matrix(opts: Options, vocab: Vocabulary):
    if opts.embeddings is None:
        return None
    if not os.path.isfile(opts.embeddings):
        log.warning("embeddings file %s not found; using seeded random initialization",
                    opts.embeddings)
        return None
    return load_embeddings(opts.embeddings, vocab, opts.embed_dim,
                           np.random.default_rng([opts.seed, 3]))


def _history_lines(history) -> str:
    lines = ["epoch\tloss\tvalid_r1"]
    for row in history:
        lines.append(f"{row.epoch}\t{row.train_loss:.6f}\t{row.valid_recall:.6f}")
    return "\n".join(lines) + "\n"


def cmd_preprocess(opts: Options) -> int:
    opts.require("train", "out")
    for path in filter(None, (opts.train, opts.valid, opts.test)):
        if not os.path.isfile(path):
            raise DataError(f"input file not readable: {path}")
    os.makedirs(opts.out, exist_ok=True)
    train_pairs = load_pairs(opts.train)
    vocab = build_vocab((tokenize(text) for pair in train_pairs for text in pair),
                        min_count=opts.min_count)
    vocab.save(os.path.join(opts.out, "vocab.txt"))
    log.info("vocabulary: %d tokens from %d training pairs", vocab.size, len(train_pairs))
    triples = negative_sample(train_pairs, opts.neg, np.random.default_rng([opts.seed, 0]))
    write_triples(os.path.join(opts.out, "train.tsv"), triples)
    log.info("train triples: %d (%d negatives per pair)", len(triples), opts.neg)
    for split_index, (name, path) in enumerate((("valid", opts.valid), ("test", opts.test))):
        if path is None:
            continue
        pairs = load_pairs(path)
        rng = np.random.default_rng([opts.seed, 1 + split_index])
        sampled = negative_sample(pairs, opts.eval_neg, rng)
        group_size = 1 + opts.eval_neg
        groups = []
        for g, start in enumerate(range(0, len(sampled), group_size)):
            block = sampled[start:start + group_size]
            order = rng.permutation(len(block))
            rows = [(block[i].flag, block[i].answer) for i in order]
            groups.append((f"g{g:06d}", block[0].question, rows))
        write_candidate_groups(os.path.join(opts.out, f"{name}.tsv"), groups)
        log.info("%s groups: %d of size %d", name, len(groups), group_size)
    return 0


def cmd_train(opts: Options) -> int:
    opts.require("train", "valid", "vocab", "checkpoint", "history")
    for path in (opts.train, opts.valid, opts.vocab):
        if not os.path.isfile(path):
            raise DataError(f"input file not readable: {path}")
    vocab = Vocabulary.load(opts.vocab)
    delimiter = resolve_delimiter(opts.delimiter)
    train_triples = load_triples(opts.train, vocab, delimiter)
    valid_groups = load_candidate_groups(opts.valid, vocab, delimiter)
    config = _train_config(opts, _model_config(opts, vocab.size))
    embeddings = _load_embedding_matrix(opts, vocab)
    log.info("training %s: %d triples, %d validation groups, %d epochs",
             config.model.kind, len(train_triples), len(valid_groups), config.epochs)
    model, history = fit(config, train_triples, valid_groups, embeddings,
                         progress=lambda row: log.info(
                             "epoch %d: loss %.6f, valid R@1 %.6f",
                             row.epoch, row.train_loss, row.valid_recall))
    run_info = {
        "delimiter": opts.delimiter,
        "seed": config.seed,
        "lr": config.learning_rate,
        "clip_norm": config.clip_norm,
        "batch_size": config.batch_size,
        "epochs": config.epochs,
        "max_words": config.max_words,
        "max_chunks": config.max_chunks,
        "patience": config.patience,
    }
    save_checkpoint(model, opts.checkpoint, run_info)
    with open(opts.history, "w", encoding="utf-8") as f:
        f.write(_history_lines(history))
    best = max(history, key=lambda row: row.valid_recall)
    log.info("saved %s (best epoch %d, valid R@1 %.6f)",
             opts.checkpoint, best.epoch, best.valid_recall)
    return 0


def _setting(opts: Options, key: str, run_info: dict, parse):
    """Option value with checkpoint fallback: explicit > checkpoint > default."""
    if key in opts.explicit:
        return getattr(opts, key)
    stored = run_info.get(f"run.{key}")
    if stored is not None and stored != "none":
        return parse(stored)
    return getattr(opts, key)


def _eval_one_checkpoint(path: str, opts: Options, vocab: Vocabulary, workers: int):
    model = load_checkpoint(path)
    run_info = checkpoint_config(path)
    delimiter_name = _setting(opts, "delimiter", run_info, str)
    max_words = _setting(opts, "max_words", run_info, int)
    max_chunks = _setting(opts, "max_chunks", run_info, int)
    groups = load_candidate_groups(opts.data, vocab, resolve_delimiter(delimiter_name))
    scored = score_candidate_groups(model, groups, max_words, max_chunks, workers=workers)
    return model, scored


def cmd_eval(opts: Options) -> int:
    opts.require("data", "vocab", "report")
    vocab = Vocabulary.load(opts.vocab)
    workers = _worker_count(opts.workers)
    specs = _parse_metrics(opts.metrics)
    names = [f"1-in-{n} R@{k}" for n, k in specs]
    breakdown = None
    clusters = None
    if opts.checkpoint:
        per_run: list[dict[str, float]] = []
        first_model = None
        first_scored = None
        for path in _parse_paths(opts.checkpoint):
            model, scored = _eval_one_checkpoint(path, opts, vocab, workers)
            per_run.append(compute_metrics(scored, specs))
            if first_model is None:
                first_model, first_scored = model, scored
        report = EvalReport([MetricResult(name, [run[name] for run in per_run])
                             for name in names])
        model, scored = first_model, first_scored
    elif opts.seeds:
        opts.require("train")
        delimiter = resolve_delimiter(opts.delimiter)
        train_triples = load_triples(opts.train, vocab, delimiter)
        valid_path = opts.valid if opts.valid else opts.data
        valid_groups = load_candidate_groups(valid_path, vocab, delimiter)
        test_groups = load_candidate_groups(opts.data, vocab, delimiter)
        embeddings = _load_embedding_matrix(opts, vocab)
        model_config = _model_config(opts, vocab.size)
        last: dict = {}

        def run(seed: int) -> dict[str, float]:
            config = _train_config(opts, model_config, seed=seed)
            model, _ = fit(config, train_triples, valid_groups, embeddings)
            scored = score_candidate_groups(model, test_groups, config.max_words,
                                            config.max_chunks, workers=workers)
            last["model"], last["scored"] = model, scored
            return compute_metrics(scored, specs)

        report = evaluate_runs(run, _parse_seeds(opts.seeds), names)
        model, scored = last.get("model"), last.get("scored")
    else:
        raise DataError("eval needs either --checkpoint or --seeds with training data")
    if opts.tfidf:
        tfidf_values = compute_metrics(tfidf_score_groups(scored), specs)
        report.metrics.extend(
            MetricResult(f"tfidf {name}", [tfidf_values[name]]) for name in names)
    if opts.degradation:
        report.breakdown = degradation_report(scored)
    if opts.cluster_samples:
        if getattr(model, "ltc", None) is None:
            raise DataError("cluster report requested but the model has no topic memory")
        samples = _load_labeled_samples(opts.cluster_samples, vocab,
                                        resolve_delimiter(opts.delimiter or "_eos_"))
        report.clusters = cluster_report(model, samples, opts.max_words, opts.max_chunks)
    with open(opts.report, "w", encoding="utf-8") as f:
        f.write(report.render())
    for metric in report.metrics:
        log.info("%s: %.6f +/- %.6f", metric.name, metric.mean, metric.std)
    return 0


def _load_labeled_samples(path: str, vocab: Vocabulary, delimiter):
    samples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}: line {lineno}: expected category<TAB>text")
            samples.append((text_to_chunked(parts[1], vocab, delimiter), parts[0]))
    if not samples:
        raise DataError(f"{path}: no samples found")
    return samples


def _checkpoint_text_settings(path: str, opts: Options):
    run_info = checkpoint_config(path)
    delimiter_name = _setting(opts, "delimiter", run_info, str)
    max_words = _setting(opts, "max_words", run_info, int)
    max_chunks = _setting(opts, "max_chunks", run_info, int)
    return resolve_delimiter(delimiter_name), max_words, max_chunks


def cmd_rank(opts: Options) -> int:
    opts.require("checkpoint", "vocab", "question", "candidates")
    vocab = Vocabulary.load(opts.vocab)
    model = load_checkpoint(opts.checkpoint)
    delimiter, max_words, max_chunks = _checkpoint_text_settings(opts.checkpoint, opts)
    with open(opts.candidates, encoding="utf-8") as f:
        candidates = [line.rstrip("\n") for line in f if line.strip()]
    if not candidates:
        raise DataError(f"{opts.candidates}: no candidates found")
    question = text_to_chunked(opts.question, vocab, delimiter)
    triples = [RankingTriple(question, text_to_chunked(c, vocab, delimiter), 0)
               for c in candidates]
    pieces = [model_forward(model, batch, training=False).data
              for batch in batchify(triples, max_words, max_chunks)]
    scores = np.concatenate(pieces)
    order = np.argsort(-scores, kind="stable")
    for rank, idx in enumerate(order, start=1):
        sys.stdout.write(f"{rank}\t{scores[idx]:.6f}\t{candidates[idx]}\n")
    return 0


def cmd_cluster_report(opts: Options) -> int:
    opts.require("checkpoint", "vocab", "samples")
    vocab = Vocabulary.load(opts.vocab)
    model = load_checkpoint(opts.checkpoint)
    if getattr(model, "ltc", None) is None:
        raise DataError("cluster report needs a checkpoint with a topic memory")
    delimiter, max_words, max_chunks = _checkpoint_text_settings(opts.checkpoint, opts)
    samples = _load_labeled_samples(opts.samples, vocab, delimiter)
    rows = cluster_report(model, samples, max_words, max_chunks)
    text = "\n".join(render_cluster_rows(rows)) + "\n"
    if opts.report:
        with open(opts.report, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rankhier",
        description="Train and evaluate dual-encoder answer ranking models.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(cmd: str, **kwargs) -> argparse.ArgumentParser:
        p = sub.add_parser(cmd, **kwargs)
        p.add_argument("--config", help="flat key=value configuration file")
        return p

    p = add("preprocess", help="build vocabulary and negative-sampled splits")
    p.add_argument("--train")
    p.add_argument("--valid")
    p.add_argument("--test")
    p.add_argument("--out")
    p.add_argument("--neg", type=int)
    p.add_argument("--eval-neg", dest="eval_neg", type=int)
    p.add_argument("--min-count", dest="min_count", type=int)
    p.add_argument("--seed", type=int)

    def add_model_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--model", choices=MODEL_KINDS)
        p.add_argument("--delimiter", choices=DELIMITER_CHOICES)
        p.add_argument("--ltc-side", dest="ltc_side", choices=LTC_SIDES)
        p.add_argument("--clusters", type=int)
        p.add_argument("--ltc-dim", dest="ltc_dim", type=int)
        p.add_argument("--embed-dim", dest="embed_dim", type=int)
        p.add_argument("--hidden", type=int)
        p.add_argument("--chunk-hidden", dest="chunk_hidden", type=int)
        p.add_argument("--input-dropout", dest="input_dropout", type=float)
        p.add_argument("--memory-dropout", dest="memory_dropout", type=float)

    def add_train_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--train")
        p.add_argument("--vocab")
        p.add_argument("--embeddings")
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--clip-norm", dest="clip_norm", type=float)
        p.add_argument("--max-words", dest="max_words", type=int)
        p.add_argument("--max-chunks", dest="max_chunks", type=int)
        p.add_argument("--patience", type=int)

    p = add("train", help="train one model and write checkpoint plus history")
    add_model_flags(p)
    add_train_flags(p)
    p.add_argument("--valid")
    p.add_argument("--checkpoint")
    p.add_argument("--history")

    p = add("eval", help="evaluate checkpoints or train-and-evaluate across seeds")
    add_model_flags(p)
    add_train_flags(p)
    p.add_argument("--data")
    p.add_argument("--report")
    p.add_argument("--checkpoint", nargs="+")
    p.add_argument("--valid")
    p.add_argument("--seeds")
    p.add_argument("--metrics")
    p.add_argument("--degradation", action="store_const", const=True)
    p.add_argument("--tfidf", action="store_const", const=True)
    p.add_argument("--cluster-samples", dest="cluster_samples")
    p.add_argument("--workers", type=int)

    p = add("rank", help="rank candidate answers for one question")
    p.add_argument("--checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--question")
    p.add_argument("--candidates")
    p.add_argument("--delimiter", choices=DELIMITER_CHOICES)
    p.add_argument("--max-words", dest="max_words", type=int)
    p.add_argument("--max-chunks", dest="max_chunks", type=int)

    p = add("cluster-report", help="topic-cluster proportions for labeled samples")
    p.add_argument("--checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--samples")
    p.add_argument("--report")
    p.add_argument("--delimiter", choices=DELIMITER_CHOICES)
    p.add_argument("--max-words", dest="max_words", type=int)
    p.add_argument("--max-chunks", dest="max_chunks", type=int)
    return parser


COMMANDS: dict[str, Callable[[Options], int]] = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "rank": cmd_rank,
    "cluster-report": cmd_cluster_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        opts = merge_options(args.command, args)
        return COMMANDS[args.command](opts)
    except (DataError, CheckpointError, TrainingDiverged, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
