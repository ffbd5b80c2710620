"""Ranking metrics, multi-run statistics, TF-IDF baseline, and analyses."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .models import ltc_probs, model_forward
from .text import (
    ChunkedText,
    DataError,
    RankingTriple,
    Vocabulary,
    batchify,
    grids_from_texts,
    text_to_chunked,
    tokenize,
)

DEFAULT_METRICS: tuple[tuple[int, int], ...] = ((2, 1), (10, 1), (10, 2), (10, 5))


def metric_name(n: int, k: int) -> str:
    return f"1-in-{n} R@{k}"


@dataclass
class CandidateGroup:
    """One question with its candidate answers, exactly one of them true."""

    question: ChunkedText
    candidates: list[ChunkedText]
    flags: list[int]
    scores: np.ndarray | None = None
    question_text: str | None = None
    candidate_texts: list[str] | None = None

    def __post_init__(self):
        if len(self.candidates) < 2:
            raise DataError("a candidate group needs at least two candidates")
        if len(self.flags) != len(self.candidates):
            raise DataError("candidate/flag counts differ")
        if sum(1 for f in self.flags if f == 1) != 1 or any(f not in (0, 1) for f in self.flags):
            raise DataError("a candidate group needs exactly one flag=1 candidate")

    @property
    def size(self) -> int:
        return len(self.candidates)

    @property
    def truth_index(self) -> int:
        return self.flags.index(1)


def _truth_rank(scores: np.ndarray, truth_index: int) -> int:
    """1-based rank of the truth, descending score, ties to the lower index."""
    s = scores[truth_index]
    higher = int(np.sum(scores > s))
    ties_before = int(np.sum(scores[:truth_index] == s))
    return 1 + higher + ties_before


def recall_at_k(groups: Sequence[CandidateGroup], k: int) -> float:
    """Fraction of groups whose true candidate ranks within the top k."""
    if not groups:
        raise ValueError("recall needs at least one group")
    if not 1 <= k <= min(g.size for g in groups):
        raise ValueError(f"k must be in [1, smallest group size], got {k}")
    hits = 0
    for g in groups:
        if g.scores is None:
            raise ValueError("group has no scores; score candidates first")
        if _truth_rank(np.asarray(g.scores), g.truth_index) <= k:
            hits += 1
    return hits / len(groups)


def _subgroup(group: CandidateGroup, n: int) -> tuple[np.ndarray, int]:
    """Scores for the truth plus the first n-1 distractors, original order."""
    truth = group.truth_index
    others = [i for i in range(group.size) if i != truth][:n - 1]
    chosen = sorted([truth] + others)
    scores = np.asarray(group.scores)[chosen]
    return scores, chosen.index(truth)


def compute_metrics(groups: Sequence[CandidateGroup],
                    specs: Sequence[tuple[int, int]] = DEFAULT_METRICS) -> dict[str, float]:
    """Evaluate 1-in-n R@k pairs; n-candidate subsets are carved per group."""
    if not groups:
        raise ValueError("metrics need at least one group")
    smallest = min(g.size for g in groups)
    results: dict[str, float] = {}
    for n, k in specs:
        if not 1 <= k <= n:
            raise ValueError(f"metric needs 1 <= k <= n, got n={n} k={k}")
        if n > smallest:
            raise ValueError(
                f"metric 1-in-{n} needs {n} candidates but a group has only {smallest}")
        hits = 0
        for g in groups:
            if g.scores is None:
                raise ValueError("group has no scores; score candidates first")
            scores, truth = _subgroup(g, n)
            if _truth_rank(scores, truth) <= k:
                hits += 1
        results[metric_name(n, k)] = hits / len(groups)
    return results


@dataclass
class MetricResult:
    """One metric aggregated over runs."""

    name: str
    values: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        return float(np.std(self.values))


@dataclass
class EvalReport:
    """Per-run metric values with mean/std, plus optional analysis tables."""

    metrics: list[MetricResult]
    failures: list[str] = field(default_factory=list)
    breakdown: list[tuple[str, int, float]] | None = None
    clusters: list[tuple[str, int, np.ndarray]] | None = None

    def metric(self, name: str) -> MetricResult:
        for m in self.metrics:
            if m.name == name:
                return m
        raise KeyError(name)

    def render(self) -> str:
        lines = ["metric\tmean\tstd\truns"]
        for m in self.metrics:
            runs = ",".join(f"{v:.6f}" for v in m.values)
            lines.append(f"{m.name}\t{m.mean:.6f}\t{m.std:.6f}\t{runs}")
        if self.breakdown is not None:
            lines.append("")
            lines.append("chunks\tgroups\tR@1")
            for label, count, value in self.breakdown:
                lines.append(f"{label}\t{count}\t{value:.6f}")
        if self.clusters is not None:
            lines.append("")
            lines.extend(render_cluster_rows(self.clusters))
        for failure in self.failures:
            lines.append(f"failed\t{failure}")
        return "\n".join(lines) + "\n"


def render_cluster_rows(rows: Sequence[tuple[str, int, np.ndarray]]) -> list[str]:
    """Tab-separated lines for a per-category cluster proportion table."""
    width = len(rows[0][2]) if rows else 0
    header = "\t".join(f"cluster{j}" for j in range(width))
    lines = [f"category\tsamples\t{header}"]
    for label, count, props in rows:
        cells = "\t".join(f"{v:.6f}" for v in props)
        lines.append(f"{label}\t{count}\t{cells}")
    return lines


def evaluate_runs(run: Callable[[int], dict[str, float]], seeds: Sequence[int],
                  metric_names: Sequence[str] | None = None) -> EvalReport:
    """Run a train/evaluate cycle per seed and aggregate mean and std.

    A run that raises is recorded in the report's failure list rather
    than silently dropped; statistics cover the completed runs. All runs
    failing is an error.
    """
    from .training import TrainingDiverged

    if not seeds:
        raise ValueError("evaluate_runs needs at least one seed")
    collected: dict[str, list[float]] = {}
    names: list[str] = list(metric_names) if metric_names else []
    failures: list[str] = []
    for seed in seeds:
        try:
            values = run(seed)
        except TrainingDiverged as exc:
            failures.append(f"seed {seed}: {exc}")
            continue
        if not names:
            names = list(values)
        for name in names:
            collected.setdefault(name, []).append(values[name])
    if not collected:
        raise RuntimeError("every run failed: " + "; ".join(failures))
    return EvalReport([MetricResult(name, collected[name]) for name in names],
                      failures=failures)


def score_candidate_groups(model, groups: Sequence[CandidateGroup], max_words: int,
                           max_chunks: int, batch_size: int = 256,
                           workers: int = 1) -> list[CandidateGroup]:
    """Score every candidate against its question; returns scored copies.

    Candidates are packed into flat batches across group boundaries; with
    workers > 1 the batches are scored by a thread pool over the frozen
    model, which changes nothing about the results.
    """
    triples = [RankingTriple(g.question, candidate, flag)
               for g in groups
               for candidate, flag in zip(g.candidates, g.flags)]
    batches = batchify(triples, max_words, max_chunks, batch_size)

    def run(batch):
        return model_forward(model, batch, training=False).data

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pieces = list(pool.map(run, batches))
    else:
        pieces = [run(b) for b in batches]
    flat = np.concatenate(pieces) if pieces else np.zeros(0, dtype=np.float32)
    scored = []
    cursor = 0
    for g in groups:
        scored.append(replace(g, scores=flat[cursor:cursor + g.size].copy()))
        cursor += g.size
    return scored


@dataclass
class CorpusStats:
    """Document frequencies backing the TF-IDF scorer."""

    doc_count: int
    doc_freq: dict[str, int]

    def idf(self, token: str) -> float:
        return float(np.log(self.doc_count / (1.0 + self.doc_freq.get(token, 0))) + 1.0)


def build_corpus_stats(docs: Iterable[Sequence[str]]) -> CorpusStats:
    doc_freq: dict[str, int] = {}
    count = 0
    for tokens in docs:
        count += 1
        for token in set(tokens):
            doc_freq[token] = doc_freq.get(token, 0) + 1
    if count == 0:
        raise DataError("corpus statistics need at least one document")
    return CorpusStats(count, doc_freq)


def _tfidf_vector(tokens: Sequence[str], stats: CorpusStats) -> dict[str, float]:
    weights: dict[str, float] = {}
    for token in tokens:
        weights[token] = weights.get(token, 0.0) + 1.0
    return {t: tf * stats.idf(t) for t, tf in weights.items()}


def _cosine(a: dict[str, float], b: dict[str, float]) -> float:
    dot = sum(w * b[t] for t, w in a.items() if t in b)
    na = np.sqrt(sum(w * w for w in a.values()))
    nb = np.sqrt(sum(w * w for w in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(dot / (na * nb))


def tfidf_rank(question: Sequence[str], candidates: Sequence[Sequence[str]],
               stats: CorpusStats) -> np.ndarray:
    """Cosine similarity of TF-IDF vectors between question and candidates."""
    q_vec = _tfidf_vector(question, stats)
    return np.array([_cosine(q_vec, _tfidf_vector(c, stats)) for c in candidates],
                    dtype=np.float64)


def tfidf_score_groups(groups: Sequence[CandidateGroup],
                       stats: CorpusStats | None = None) -> list[CandidateGroup]:
    """Score groups with the TF-IDF baseline instead of a trained model.

    Corpus statistics default to the groups' own texts (questions plus
    candidates), matching an evaluation-corpus baseline.
    """
    texts = []
    for g in groups:
        if g.question_text is None or g.candidate_texts is None:
            raise ValueError("TF-IDF scoring needs raw question/candidate texts")
        texts.append(tokenize(g.question_text))
        texts.extend(tokenize(c) for c in g.candidate_texts)
    if stats is None:
        stats = build_corpus_stats(texts)
    return [replace(g, scores=tfidf_rank(tokenize(g.question_text),
                                         [tokenize(c) for c in g.candidate_texts], stats))
            for g in groups]


DEGRADATION_TOP_BUCKET = 13


def degradation_report(groups: Sequence[CandidateGroup]) -> list[tuple[str, int, float]]:
    """Top-1 recall bucketed by the question's chunk count.

    Unit-width buckets run up to 12 chunks; 13 and beyond pool into a
    "13+" bucket. Buckets with no groups are omitted.
    """
    buckets: dict[int, list[CandidateGroup]] = {}
    for g in groups:
        count = min(g.question.chunk_count, DEGRADATION_TOP_BUCKET)
        buckets.setdefault(count, []).append(g)
    rows = []
    for count in sorted(buckets):
        label = f"{DEGRADATION_TOP_BUCKET}+" if count == DEGRADATION_TOP_BUCKET else str(count)
        rows.append((label, len(buckets[count]), recall_at_k(buckets[count], 1)))
    return rows


def cluster_assignments(model, texts: Sequence[ChunkedText], max_words: int = 40,
                        max_chunks: int = 14, batch_size: int = 256) -> np.ndarray:
    """Most-similar topic cluster per text (ties to the lowest cluster)."""
    if getattr(model, "ltc", None) is None:
        raise ValueError("cluster assignment needs a model with a topic memory")
    picks = []
    for start in range(0, len(texts), batch_size):
        part = texts[start:start + batch_size]
        grids = grids_from_texts(part, max_words, max_chunks)
        encoded = model.encode_side(grids)
        probs = ltc_probs(model.ltc, encoded)
        picks.append(np.argmax(probs.data, axis=1))
    return np.concatenate(picks) if picks else np.zeros(0, dtype=np.int64)


def cluster_report(model, samples: Sequence[tuple[ChunkedText, str]], max_words: int = 40,
                   max_chunks: int = 14) -> list[tuple[str, int, np.ndarray]]:
    """Per-category proportions of topic-cluster assignments.

    Each row is (category, sample count, proportions over the K clusters);
    proportions sum to 1 per category.
    """
    if not samples:
        raise ValueError("cluster report needs at least one sample")
    texts = [text for text, _ in samples]
    labels = [label for _, label in samples]
    assigned = cluster_assignments(model, texts, max_words, max_chunks)
    k = model.ltc.clusters
    rows = []
    for category in sorted(set(labels)):
        mask = np.array([lab == category for lab in labels])
        counts = np.bincount(assigned[mask], minlength=k).astype(np.float64)
        rows.append((category, int(mask.sum()), counts / counts.sum()))
    return rows


def load_candidate_groups(path: str, vocab: Vocabulary,
                          delimiter) -> list[CandidateGroup]:
    """Read the grouped evaluation TSV: group_id, flag, question, candidate.

    Rows of one group must be consecutive and share the question text.
    """
    raw: list[tuple[str, int, str, str]] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(
                    f"{path}: line {lineno}: expected group_id<TAB>flag<TAB>question<TAB>candidate")
            if parts[1] not in ("0", "1"):
                raise DataError(f"{path}: line {lineno}: flag must be 0 or 1, got {parts[1]!r}")
            raw.append((parts[0], int(parts[1]), parts[2], parts[3]))
    if not raw:
        raise DataError(f"{path}: no groups found")
    groups = []
    start = 0
    for i in range(1, len(raw) + 1):
        if i < len(raw) and raw[i][0] == raw[start][0]:
            continue
        rows = raw[start:i]
        question_text = rows[0][2]
        if any(r[2] != question_text for r in rows):
            raise DataError(f"{path}: group {rows[0][0]!r} mixes different question texts")
        groups.append(CandidateGroup(
            question=text_to_chunked(question_text, vocab, delimiter),
            candidates=[text_to_chunked(r[3], vocab, delimiter) for r in rows],
            flags=[r[1] for r in rows],
            question_text=question_text,
            candidate_texts=[r[3] for r in rows]))
        start = i
    return groups


def write_candidate_groups(
        path: str, groups: Sequence[tuple[str, str, list[tuple[int, str]]]]) -> None:
    """Write raw grouped rows: (group_id, question, [(flag, candidate), ...])."""
    with open(path, "w", encoding="utf-8") as f:
        for group_id, question, rows in groups:
            for flag, candidate in rows:
                f.write(f"{group_id}\t{flag}\t{question}\t{candidate}\n")
