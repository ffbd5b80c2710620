"""Tokenization, vocabulary, chunk splitting, embeddings, sampling, batching.

Texts flow through: tokenize -> chunk_split -> Vocabulary ids -> ChunkedText
-> batchify into padded integer grids with true-length masks. Everything
downstream of the raw files is deterministic given the seeds handed in.
"""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

PAD_TOKEN = "_pad_"
UNK_TOKEN = "_unk_"
PAD_ID = 0
UNK_ID = 1

EOS_TOKEN = "_eos_"
EOT_TOKEN = "_eot_"
SENTENCE_DELIMITERS = frozenset({".", "?", "!"})


class DataError(ValueError):
    """Malformed input data; the message names the offending location."""


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace; delimiter tokens stay standalone."""
    return text.lower().split()


class Vocabulary:
    """Token <-> id mapping with PAD and UNK reserved at ids 0 and 1.

    Unknown tokens map to UNK on lookup. Structural delimiter tokens
    (``_eos_``/``_eot_``) get fixed early ids whenever the corpus contains
    them, regardless of frequency.
    """

    def __init__(self, tokens: Sequence[str]):
        if len(tokens) < 2 or tokens[0] != PAD_TOKEN or tokens[1] != UNK_TOKEN:
            raise DataError("vocabulary must start with the PAD and UNK tokens")
        self._tokens = list(tokens)
        self._ids = {t: i for i, t in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise DataError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self._tokens)

    @property
    def size(self) -> int:
        return len(self._tokens)

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def token(self, i: int) -> str:
        return self._tokens[i]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self._ids.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self._tokens[i] for i in ids]

    def encode_chunks(self, chunks: Sequence[Sequence[str]]) -> "ChunkedText":
        return ChunkedText([self.encode(c) for c in chunks])

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for t in self._tokens:
                f.write(t + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        return cls(tokens)


def build_vocab(corpus: Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Build a vocabulary from a stream of token lists.

    Tokens with frequency >= min_count are assigned ids in descending
    frequency order (ties lexicographic) after the reserved entries.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    for tokens in corpus:
        counts.update(tokens)
    if not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    tokens = [PAD_TOKEN, UNK_TOKEN]
    for special in (EOS_TOKEN, EOT_TOKEN):
        if special in counts:
            tokens.append(special)
            del counts[special]
    counts.pop(PAD_TOKEN, None)
    counts.pop(UNK_TOKEN, None)
    kept = [(t, c) for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda tc: (-tc[1], tc[0]))
    tokens.extend(t for t, _ in kept)
    return Vocabulary(tokens)


def resolve_delimiter(kind: str) -> str | frozenset[str]:
    """Map a delimiter option to the token (or token set) chunk_split uses."""
    if kind == EOS_TOKEN:
        return EOS_TOKEN
    if kind == EOT_TOKEN:
        return EOT_TOKEN
    if kind == "sentence":
        return SENTENCE_DELIMITERS
    raise ValueError(f"unknown delimiter kind: {kind!r}")


def chunk_split(tokens: Sequence[str], delimiter: str | frozenset[str]) -> list[list[str]]:
    """Split a token list into chunks at each delimiter occurrence.

    Delimiter tokens are dropped and empty chunks removed. Input without
    any delimiter becomes a single chunk; input that is all delimiters
    becomes a single UNK chunk so no text ever ends up chunkless.
    """
    if isinstance(delimiter, str):
        is_delim = delimiter.__eq__
    else:
        is_delim = delimiter.__contains__
    chunks: list[list[str]] = []
    current: list[str] = []
    for t in tokens:
        if is_delim(t):
            if current:
                chunks.append(current)
                current = []
        else:
            current.append(t)
    if current:
        chunks.append(current)
    if not chunks:
        chunks = [[UNK_TOKEN]]
    return chunks


@dataclass
class ChunkedText:
    """A text as an ordered list of chunks of token ids."""

    chunks: list[list[int]]

    def __post_init__(self):
        if not self.chunks:
            raise DataError("a chunked text needs at least one chunk")
        if any(len(c) == 0 for c in self.chunks):
            raise DataError("chunked text contains an empty chunk")

    @property
    def chunk_count(self) -> int:
        return len(self.chunks)

    @property
    def token_count(self) -> int:
        return sum(len(c) for c in self.chunks)

    def flat(self) -> list[int]:
        return [i for c in self.chunks for i in c]


def text_to_chunked(text: str, vocab: Vocabulary, delimiter: str | frozenset[str]) -> ChunkedText:
    """Tokenize, chunk, and id-encode one raw text."""
    return vocab.encode_chunks(chunk_split(tokenize(text), delimiter))


@dataclass
class RankingTriple:
    """(question, answer, flag) with flag 1 for the true answer.

    question/answer hold ChunkedText in the model pipeline; the sampling
    stage also runs on raw strings before ids exist.
    """

    question: object
    answer: object
    flag: int

    def __post_init__(self):
        if self.flag not in (0, 1):
            raise DataError(f"triple flag must be 0 or 1, got {self.flag!r}")


def negative_sample(pairs: Sequence[tuple], n_neg: int,
                    rng: np.random.Generator) -> list[RankingTriple]:
    """Expand (question, true answer) pairs into labelled triples.

    Each pair contributes one flag=1 triple followed by n_neg flag=0
    triples whose answers are drawn uniformly without replacement from the
    other pairs' answers, never the pair's own true answer.
    """
    if n_neg < 0:
        raise ValueError(f"n_neg must be >= 0, got {n_neg}")
    if n_neg > 0 and len(pairs) < 2:
        raise DataError("negative sampling needs at least two pairs")
    if n_neg > len(pairs) - 1:
        raise DataError(
            f"cannot draw {n_neg} negatives without replacement from {len(pairs) - 1} other answers")
    triples: list[RankingTriple] = []
    for i, (question, answer) in enumerate(pairs):
        triples.append(RankingTriple(question, answer, 1))
        if n_neg:
            pool = np.array([j for j in range(len(pairs)) if j != i])
            picks = rng.choice(pool, size=n_neg, replace=False)
            for j in picks:
                triples.append(RankingTriple(question, pairs[int(j)][1], 0))
    return triples


@dataclass
class TextGrids:
    """Padded grids for one side (questions or answers) of a batch.

    ``ids`` is [B, C, T] with PAD beyond the per-chunk lengths in
    ``lens`` and the per-text chunk counts in ``chunks``; ``flat`` holds
    the chunk-concatenated token rows the flat encoder consumes.
    """

    ids: np.ndarray
    lens: np.ndarray
    chunks: np.ndarray
    flat: np.ndarray
    flat_lens: np.ndarray


@dataclass
class Batch:
    """Question/answer grids plus binary flags for one mini-batch."""

    questions: TextGrids
    answers: TextGrids
    flags: np.ndarray

    @property
    def size(self) -> int:
        return int(self.flags.shape[0])


def grids_from_texts(texts: Sequence[ChunkedText], max_words: int, max_chunks: int) -> TextGrids:
    """Truncate and pad a list of chunked texts into rectangular grids.

    Chunks keep their first max_words tokens; texts keep their last
    max_chunks chunks (the most recent turns carry the answer cue).
    """
    if max_words < 1 or max_chunks < 1:
        raise ValueError("max_words and max_chunks must be >= 1")
    kept = [[c[:max_words] for c in t.chunks[-max_chunks:]] for t in texts]
    n = len(kept)
    c_max = max(len(t) for t in kept)
    t_max = max(len(c) for t in kept for c in t)
    ids = np.zeros((n, c_max, t_max), dtype=np.int64)
    lens = np.zeros((n, c_max), dtype=np.int64)
    chunks = np.zeros(n, dtype=np.int64)
    flats = [[tok for c in t for tok in c] for t in kept]
    f_max = max(len(f) for f in flats)
    flat = np.zeros((n, f_max), dtype=np.int64)
    flat_lens = np.zeros(n, dtype=np.int64)
    for i, t in enumerate(kept):
        chunks[i] = len(t)
        for c, chunk in enumerate(t):
            lens[i, c] = len(chunk)
            ids[i, c, :len(chunk)] = chunk
        flat[i, :len(flats[i])] = flats[i]
        flat_lens[i] = len(flats[i])
    return TextGrids(ids, lens, chunks, flat, flat_lens)


def batchify(triples: Sequence[RankingTriple], max_words: int, max_chunks: int,
             batch_size: int = 64) -> list[Batch]:
    """Pack triples into padded batches of at most batch_size rows."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    batches = []
    for start in range(0, len(triples), batch_size):
        part = triples[start:start + batch_size]
        q = grids_from_texts([t.question for t in part], max_words, max_chunks)
        a = grids_from_texts([t.answer for t in part], max_words, max_chunks)
        flags = np.array([t.flag for t in part], dtype=np.float32)
        batches.append(Batch(q, a, flags))
    return batches


def load_embeddings(path: str, vocab: Vocabulary, dim: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Read a text embedding file into a [V, dim] matrix.

    File rows are "token v1 ... v_dim". Vocabulary tokens missing from the
    file are initialized uniform(-0.25, 0.25); the PAD row is zero.
    """
    if not os.path.isfile(path):
        raise DataError(f"embedding file not readable: {path}")
    matrix = rng.uniform(-0.25, 0.25, size=(vocab.size, dim)).astype(np.float32)
    matrix[PAD_ID] = 0.0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise DataError(
                    f"{path}: line {lineno}: expected {dim} embedding values, found {len(values)}")
            if token in vocab:
                matrix[vocab.id(token)] = np.array(values, dtype=np.float32)
    matrix[PAD_ID] = 0.0
    return matrix


def load_pairs(path: str) -> list[tuple[str, str]]:
    """Read question/answer pairs from a two-column TSV."""
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise DataError(f"{path}: line {lineno}: expected question<TAB>answer")
            pairs.append((parts[0], parts[1]))
    if not pairs:
        raise DataError(f"{path}: no pairs found")
    return pairs


def load_triples(path: str, vocab: Vocabulary,
                 delimiter: str | frozenset[str]) -> list[RankingTriple]:
    """Read flag<TAB>question<TAB>answer rows into id-encoded triples."""
    triples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}: line {lineno}: expected flag<TAB>question<TAB>answer")
            if parts[0] not in ("0", "1"):
                raise DataError(f"{path}: line {lineno}: flag must be 0 or 1, got {parts[0]!r}")
            triples.append(RankingTriple(text_to_chunked(parts[1], vocab, delimiter),
                                         text_to_chunked(parts[2], vocab, delimiter),
                                         int(parts[0])))
    if not triples:
        raise DataError(f"{path}: no triples found")
    return triples


def write_triples(path: str, triples: Sequence[RankingTriple]) -> None:
    """Write raw-text triples as flag<TAB>question<TAB>answer rows."""
    with open(path, "w", encoding="utf-8") as f:
        for t in triples:
            f.write(f"{t.flag}\t{t.question}\t{t.answer}\n")
