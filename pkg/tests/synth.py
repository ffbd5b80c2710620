"""Deterministic synthetic corpora with planted structure.

Three generator families back the system-level tests:

* ``keyed_corpus`` — flat short texts where question and answer share one
  rare key token; solvable by any encoder that learns to latch the key.
* ``chunked_corpus`` — a mix of 1-2 chunk and 13-15 chunk questions whose
  answer key appears in the first chunk while later chunks contain
  distractor keys; rewards encoders that keep early evidence intact.
* ``family_corpus`` — three disjoint filler vocabularies ("topic
  families") sharing one key inventory, so ranking needs the key and the
  family; includes filler-only labeled samples for cluster reports.

Every function is zero-argument and seeded internally, so repeated calls
produce byte-identical data.
"""

from dataclasses import dataclass

import numpy as np

from rankhier.evaluation import CandidateGroup
from rankhier.models import ModelConfig
from rankhier.text import ChunkedText, RankingTriple, Vocabulary, build_vocab, text_to_chunked, tokenize
from rankhier.training import TrainConfig


@dataclass
class Corpus:
    """A ready-to-train bundle: vocabulary, triples, and candidate groups."""

    vocab: Vocabulary
    train: list[RankingTriple]
    valid: list[CandidateGroup]
    test: list[CandidateGroup]
    samples: list[tuple[ChunkedText, str]] | None = None


def _id_text(s: str, vocab: Vocabulary) -> ChunkedText:
    return text_to_chunked(s, vocab, "_eos_")


def _zipf_weights(n: int) -> np.ndarray:
    p = 1.0 / np.arange(1, n + 1)
    return p / p.sum()


# --------------------------------------------------------------------------
# Keyed corpus: flat texts, one shared key token per pair.

KEYED_N_KEYS = 40
KEYED_N_FILLERS = 158
KEYED_TEXT_LEN = 8
KEYED_SEEDS = (1, 2, 3, 4, 5)


def _keyed_pairs(rng: np.random.Generator, n: int) -> list[tuple[str, str, str]]:
    keys = [f"key{i:02d}" for i in range(KEYED_N_KEYS)]
    fillers = np.array([f"w{i:03d}" for i in range(KEYED_N_FILLERS)])
    p = _zipf_weights(KEYED_N_FILLERS)
    pairs = []
    for _ in range(n):
        k = keys[int(rng.integers(0, KEYED_N_KEYS))]

        def text() -> str:
            toks = list(rng.choice(fillers, KEYED_TEXT_LEN - 1, p=p))
            toks.insert(int(rng.integers(0, KEYED_TEXT_LEN)), k)
            return " ".join(toks)

        pairs.append((text(), text(), k))
    return pairs


def _keyed_groups(pairs, pool, rng, vocab, n_cand=10) -> list[CandidateGroup]:
    groups = []
    for q, a, k in pairs:
        cands, flags = [a], [1]
        while len(cands) < n_cand:
            j = int(rng.integers(0, len(pool)))
            if pool[j][2] != k:
                cands.append(pool[j][1])
                flags.append(0)
        order = rng.permutation(n_cand)
        groups.append(CandidateGroup(
            question=_id_text(q, vocab),
            candidates=[_id_text(cands[i], vocab) for i in order],
            flags=[flags[i] for i in order],
            question_text=q,
            candidate_texts=[cands[i] for i in order]))
    return groups


def keyed_corpus() -> Corpus:
    """2000 train pairs plus 100/200 evaluation groups of 10 candidates.

    Evaluation groups carry raw texts so lexical baselines can score them.
    """
    rng = np.random.default_rng(2024)
    pairs = _keyed_pairs(rng, 2300)
    train_p, valid_p, test_p = pairs[:2000], pairs[2000:2100], pairs[2100:2300]
    vocab = build_vocab([tokenize(t) for q, a, _ in pairs for t in (q, a)], 1)
    triples = []
    for q, a, k in train_p:
        triples.append(RankingTriple(_id_text(q, vocab), _id_text(a, vocab), 1))
        j = int(rng.integers(0, len(train_p)))
        while train_p[j][2] == k:
            j = int(rng.integers(0, len(train_p)))
        triples.append(RankingTriple(_id_text(q, vocab), _id_text(train_p[j][1], vocab), 0))
    valid = _keyed_groups(valid_p, train_p, rng, vocab)
    test = _keyed_groups(test_p, train_p, rng, vocab)
    return Corpus(vocab, triples, valid, test)


def keyed_config(vocab_size: int, seed: int) -> TrainConfig:
    return TrainConfig(
        model=ModelConfig(vocab_size=vocab_size, kind="rde", embed_dim=16,
                          hidden_dim=24, input_dropout=0.0),
        learning_rate=0.03, epochs=30, batch_size=64, seed=seed,
        max_words=12, max_chunks=2, patience=8)


# --------------------------------------------------------------------------
# Chunked corpus: long questions hide the first-chunk key behind distractors.

CHUNKED_N_KEYS = 20
CHUNKED_N_FILLERS = 120
CHUNKED_CHUNK_LEN = 5
CHUNKED_N_DISTRACT = 3
CHUNKED_SEEDS = (1, 2, 3, 4, 5)
CHUNKED_MAX_WORDS = 6
CHUNKED_MAX_CHUNKS = 15


def _chunk(rng, fillers, p, key=None) -> str:
    toks = list(rng.choice(fillers, CHUNKED_CHUNK_LEN - (1 if key else 0), p=p))
    if key:
        toks.insert(int(rng.integers(0, len(toks) + 1)), key)
    return " ".join(toks)


def _chunked_pairs(rng, n_short, n_long) -> list[tuple[str, str, str, list[str]]]:
    keys = [f"key{i:02d}" for i in range(CHUNKED_N_KEYS)]
    fillers = np.array([f"w{i:03d}" for i in range(CHUNKED_N_FILLERS)])
    p = _zipf_weights(CHUNKED_N_FILLERS)
    pairs = []
    for i in range(n_short + n_long):
        ki = int(rng.integers(0, CHUNKED_N_KEYS))
        k = keys[ki]
        short = i < n_short
        n_chunks = int(rng.integers(1, 3)) if short else int(rng.integers(13, 16))
        chunks = [_chunk(rng, fillers, p, key=k)]
        distract: list[str] = []
        if not short:
            others = [x for x in range(CHUNKED_N_KEYS) if x != ki]
            distract = [keys[j] for j in
                        rng.choice(others, CHUNKED_N_DISTRACT, replace=False)]
        if n_chunks > 1:
            slots = list(rng.choice(np.arange(1, n_chunks),
                                    min(len(distract), n_chunks - 1), replace=False))
        else:
            slots = []
        dmap = dict(zip(slots, distract))
        for c in range(1, n_chunks):
            chunks.append(_chunk(rng, fillers, p, key=dmap.get(c)))
        q = " _eos_ ".join(chunks)
        a = _chunk(rng, fillers, p, key=k)
        pairs.append((q, a, k, distract))
    return pairs


def _pick_keyed(rng, pool, want_keys, exclude_key):
    idx = [j for j, pr in enumerate(pool) if pr[2] in want_keys and pr[2] != exclude_key]
    return pool[int(rng.choice(idx))] if idx else None


def _chunked_groups(pairs, pool, rng, vocab, n_cand=10) -> list[CandidateGroup]:
    groups = []
    for q, a, k, distract in pairs:
        cands, flags = [a], [1]
        for _ in range(min(3, len(distract))):
            hard = _pick_keyed(rng, pool, set(distract), k)
            if hard is not None:
                cands.append(hard[1])
                flags.append(0)
        while len(cands) < n_cand:
            j = int(rng.integers(0, len(pool)))
            if pool[j][2] != k:
                cands.append(pool[j][1])
                flags.append(0)
        order = rng.permutation(n_cand)
        groups.append(CandidateGroup(
            question=_id_text(q, vocab),
            candidates=[_id_text(cands[i], vocab) for i in order],
            flags=[flags[i] for i in order]))
    return groups


def _chunked_triples(train_p, rng, vocab) -> list[RankingTriple]:
    triples = []
    for q, a, k, distract in train_p:
        triples.append(RankingTriple(_id_text(q, vocab), _id_text(a, vocab), 1))
        hard = (_pick_keyed(rng, train_p, set(distract), k)
                if distract and rng.random() < 0.5 else None)
        if hard is None:
            j = int(rng.integers(0, len(train_p)))
            while train_p[j][2] == k:
                j = int(rng.integers(0, len(train_p)))
            hard = train_p[j]
        triples.append(RankingTriple(_id_text(q, vocab), _id_text(hard[1], vocab), 0))
    return triples


def chunked_corpus() -> Corpus:
    """1150 short (1-2 chunk) and 1150 long (13-15 chunk) question pairs.

    The answer key always sits in the first chunk; long questions also
    contain three distractor keys in later chunks, and evaluation groups
    include candidates matching those distractors.
    """
    rng = np.random.default_rng(777)
    pairs = _chunked_pairs(rng, 1150, 1150)
    rng.shuffle(pairs)
    train_p, valid_p, test_p = pairs[:2000], pairs[2000:2140], pairs[2140:2300]
    vocab = build_vocab([tokenize(t) for q, a, _, _ in pairs for t in (q, a)], 1)
    triples = _chunked_triples(train_p, rng, vocab)
    valid = _chunked_groups(valid_p, train_p, rng, vocab)
    test = _chunked_groups(test_p, train_p, rng, vocab)
    return Corpus(vocab, triples, valid, test)


def chunked_config(vocab_size: int, kind: str, seed: int) -> TrainConfig:
    return TrainConfig(
        model=ModelConfig(vocab_size=vocab_size, kind=kind, embed_dim=16,
                          hidden_dim=24, chunk_hidden_dim=24, input_dropout=0.0),
        learning_rate=0.02, epochs=16, batch_size=64, seed=seed,
        max_words=CHUNKED_MAX_WORDS, max_chunks=CHUNKED_MAX_CHUNKS, patience=None)


# --------------------------------------------------------------------------
# Family corpus: three disjoint filler families sharing one key inventory.

FAMILY_N_KEYS = 10
FAMILY_N_FILLERS = 40
FAMILY_TEXT_LEN = 8
FAMILY_ANS_LEN = 12
FAMILIES = ("alpha", "beta", "gamma")
FAMILY_SEEDS = (2, 3, 4, 5, 6)
FAMILY_MAX_WORDS = 14
FAMILY_MAX_CHUNKS = 2


def _family_fillers() -> dict[str, np.ndarray]:
    return {f: np.array([f"{f[0]}{i:03d}" for i in range(FAMILY_N_FILLERS)])
            for f in FAMILIES}


def _family_text(rng, fillers, p, key, n=FAMILY_TEXT_LEN) -> str:
    toks = list(rng.choice(fillers, n - 1, p=p))
    toks.insert(int(rng.integers(0, n)), key)
    return " ".join(toks)


def _family_pairs(rng, n) -> list[tuple[str, str, str, str]]:
    keys = [f"key{i:02d}" for i in range(FAMILY_N_KEYS)]
    fam_fillers = _family_fillers()
    p = _zipf_weights(FAMILY_N_FILLERS)
    pairs = []
    for _ in range(n):
        fam = FAMILIES[int(rng.integers(0, 3))]
        k = keys[int(rng.integers(0, FAMILY_N_KEYS))]
        q = _family_text(rng, fam_fillers[fam], p, k)
        a = _family_text(rng, fam_fillers[fam], p, k, FAMILY_ANS_LEN)
        pairs.append((q, a, fam, k))
    return pairs


def _pick_family(rng, pool, pred):
    idx = [j for j, pr in enumerate(pool) if pred(pr)]
    return pool[int(rng.choice(idx))] if idx else None


def _family_groups(pairs, pool, rng, vocab, n_cand=10) -> list[CandidateGroup]:
    groups = []
    for q, a, fam, k in pairs:
        cands, flags = [a], [1]
        for _ in range(3):  # same key, other family
            c = _pick_family(rng, pool, lambda pr: pr[3] == k and pr[2] != fam)
            if c is not None:
                cands.append(c[1])
                flags.append(0)
        for _ in range(3):  # same family, other key
            c = _pick_family(rng, pool, lambda pr: pr[2] == fam and pr[3] != k)
            if c is not None:
                cands.append(c[1])
                flags.append(0)
        while len(cands) < n_cand:
            j = int(rng.integers(0, len(pool)))
            if pool[j][3] != k or pool[j][2] != fam:
                cands.append(pool[j][1])
                flags.append(0)
        order = rng.permutation(n_cand)
        groups.append(CandidateGroup(
            question=_id_text(q, vocab),
            candidates=[_id_text(cands[i], vocab) for i in order],
            flags=[flags[i] for i in order]))
    return groups


def _family_triples(train_p, rng, vocab) -> list[RankingTriple]:
    triples = []
    for q, a, fam, k in train_p:
        triples.append(RankingTriple(_id_text(q, vocab), _id_text(a, vocab), 1))
        roll = rng.random()
        if roll < 0.50:
            c = _pick_family(rng, train_p, lambda pr: pr[3] == k and pr[2] != fam)
        elif roll < 0.75:
            c = _pick_family(rng, train_p, lambda pr: pr[2] == fam and pr[3] != k)
        else:
            c = None
        if c is None:
            j = int(rng.integers(0, len(train_p)))
            while train_p[j][3] == k and train_p[j][2] == fam:
                j = int(rng.integers(0, len(train_p)))
            c = train_p[j]
        triples.append(RankingTriple(_id_text(q, vocab), _id_text(c[1], vocab), 0))
    return triples


def family_corpus() -> Corpus:
    """Pairs over three topic families with shared keys, plus labeled samples.

    Negatives emphasize the two hard confusions: same key in another
    family, and same family with another key. The attached samples are
    filler-only texts labeled with their family, for cluster reports.
    """
    rng = np.random.default_rng(4242)
    pairs = _family_pairs(rng, 2300)
    train_p, valid_p, test_p = pairs[:2000], pairs[2000:2100], pairs[2100:2300]
    vocab = build_vocab([tokenize(t) for q, a, _, _ in pairs for t in (q, a)], 1)
    triples = _family_triples(train_p, rng, vocab)
    valid = _family_groups(valid_p, train_p, rng, vocab)
    test = _family_groups(test_p, train_p, rng, vocab)
    fam_fillers = _family_fillers()
    pz = _zipf_weights(FAMILY_N_FILLERS)
    samples = []
    for fam in FAMILIES:
        for _ in range(60):
            toks = " ".join(rng.choice(fam_fillers[fam], FAMILY_ANS_LEN, p=pz))
            samples.append((_id_text(toks, vocab), fam))
    return Corpus(vocab, triples, valid, test, samples=samples)


def family_config(vocab_size: int, kind: str, seed: int) -> TrainConfig:
    return TrainConfig(
        model=ModelConfig(vocab_size=vocab_size, kind=kind, embed_dim=16,
                          hidden_dim=24, ltc_clusters=3, ltc_dim=24,
                          input_dropout=0.0, memory_dropout=0.8),
        learning_rate=0.05, epochs=25, batch_size=64, seed=seed,
        max_words=FAMILY_MAX_WORDS, max_chunks=FAMILY_MAX_CHUNKS, patience=None)
