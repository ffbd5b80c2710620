"""The ranking model family: GRU encoders, topic memory, bilinear scoring.

Four model kinds share one skeleton: encode the question and the answer
into vectors (flat word-level recurrence, or word-level per chunk followed
by a chunk-level recurrence), optionally augment one side with a latent
topic summary, then score the pair with a sigmoid bilinear form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import (
    Parameter,
    ShapeError,
    Tensor,
    activate,
    add,
    affine,
    concat,
    dropout,
    matmul,
    mul,
    reshape,
    row_sum,
    softmax,
    sub,
    take_rows,
    transpose,
)
from .text import Batch, ChunkedText, TextGrids, grids_from_texts

MODEL_KINDS = ("rde", "rde-ltc", "hrde", "hrde-ltc")
LTC_SIDES = ("question", "answer")


@dataclass
class ModelConfig:
    """Dimensions and switches that define one model instance.

    ``input_dropout`` left as None resolves to the per-kind default:
    0.2 for the flat encoders, 0.3 for the word-level stage of the
    hierarchical ones. ``memory_dropout`` is the drop probability applied
    to the topic memory during training.
    """

    vocab_size: int
    kind: str = "rde"
    embed_dim: int = 300
    hidden_dim: int = 300
    chunk_hidden_dim: int = 300
    ltc_clusters: int = 3
    ltc_dim: int = 256
    ltc_side: str = "answer"
    input_dropout: float | None = None
    memory_dropout: float = 0.8

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.ltc_side not in LTC_SIDES:
            raise ValueError(f"ltc_side must be 'question' or 'answer', got {self.ltc_side!r}")
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must cover PAD and UNK, got {self.vocab_size}")
        for field in ("embed_dim", "hidden_dim", "chunk_hidden_dim"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be >= 1")
        if self.uses_ltc and (self.ltc_clusters < 1 or self.ltc_dim < 1):
            raise ValueError("ltc_clusters and ltc_dim must be >= 1")
        if self.input_dropout is not None and not 0.0 <= self.input_dropout < 1.0:
            raise ValueError(f"input_dropout must be in [0, 1), got {self.input_dropout}")
        if not 0.0 <= self.memory_dropout < 1.0:
            raise ValueError(f"memory_dropout must be in [0, 1), got {self.memory_dropout}")

    @property
    def hierarchical(self) -> bool:
        return self.kind.startswith("hrde")

    @property
    def uses_ltc(self) -> bool:
        return self.kind.endswith("-ltc")

    @property
    def encoder_dim(self) -> int:
        """Width of the per-text encoding before any topic augmentation."""
        return self.chunk_hidden_dim if self.hierarchical else self.hidden_dim

    @property
    def input_dropout_rate(self) -> float:
        if self.input_dropout is not None:
            return self.input_dropout
        return 0.3 if self.hierarchical else 0.2

    @property
    def question_dim(self) -> int:
        extra = self.ltc_dim if self.uses_ltc and self.ltc_side == "question" else 0
        return self.encoder_dim + extra

    @property
    def answer_dim(self) -> int:
        extra = self.ltc_dim if self.uses_ltc and self.ltc_side == "answer" else 0
        return self.encoder_dim + extra


def orthogonal_init(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Orthonormal matrix from the QR factorization of a Gaussian draw.

    The Q factor's columns are sign-corrected by the diagonal of R so the
    result is a deterministic function of the draw.
    """
    flip = rows < cols
    a = rng.standard_normal((cols, rows) if flip else (rows, cols))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return (q.T if flip else q).astype(np.float32)


def xavier_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols)).astype(np.float32)


def init_embeddings(rng: np.random.Generator, vocab_size: int, dim: int) -> np.ndarray:
    matrix = rng.uniform(-0.25, 0.25, size=(vocab_size, dim)).astype(np.float32)
    matrix[0] = 0.0
    return matrix


class GRUCell:
    """Parameter bundle for one gated recurrent unit.

    Input maps W_* are [hidden, input]; recurrent maps U_* are
    [hidden, hidden] and orthogonally initialized; biases start at zero.
    """

    def __init__(self, name: str, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.w_z = Parameter(f"{name}.w_z", xavier_uniform(rng, hidden_dim, input_dim))
        self.u_z = Parameter(f"{name}.u_z", orthogonal_init(rng, hidden_dim, hidden_dim))
        self.b_z = Parameter(f"{name}.b_z", np.zeros(hidden_dim, dtype=np.float32))
        self.w_r = Parameter(f"{name}.w_r", xavier_uniform(rng, hidden_dim, input_dim))
        self.u_r = Parameter(f"{name}.u_r", orthogonal_init(rng, hidden_dim, hidden_dim))
        self.b_r = Parameter(f"{name}.b_r", np.zeros(hidden_dim, dtype=np.float32))
        self.w_h = Parameter(f"{name}.w_h", xavier_uniform(rng, hidden_dim, input_dim))
        self.u_h = Parameter(f"{name}.u_h", orthogonal_init(rng, hidden_dim, hidden_dim))
        self.b_h = Parameter(f"{name}.b_h", np.zeros(hidden_dim, dtype=np.float32))

    def parameters(self) -> list[Parameter]:
        return [self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r,
                self.w_h, self.u_h, self.b_h]


def _gru_step_rows(cell: GRUCell, h_prev, x):
    update = activate(add(affine(x, cell.w_z, cell.b_z), affine(h_prev, cell.u_z)), "sigmoid")
    reset = activate(add(affine(x, cell.w_r, cell.b_r), affine(h_prev, cell.u_r)), "sigmoid")
    candidate = activate(
        add(affine(x, cell.w_h, cell.b_h), affine(mul(reset, h_prev), cell.u_h)), "tanh")
    return add(mul(sub(1.0, update), h_prev), mul(update, candidate))


def gru_step(cell: GRUCell, h_prev, x):
    """One recurrence step; accepts single vectors or [B, ·] row batches."""
    h_prev = h_prev if isinstance(h_prev, Tensor) else Tensor(h_prev)
    x = x if isinstance(x, Tensor) else Tensor(x)
    if h_prev.ndim == 1:
        out = _gru_step_rows(cell, reshape(h_prev, (1, -1)), reshape(x, (1, -1)))
        return reshape(out, (out.shape[1],))
    return _gru_step_rows(cell, h_prev, x)


def encode_sequence(cell: GRUCell, embedded, true_length: int):
    """Run the recurrence from a zero state over the first true_length steps."""
    embedded = embedded if isinstance(embedded, Tensor) else Tensor(embedded)
    steps = embedded.shape[0]
    if not 1 <= true_length <= steps:
        raise ValueError(f"true_length must be in [1, {steps}], got {true_length}")
    h = Tensor(np.zeros((1, cell.hidden_dim), dtype=np.float32))
    for t in range(true_length):
        h = _gru_step_rows(cell, h, take_rows(embedded, np.array([t])))
    return reshape(h, (cell.hidden_dim,))


def _encode_id_rows(cell: GRUCell, embedding: Parameter, ids: np.ndarray,
                    lengths: np.ndarray, rate: float, training: bool, rng):
    """Masked batched recurrence over padded id rows; returns [N, hidden].

    Rows are frozen exactly once their true length is exhausted, so PAD
    columns beyond max(lengths) never enter the computation at all.
    """
    n = ids.shape[0]
    h = Tensor(np.zeros((n, cell.hidden_dim), dtype=np.float32))
    for t in range(int(lengths.max())):
        x = take_rows(embedding, ids[:, t])
        if training and rate:
            x = dropout(x, rate, training, rng)
        h_new = _gru_step_rows(cell, h, x)
        alive = Tensor((lengths > t).astype(np.float32)[:, None])
        h = add(mul(alive, h_new), mul(sub(1.0, alive), h))
    return h


class TopicMemory:
    """Learned bank of topic vectors matched against encodings by softmax.

    When the incoming encoding width differs from the memory width, a
    projection maps the encoding down before the dot products; the
    concatenated output always keeps the unprojected encoding.
    """

    def __init__(self, clusters: int, dim: int, input_dim: int, rng: np.random.Generator):
        self.clusters = clusters
        self.dim = dim
        self.input_dim = input_dim
        self.memory = Parameter(
            "ltc.memory", rng.uniform(-0.1, 0.1, size=(clusters, dim)).astype(np.float32))
        self.projection = None
        if input_dim != dim:
            self.projection = Parameter("ltc.projection", xavier_uniform(rng, dim, input_dim))

    def parameters(self) -> list[Parameter]:
        params = [self.memory]
        if self.projection is not None:
            params.append(self.projection)
        return params


def _ltc_match(ltc: TopicMemory, x, memory):
    if x.shape[1] != ltc.dim and ltc.projection is None:
        raise ShapeError(
            f"encoding width {x.shape[1]} does not match topic memory width {ltc.dim} "
            "and no projection is present")
    matched = affine(x, ltc.projection) if ltc.projection is not None else x
    return softmax(matmul(matched, transpose(memory)))


def ltc_probs(ltc: TopicMemory, x):
    """Softmax match of encodings against the topic memory; rows sum to 1."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim == 1:
        probs = _ltc_match(ltc, reshape(x, (1, -1)), ltc.memory)
        return reshape(probs, (ltc.clusters,))
    return _ltc_match(ltc, x, ltc.memory)


def ltc_apply(ltc: TopicMemory, x, rate: float = 0.0, training: bool = False, rng=None):
    """Append the probability-weighted topic summary to each encoding.

    Output rows are [x, sum_k p_k * memory_k]; the first input_dim
    coordinates are the input unchanged. Training mode drops memory
    entries (one draw reused for both the match and the summary).
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    single = x.ndim == 1
    rows = reshape(x, (1, -1)) if single else x
    memory = dropout(ltc.memory, rate, training, rng) if training and rate else ltc.memory
    probs = _ltc_match(ltc, rows, memory)
    summary = matmul(probs, memory)
    out = concat(rows, summary)
    return reshape(out, (out.shape[1],)) if single else out


def score_pair(m: Parameter, b: Parameter, q_vec, a_vec):
    """Sigmoid bilinear match sigma(q . M a + b); batched or single vectors."""
    q_vec = q_vec if isinstance(q_vec, Tensor) else Tensor(q_vec)
    a_vec = a_vec if isinstance(a_vec, Tensor) else Tensor(a_vec)
    single = q_vec.ndim == 1
    q_rows = reshape(q_vec, (1, -1)) if single else q_vec
    a_rows = reshape(a_vec, (1, -1)) if single else a_vec
    logits = add(row_sum(mul(matmul(q_rows, m), a_rows)), b)
    probs = activate(logits, "sigmoid")
    return reshape(probs, ()) if single else probs


class DualEncoder:
    """Flat model: one shared word-level recurrence per side, bilinear score."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 embeddings: np.ndarray | None = None):
        if config.hierarchical:
            raise ValueError(f"DualEncoder cannot host kind {config.kind!r}")
        self.config = config
        self.embedding = Parameter("embedding", _resolve_embeddings(config, rng, embeddings))
        self.gru = GRUCell("gru", config.embed_dim, config.hidden_dim, rng)
        self.ltc = None
        if config.uses_ltc:
            self.ltc = TopicMemory(config.ltc_clusters, config.ltc_dim, config.encoder_dim, rng)
        self.score_m = Parameter(
            "score.m", rng.normal(0.0, 0.01,
                                  size=(config.question_dim, config.answer_dim)).astype(np.float32))
        self.score_b = Parameter("score.b", np.zeros(1, dtype=np.float32))

    def parameters(self) -> list[Parameter]:
        params = [self.embedding] + self.gru.parameters()
        if self.ltc is not None:
            params.extend(self.ltc.parameters())
        return params + [self.score_m, self.score_b]

    def encode_side(self, grids: TextGrids, training: bool = False, rng=None):
        """Encode each text's flattened token sequence; chunking is ignored."""
        rate = self.config.input_dropout_rate
        return _encode_id_rows(self.gru, self.embedding, grids.flat, grids.flat_lens,
                               rate, training, rng)


class HierarchicalDualEncoder:
    """Two-level model: word recurrence per chunk, chunk recurrence on top."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 embeddings: np.ndarray | None = None):
        if not config.hierarchical:
            raise ValueError(f"HierarchicalDualEncoder cannot host kind {config.kind!r}")
        self.config = config
        self.embedding = Parameter("embedding", _resolve_embeddings(config, rng, embeddings))
        self.word_gru = GRUCell("word_gru", config.embed_dim, config.hidden_dim, rng)
        self.chunk_gru = GRUCell("chunk_gru", config.hidden_dim, config.chunk_hidden_dim, rng)
        self.ltc = None
        if config.uses_ltc:
            self.ltc = TopicMemory(config.ltc_clusters, config.ltc_dim, config.encoder_dim, rng)
        self.score_m = Parameter(
            "score.m", rng.normal(0.0, 0.01,
                                  size=(config.question_dim, config.answer_dim)).astype(np.float32))
        self.score_b = Parameter("score.b", np.zeros(1, dtype=np.float32))

    def parameters(self) -> list[Parameter]:
        params = [self.embedding] + self.word_gru.parameters() + self.chunk_gru.parameters()
        if self.ltc is not None:
            params.extend(self.ltc.parameters())
        return params + [self.score_m, self.score_b]

    def encode_side(self, grids: TextGrids, training: bool = False, rng=None):
        """Word-level final state per chunk, then chunk-level recurrence.

        Only true chunks enter the word-level batch, so grids padded out
        with extra PAD chunks or columns produce bit-identical encodings.
        """
        counts = grids.chunks
        batch = counts.shape[0]
        row_ids = np.concatenate(
            [grids.ids[i, :counts[i]] for i in range(batch)], axis=0)
        row_lens = np.concatenate([grids.lens[i, :counts[i]] for i in range(batch)])
        width = int(row_lens.max())
        chunk_states = _encode_id_rows(self.word_gru, self.embedding, row_ids[:, :width],
                                       row_lens, self.config.input_dropout_rate, training, rng)
        offsets = np.concatenate(([0], np.cumsum(counts)[:-1]))
        u = Tensor(np.zeros((batch, self.config.chunk_hidden_dim), dtype=np.float32))
        for c in range(int(counts.max())):
            gather = np.where(c < counts, offsets + c, offsets)
            u_new = _gru_step_rows(self.chunk_gru, u, take_rows(chunk_states, gather))
            alive = Tensor((counts > c).astype(np.float32)[:, None])
            u = add(mul(alive, u_new), mul(sub(1.0, alive), u))
        return u


def _resolve_embeddings(config: ModelConfig, rng: np.random.Generator,
                        embeddings: np.ndarray | None) -> np.ndarray:
    if embeddings is None:
        return init_embeddings(rng, config.vocab_size, config.embed_dim)
    embeddings = np.asarray(embeddings, dtype=np.float32)
    if embeddings.shape != (config.vocab_size, config.embed_dim):
        raise ShapeError(
            f"embedding matrix {embeddings.shape} does not match configured "
            f"({config.vocab_size}, {config.embed_dim})")
    return embeddings


def build_model(config: ModelConfig, rng: np.random.Generator,
                embeddings: np.ndarray | None = None):
    """Construct the model for config.kind with all parameters initialized."""
    cls = HierarchicalDualEncoder if config.hierarchical else DualEncoder
    return cls(config, rng, embeddings)


def rde_encode(model: DualEncoder, text: ChunkedText):
    """Encode one text with the flat recurrence; returns a [hidden] vector."""
    grids = grids_from_texts([text], max_words=max(len(c) for c in text.chunks),
                             max_chunks=text.chunk_count)
    h = model.encode_side(grids)
    return reshape(h, (model.config.hidden_dim,))


def hrde_encode(model: HierarchicalDualEncoder, text: ChunkedText):
    """Hierarchically encode one text.

    Returns the final chunk-level state [chunk_hidden] and the full
    chunk-state sequence [C, chunk_hidden].
    """
    width = max(len(c) for c in text.chunks)
    ids = np.zeros((text.chunk_count, width), dtype=np.int64)
    lens = np.zeros(text.chunk_count, dtype=np.int64)
    for i, chunk in enumerate(text.chunks):
        ids[i, :len(chunk)] = chunk
        lens[i] = len(chunk)
    word_states = _encode_id_rows(model.word_gru, model.embedding, ids, lens, 0.0, False, None)
    u = Tensor(np.zeros((1, model.config.chunk_hidden_dim), dtype=np.float32))
    states = None
    for c in range(text.chunk_count):
        u = _gru_step_rows(model.chunk_gru, u, take_rows(word_states, np.array([c])))
        states = u if states is None else concat(states, u)
    dim = model.config.chunk_hidden_dim
    return reshape(u, (dim,)), reshape(states, (text.chunk_count, dim))


def model_forward(model, batch: Batch, training: bool = False, rng=None):
    """Score every question/answer row of a batch; returns probabilities [B]."""
    if training and rng is None:
        raise ValueError("training-mode forward needs a seeded generator")
    config = model.config
    q_vec = model.encode_side(batch.questions, training, rng)
    a_vec = model.encode_side(batch.answers, training, rng)
    if config.uses_ltc:
        rate = config.memory_dropout
        if config.ltc_side == "question":
            q_vec = ltc_apply(model.ltc, q_vec, rate, training, rng)
        else:
            a_vec = ltc_apply(model.ltc, a_vec, rate, training, rng)
    return score_pair(model.score_m, model.score_b, q_vec, a_vec)


def encode_configured_side(model, grids_q: TextGrids, grids_a: TextGrids):
    """Evaluation-mode encoding of whichever side the topic memory reads."""
    side = model.config.ltc_side if model.config.uses_ltc else "question"
    return model.encode_side(grids_q if side == "question" else grids_a)
