"""Loss, optimizer, gradient clipping, the epoch loop, and checkpoints."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, fields as dataclass_fields
from typing import Callable, Sequence

import numpy as np

from .kernel import (
    Parameter,
    ShapeError,
    Tape,
    Tensor,
    add,
    backward,
    clip,
    log,
    mean,
    mul,
    neg,
    sub,
)
from .models import (
    ModelConfig,
    build_model,
    model_forward,
)
from .text import RankingTriple, batchify

PROB_FLOOR = 1e-7


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


class CheckpointError(ValueError):
    """Raised for unreadable, mismatched, or corrupt checkpoint files."""


@dataclass
class TrainConfig:
    """Everything that determines one training run besides the data."""

    model: ModelConfig
    learning_rate: float = 0.001
    clip_norm: float = 1.0
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    max_words: int = 40
    max_chunks: int = 14
    patience: int | None = None

    def __post_init__(self):
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ValueError("learning_rate and clip_norm must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.max_words < 1 or self.max_chunks < 1:
            raise ValueError("max_words and max_chunks must be >= 1")
        if self.patience is not None and self.patience < 0:
            raise ValueError(f"patience must be >= 0, got {self.patience}")


def bce_loss(probs, flags):
    """Mean binary cross-entropy with probabilities clamped away from {0,1}."""
    probs = probs if isinstance(probs, Tensor) else Tensor(probs)
    y = np.asarray(flags, dtype=np.float32)
    if probs.ndim != 1 or probs.shape != y.shape:
        raise ShapeError(f"probabilities {probs.shape} do not match flags {y.shape}")
    p = clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    terms = add(mul(Tensor(y), log(p)), mul(Tensor(1.0 - y), log(sub(1.0, p))))
    return mean(neg(terms))


def global_grad_norm(params: Sequence[Parameter]) -> float:
    return float(np.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum())
                             for p in params)))


def clip_global_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale all gradients so their joint Euclidean norm is at most max_norm.

    Returns the pre-clip norm. The direction of the joint gradient vector
    is preserved exactly; below the threshold nothing changes.
    """
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    norm = global_grad_norm(params)
    if norm > max_norm:
        scale = np.float32(max_norm / norm)
        for p in params:
            p.grad *= scale
    return norm


class AdamState:
    """Per-parameter moment accumulators for the Adam update rule."""

    def __init__(self, params: Sequence[Parameter],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._ids = [id(p) for p in params]
        self.first = [np.zeros_like(p.data) for p in params]
        self.second = [np.zeros_like(p.data) for p in params]

    def matches(self, params: Sequence[Parameter]) -> bool:
        return [id(p) for p in params] == self._ids


def adam_update(state: AdamState, params: Sequence[Parameter], lr: float) -> None:
    """One Adam step over all parameters using their accumulated gradients."""
    if not state.matches(params):
        raise ValueError("optimizer state was initialized for a different parameter set")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for p, m, v in zip(params, state.first, state.second):
        g = p.grad
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    valid_recall: float


def snapshot_parameters(params: Sequence[Parameter]) -> list[np.ndarray]:
    return [p.data.copy() for p in params]


def restore_parameters(params: Sequence[Parameter], snapshot: Sequence[np.ndarray]) -> None:
    for p, saved in zip(params, snapshot):
        p.data[...] = saved


def fit(config: TrainConfig, train_triples: Sequence[RankingTriple],
        valid_groups: Sequence, embeddings: np.ndarray | None = None,
        progress: Callable[[EpochStats], None] | None = None):
    """Train a freshly initialized model on labelled triples.

    Every epoch reshuffles the triples with an epoch-derived seed, runs
    forward/backward/clip/update per mini-batch, then measures top-1
    recall on the validation candidate groups. The best-validation
    parameter snapshot is restored before returning; with a patience
    budget, training stops once that many consecutive epochs fail to
    improve. Returns (model, per-epoch stats).
    """
    from .evaluation import recall_at_k, score_candidate_groups

    if not train_triples:
        raise ValueError("fit needs a nonempty training set")
    if not valid_groups:
        raise ValueError("fit needs a nonempty validation set")
    model = build_model(config.model, np.random.default_rng([config.seed, 0]), embeddings)
    params = model.parameters()
    state = AdamState(params)
    order = np.arange(len(train_triples))
    history: list[EpochStats] = []
    best_recall = -1.0
    best = snapshot_parameters(params)
    stale = 0
    for epoch in range(1, config.epochs + 1):
        shuffle_rng = np.random.default_rng([config.seed, 1, epoch])
        forward_rng = np.random.default_rng([config.seed, 2, epoch])
        shuffled = [train_triples[i] for i in shuffle_rng.permutation(order)]
        batches = batchify(shuffled, config.max_words, config.max_chunks, config.batch_size)
        loss_sum = 0.0
        for batch in batches:
            for p in params:
                p.reset_grad()
            with Tape() as tape:
                probs = model_forward(model, batch, training=True, rng=forward_rng)
                loss = bce_loss(probs, batch.flags)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite training loss at epoch {epoch}")
            backward(loss, tape)
            clip_global_norm(params, config.clip_norm)
            adam_update(state, params, config.learning_rate)
            loss_sum += value * batch.size
        scored = score_candidate_groups(model, valid_groups,
                                        config.max_words, config.max_chunks)
        recall = recall_at_k(scored, 1)
        stats = EpochStats(epoch, loss_sum / len(train_triples), recall)
        history.append(stats)
        if progress is not None:
            progress(stats)
        if recall > best_recall:
            best_recall = recall
            best = snapshot_parameters(params)
            stale = 0
        else:
            stale += 1
            if config.patience is not None and stale > config.patience:
                break
    restore_parameters(params, best)
    return model, history


CHECKPOINT_MAGIC = "rankhier-checkpoint-v1"

_MODEL_KEY_PARSERS = {
    "vocab_size": int,
    "kind": str,
    "embed_dim": int,
    "hidden_dim": int,
    "chunk_hidden_dim": int,
    "ltc_clusters": int,
    "ltc_dim": int,
    "ltc_side": str,
    "input_dropout": lambda s: None if s == "none" else float(s),
    "memory_dropout": float,
}


def _format_config_value(value) -> str:
    return "none" if value is None else str(value)


def save_checkpoint(model, path: str, run_config: dict | None = None) -> None:
    """Write the model to a single file: text header, then raw tensor data.

    The header carries the format tag, the model configuration (and any
    run settings passed in) as key=value lines, and a manifest of tensor
    name, shape, byte offset, and checksum. Tensor data follows as
    little-endian 32-bit floats in manifest order.
    """
    params = model.parameters()
    lines = [CHECKPOINT_MAGIC, "[config]"]
    for f in dataclass_fields(ModelConfig):
        lines.append(f"model.{f.name}={_format_config_value(getattr(model.config, f.name))}")
    for key in sorted(run_config or {}):
        lines.append(f"run.{key}={_format_config_value(run_config[key])}")
    lines.append("[tensors]")
    blobs = []
    offset = 0
    for p in params:
        raw = p.data.astype("<f4", copy=False).tobytes()
        shape = ",".join(str(n) for n in p.shape) or "scalar"
        lines.append(f"{p.name} {shape} {offset} {zlib.crc32(raw)}")
        blobs.append(raw)
        offset += len(raw)
    lines.append("[data]")
    with open(path, "wb") as f:
        f.write("\n".join(lines).encode("utf-8") + b"\n")
        for raw in blobs:
            f.write(raw)


def _parse_header(path: str) -> tuple[dict, list[tuple[str, tuple, int, int]], bytes]:
    with open(path, "rb") as f:
        payload = f.read()
    marker = b"\n[data]\n"
    cut = payload.find(marker)
    if cut < 0:
        raise CheckpointError(f"{path}: missing data section marker")
    header = payload[:cut].decode("utf-8").splitlines()
    data = payload[cut + len(marker):]
    if not header or header[0] != CHECKPOINT_MAGIC:
        found = header[0] if header else "<empty>"
        raise CheckpointError(f"{path}: unsupported format tag {found!r}, "
                              f"expected {CHECKPOINT_MAGIC!r}")
    try:
        config_at = header.index("[config]")
        tensors_at = header.index("[tensors]")
    except ValueError as exc:
        raise CheckpointError(f"{path}: malformed header sections") from exc
    config: dict[str, str] = {}
    for line in header[config_at + 1:tensors_at]:
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"{path}: malformed config line {line!r}")
        config[key] = value
    manifest = []
    for line in header[tensors_at + 1:]:
        parts = line.split(" ")
        if len(parts) != 4:
            raise CheckpointError(f"{path}: malformed manifest line {line!r}")
        name, shape_s, offset_s, crc_s = parts
        shape = () if shape_s == "scalar" else tuple(int(n) for n in shape_s.split(","))
        manifest.append((name, shape, int(offset_s), int(crc_s)))
    return config, manifest, data


def checkpoint_config(path: str) -> dict[str, str]:
    """Read just the key=value configuration block of a checkpoint."""
    return _parse_header(path)[0]


def model_config_from_checkpoint(config: dict[str, str]) -> ModelConfig:
    kwargs = {}
    for key, value in config.items():
        namespace, _, name = key.partition(".")
        if namespace != "model":
            continue
        if name not in _MODEL_KEY_PARSERS:
            raise CheckpointError(f"unknown model configuration key {key!r}")
        kwargs[name] = _MODEL_KEY_PARSERS[name](value)
    missing = set(_MODEL_KEY_PARSERS) - set(kwargs)
    if missing:
        raise CheckpointError(f"checkpoint lacks model configuration keys: {sorted(missing)}")
    return ModelConfig(**kwargs)


def load_checkpoint(path: str):
    """Rebuild a model from a checkpoint; every tensor is checksum-verified."""
    config, manifest, data = _parse_header(path)
    model = build_model(model_config_from_checkpoint(config), np.random.default_rng(0))
    by_name = {p.name: p for p in model.parameters()}
    if set(by_name) != {name for name, _, _, _ in manifest}:
        raise CheckpointError(f"{path}: tensor manifest does not match the configured model")
    for name, shape, offset, crc in manifest:
        p = by_name[name]
        if shape != p.shape:
            raise CheckpointError(f"{path}: tensor {name} has shape {shape}, expected {p.shape}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        raw = data[offset:offset + nbytes]
        if len(raw) != nbytes:
            raise CheckpointError(f"{path}: tensor {name} data truncated")
        if zlib.crc32(raw) != crc:
            raise CheckpointError(f"{path}: tensor {name} failed its checksum")
        p.data[...] = np.frombuffer(raw, dtype="<f4").reshape(shape)
    return model
