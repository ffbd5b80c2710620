"""Dual-encoder answer ranking with hierarchical encoding and topic clustering."""

from . import evaluation, kernel, models, text, training
from .evaluation import (
    CandidateGroup,
    CorpusStats,
    EvalReport,
    MetricResult,
    build_corpus_stats,
    cluster_report,
    compute_metrics,
    degradation_report,
    evaluate_runs,
    recall_at_k,
    score_candidate_groups,
    tfidf_rank,
)
from .models import (
    GRUCell,
    ModelConfig,
    TopicMemory,
    build_model,
    encode_sequence,
    gru_step,
    hrde_encode,
    ltc_apply,
    ltc_probs,
    model_forward,
    rde_encode,
    score_pair,
)
from .text import (
    Batch,
    ChunkedText,
    DataError,
    RankingTriple,
    Vocabulary,
    batchify,
    build_vocab,
    chunk_split,
    load_embeddings,
    negative_sample,
    tokenize,
)
from .training import (
    AdamState,
    CheckpointError,
    TrainConfig,
    TrainingDiverged,
    adam_update,
    bce_loss,
    clip_global_norm,
    fit,
    load_checkpoint,
    save_checkpoint,
)

__version__ = "0.1.0"
