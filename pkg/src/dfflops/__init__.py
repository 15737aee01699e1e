"""Learned sparse retrieval with document-frequency-aware regularization."""

__version__ = "0.1.0"

from .core import (
    DfTable,
    DocBatch,
    SparseVector,
    Vocabulary,
    avg_active_terms,
    build_vocab,
    estimate_df,
    sparse_dot,
    tokenize,
    vectorize_counts,
)
from .reg import (
    ActivationParams,
    LambdaSchedule,
    PenaltyWeights,
    RegResult,
    activ,
    df_flops_loss,
    flops_loss,
    lambda_at,
    penalty_weights,
)
from .encoder import (
    EncoderParams,
    TrainConfig,
    TrainLog,
    TrainQuery,
    encode,
    rank_loss,
    refresh_penalties,
    train,
    train_step,
)
from .index import (
    InvertedIndex,
    SearchResult,
    brute_force_search,
    build_index,
    df_report,
    match_count,
    prune_topk,
    search,
)
from .eval import BenchReport, bench_latency, mrr_at_k, ndcg_at_k, recall_at_k

__all__ = [
    "ActivationParams",
    "BenchReport",
    "DfTable",
    "DocBatch",
    "EncoderParams",
    "InvertedIndex",
    "LambdaSchedule",
    "PenaltyWeights",
    "RegResult",
    "SearchResult",
    "SparseVector",
    "TrainConfig",
    "TrainLog",
    "TrainQuery",
    "Vocabulary",
    "activ",
    "avg_active_terms",
    "bench_latency",
    "brute_force_search",
    "build_index",
    "build_vocab",
    "df_flops_loss",
    "df_report",
    "encode",
    "estimate_df",
    "flops_loss",
    "lambda_at",
    "match_count",
    "mrr_at_k",
    "ndcg_at_k",
    "penalty_weights",
    "prune_topk",
    "rank_loss",
    "recall_at_k",
    "refresh_penalties",
    "search",
    "sparse_dot",
    "tokenize",
    "train",
    "train_step",
    "vectorize_counts",
]
