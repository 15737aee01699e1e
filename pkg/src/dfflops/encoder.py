"""Trainable sparse document encoder and its training loop.

The encoder maps raw term counts x to vocabulary-sized weights through two
channels: a rank-k bilinear expansion and a per-term lexical gate g for the
document's own tokens,

    r = log(1 + max(0, U @ (Vp.T @ x) + g * x + b))

evaluated densely over the vocabulary and emitted sparsely.  The gate is what
lets the model score a term it has seen directly (a low-rank map alone cannot
express that near-identity behavior); the bilinear part supplies expansion
terms.  Everything trains on a CPU in minutes while keeping the term-level
regularizers acting on full vocabulary-sized outputs.

Training combines a softmax ranking loss (in-batch negatives plus mined hard
negatives per query) with a warmup-scheduled regularizer, optimized by plain
gradient descent.  All gradients are computed analytically; the whole loop is
single-threaded and bitwise deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .core import DocBatch, SparseVector, Vocabulary, estimate_df, tokenize
from .reg import (
    ActivationParams,
    LambdaSchedule,
    PenaltyWeights,
    lambda_at,
    mean_penalty_kernel,
    penalty_weights,
)

REGULARIZERS = ("flops", "df_flops", "df_flops_static")

# candidates ranked by raw-count overlap per query; negatives are drawn from
# the top of this pool each step
HARD_NEG_POOL_SIZE = 64


class TrainingDiverged(RuntimeError):
    """Raised when a step produces a non-finite loss."""


@dataclass(frozen=True)
class EncoderParams:
    """Encoder weights; output dimension is the vocab size."""

    U: np.ndarray    # (|V|, k) expansion output map
    Vp: np.ndarray   # (|V|, k) expansion input map
    b: np.ndarray    # (|V|,)  per-term bias
    g: np.ndarray    # (|V|,)  lexical gate for the doc's own term counts

    def __post_init__(self):
        if self.U.shape != self.Vp.shape or self.U.ndim != 2:
            raise ValueError("U and Vp must share one (|V|, k) shape")
        if self.b.shape != (self.U.shape[0],) or self.g.shape != self.b.shape:
            raise ValueError("b and g must be (|V|,) vectors")
        for arr in (self.U, self.Vp, self.b, self.g):
            if not np.all(np.isfinite(arr)):
                raise ValueError("encoder parameters must be finite")
            arr.setflags(write=False)

    @property
    def vocab_size(self) -> int:
        return self.U.shape[0]

    @property
    def rank(self) -> int:
        return self.U.shape[1]


def init_encoder_params(vocab_size: int, rank: int, rng: np.random.Generator) -> EncoderParams:
    """Uniform init in [-0.3/sqrt(k), 0.3/sqrt(k)] for U and Vp; g starts at 1.

    The unit gate makes the initial model score raw term counts, so training
    starts from lexical matching and learns what to drop or expand.  The
    expansion channel starts small: its initial output must not drown the
    lexical channel, or early document-frequency estimates reflect init noise
    instead of the corpus.  The bias starts negative as a shrinkage floor:
    diffuse low-magnitude expansion stays below the rectifier (a quadratic
    mean penalty cannot push such ballast to zero later, since its gradient
    vanishes with the weight), so a term is emitted only where some channel
    clears the floor.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    bound = 0.3 / np.sqrt(rank)
    U = rng.uniform(-bound, bound, size=(vocab_size, rank))
    Vp = rng.uniform(-bound, bound, size=(vocab_size, rank))
    return EncoderParams(
        U=U, Vp=Vp, b=np.full(vocab_size, -0.3), g=np.ones(vocab_size)
    )


def _pre_activation(params: EncoderParams, counts: sp.spmatrix | np.ndarray) -> np.ndarray:
    Z = (counts @ params.Vp) @ params.U.T + params.b
    if sp.issparse(counts):
        coo = counts.tocoo()
        Z[coo.row, coo.col] += coo.data * params.g[coo.col]
    else:
        Z += np.asarray(counts) * params.g
    return Z


def encode_dense(params: EncoderParams, counts: sp.spmatrix | np.ndarray) -> np.ndarray:
    """Encode a batch of count rows into a dense (n, |V|) weight matrix."""
    return np.log1p(np.maximum(_pre_activation(params, counts), 0.0))


def encode(params: EncoderParams, counts: SparseVector) -> SparseVector:
    """Encode one count vector, dropping zero outputs."""
    x = counts.densify(params.vocab_size)
    r = encode_dense(params, x[None, :])[0]
    ids = np.nonzero(r > 0.0)[0]
    return SparseVector(ids, r[ids], counts.doc_id, _checked=True)


def encode_corpus(
    params: EncoderParams,
    counts: sp.csr_matrix,
    doc_ids: Sequence[str] | None = None,
    chunk_size: int = 1024,
) -> list[SparseVector]:
    """Encode count rows in chunks; output order matches input order."""
    n = counts.shape[0]
    out: list[SparseVector] = []
    for start in range(0, n, chunk_size):
        R = encode_dense(params, counts[start : start + chunk_size])
        rows, cols = np.nonzero(R > 0.0)
        weights = R[rows, cols]
        splits = np.searchsorted(rows, np.arange(1, R.shape[0]))
        for i, (ids, ws) in enumerate(
            zip(np.split(cols, splits), np.split(weights, splits))
        ):
            doc_id = doc_ids[start + i] if doc_ids is not None else None
            out.append(SparseVector(ids, ws, doc_id, _checked=True))
    return out


# --- ranking loss ----------------------------------------------------------

def rank_loss_dense(
    R: np.ndarray,
    query_terms: Sequence[np.ndarray],
    positives: Sequence[int],
    negatives: Sequence[Sequence[int]],
) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy over {own positive, other positives, hard negatives}.

    R is the dense (n_docs, |V|) weight matrix of the batch.  Query q's
    candidate list is every positive (its own first-class) followed by its own
    hard negatives; scores are binary-query dots, i.e. sums of the candidate
    rows over the query's terms.  Returns the mean loss over queries and its
    exact gradient with respect to R.
    """
    n_queries = len(query_terms)
    if len(positives) != n_queries or len(negatives) != n_queries:
        raise ValueError("every query needs exactly one positive and one negative list")
    pos = np.asarray(positives, dtype=np.int64)
    grad = np.zeros_like(R)
    total = 0.0
    for q in range(n_queries):
        terms = np.asarray(query_terms[q], dtype=np.int64)
        cands = np.concatenate([pos, np.asarray(negatives[q], dtype=np.int64)])
        if terms.size == 0:
            scores = np.zeros(len(cands))
        else:
            scores = R[np.ix_(cands, terms)].sum(axis=1)
        scores = scores - scores.max()
        logz = np.log(np.exp(scores).sum())
        total += logz - scores[q]
        if terms.size > 0:
            coef = np.exp(scores - logz)
            coef[q] -= 1.0
            coef /= n_queries
            np.add.at(grad, (cands[:, None], terms[None, :]), coef[:, None])
    return total / n_queries, grad


def rank_loss(
    query_terms: Sequence[np.ndarray],
    docs: DocBatch,
    positives: Sequence[int],
    negatives: Sequence[Sequence[int]],
) -> tuple[float, np.ndarray]:
    """`rank_loss_dense` over a sparse-vector batch."""
    return rank_loss_dense(docs.to_dense(), query_terms, positives, negatives)


# --- configuration and logs --------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 16                  # queries per step
    total_steps: int = 2000
    peak_lambda: float = 1.0
    warmup_steps: int | None = None       # defaults to 60% of total_steps
    df_refresh_interval: int = 100
    df_sample_size: int = 2048
    hard_negatives: int = 7
    activation: ActivationParams = field(default_factory=ActivationParams)
    regularizer: str = "df_flops"
    epsilon: float = 0.0
    rank: int = 64
    seed: int = 42

    def __post_init__(self):
        if self.warmup_steps is None:
            object.__setattr__(self, "warmup_steps", max(1, round(0.6 * self.total_steps)))
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (in-batch negatives)")
        if self.total_steps > 0 and self.warmup_steps > self.total_steps:
            raise ValueError("warmup_steps must not exceed total_steps")
        if self.hard_negatives < 0:
            raise ValueError("hard_negatives must be >= 0")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}, got {self.regularizer!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    def schedule(self) -> LambdaSchedule:
        return LambdaSchedule(peak_lambda=self.peak_lambda, warmup_steps=self.warmup_steps)


@dataclass(frozen=True)
class StepRecord:
    step: int
    lam: float
    rank_loss: float
    reg_loss: float
    total_loss: float


@dataclass(frozen=True)
class DfSnapshot:
    step: int
    sample_size: int
    top1_df_pct: float
    avg_active: float


@dataclass
class TrainLog:
    steps: list[StepRecord] = field(default_factory=list)
    df_snapshots: list[DfSnapshot] = field(default_factory=list)

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.steps:
                fh.write(json.dumps({"type": "step", **rec.__dict__}, sort_keys=True) + "\n")
            for snap in self.df_snapshots:
                fh.write(json.dumps({"type": "df_snapshot", **snap.__dict__}, sort_keys=True) + "\n")

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "TrainLog":
        log = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                obj = json.loads(line)
                kind = obj.pop("type")
                if kind == "step":
                    log.steps.append(StepRecord(**obj))
                elif kind == "df_snapshot":
                    log.df_snapshots.append(DfSnapshot(**obj))
        return log


@dataclass(frozen=True)
class TrainQuery:
    """One training query: binary term ids plus the index of its relevant doc."""

    query_id: str
    term_ids: np.ndarray
    positive_index: int


@dataclass(frozen=True)
class TrainState:
    params: EncoderParams
    step: int = 0


@dataclass(frozen=True)
class StepBatch:
    """Everything one optimization step consumes.

    Row layout of `counts`: the batch-size positives first (one per query, in
    query order), then each query's hard negatives.  `positives[q]` and the
    entries of `negatives[q]` index into these rows.
    """

    counts: sp.csr_matrix
    query_terms: tuple[np.ndarray, ...]
    positives: tuple[int, ...]
    negatives: tuple[tuple[int, ...], ...]


def train_step(
    state: TrainState,
    batch: StepBatch,
    lam: float,
    weights: PenaltyWeights,
    learning_rate: float,
) -> tuple[TrainState, StepRecord]:
    """One gradient-descent update of the combined objective.

    total = rank_loss + lam * reg_loss, with the regularizer gradient scaled
    by w_t^2 per term and everything chained through the log1p/rectifier
    saturation of the encoder.  Raises TrainingDiverged on non-finite loss.
    """
    params = state.params
    H = batch.counts @ params.Vp
    Z = H @ params.U.T + params.b
    coo = batch.counts.tocoo()
    Z[coo.row, coo.col] += coo.data * params.g[coo.col]
    Rplus = np.maximum(Z, 0.0)
    R = np.log1p(Rplus)

    rloss, dR = rank_loss_dense(R, batch.query_terms, batch.positives, batch.negatives)
    means = R.mean(axis=0)
    gloss, greg = mean_penalty_kernel(means, R.shape[0], weights.w)
    total = rloss + lam * gloss
    if not np.isfinite(total):
        raise TrainingDiverged(
            f"non-finite loss at step {state.step}: rank={rloss} reg={gloss} lambda={lam}"
        )
    if lam != 0.0:
        dR = dR + lam * greg[None, :]

    # d log(1 + relu(z)) / dz = [z > 0] / (1 + relu(z))
    dZ = dR * (Z > 0.0) / (1.0 + Rplus)
    dU = dZ.T @ H
    db = dZ.sum(axis=0)
    dH = dZ @ params.U
    dVp = batch.counts.T @ dH
    dg = np.zeros_like(params.g)
    np.add.at(dg, coo.col, dZ[coo.row, coo.col] * coo.data)

    lr = learning_rate
    new_params = EncoderParams(
        U=params.U - lr * dU, Vp=params.Vp - lr * dVp,
        b=params.b - lr * db, g=params.g - lr * dg,
    )
    record = StepRecord(
        step=state.step, lam=lam, rank_loss=float(rloss), reg_loss=float(gloss),
        total_loss=float(total),
    )
    return TrainState(params=new_params, step=state.step + 1), record


def step_objective(
    params: EncoderParams, batch: StepBatch, lam: float, weights: PenaltyWeights
) -> float:
    """Value of the combined objective for the given parameters (no update)."""
    R = encode_dense(params, batch.counts)
    rloss, _ = rank_loss_dense(R, batch.query_terms, batch.positives, batch.negatives)
    gloss, _ = mean_penalty_kernel(R.mean(axis=0), R.shape[0], weights.w)
    return rloss + lam * gloss


def _df_refresh(
    params: EncoderParams, validation_counts: sp.csr_matrix, config: TrainConfig
):
    """Encode the validation sample and turn its DF estimate into penalties."""
    if validation_counts.shape[0] == 0:
        raise ValueError("validation sample for the DF refresh is empty")
    encoded = encode_corpus(params, validation_counts)
    df = estimate_df(encoded, config.epsilon, vocab_size=params.vocab_size)
    return penalty_weights(df, config.activation), df, encoded


def refresh_penalties(
    state: TrainState, validation_counts: sp.csr_matrix, config: TrainConfig
) -> PenaltyWeights:
    """Penalty weights for the current stage of training.

    Before the first refresh (step 0) every term gets weight 1, which makes
    the scaled loss coincide with the unweighted one.  Later calls re-encode
    the validation sample with the current parameters and push its DF ratios
    through the activation.
    """
    if state.step == 0:
        return PenaltyWeights.ones(state.params.vocab_size)
    weights, _, _ = _df_refresh(state.params, validation_counts, config)
    return weights


def counts_matrix(count_vectors: Sequence[SparseVector], vocab_size: int) -> sp.csr_matrix:
    """Stack count vectors into a CSR matrix with one row per document."""
    indptr = np.zeros(len(count_vectors) + 1, dtype=np.int64)
    for i, v in enumerate(count_vectors):
        indptr[i + 1] = indptr[i] + len(v)
    indices = np.concatenate([v.term_ids for v in count_vectors]) if count_vectors else np.zeros(0, dtype=np.int64)
    data = np.concatenate([v.weights for v in count_vectors]) if count_vectors else np.zeros(0)
    return sp.csr_matrix((data, indices, indptr), shape=(len(count_vectors), vocab_size))


def mine_hard_negative_pools(
    counts: sp.csr_matrix, queries: Sequence[TrainQuery], pool_size: int = HARD_NEG_POOL_SIZE
) -> list[np.ndarray]:
    """Per query: the non-relevant docs with the highest raw-count overlap.

    Overlap is the sum of the doc's raw counts over the query's terms; ties
    break toward the smaller doc index so mining is deterministic.
    """
    n_docs = counts.shape[0]
    pools = []
    csc = counts.tocsc()
    for q in queries:
        if q.term_ids.size == 0:
            overlap = np.zeros(n_docs)
        else:
            overlap = np.asarray(csc[:, q.term_ids].sum(axis=1)).ravel()
        overlap[q.positive_index] = -1.0
        order = np.lexsort((np.arange(n_docs), -overlap))
        pool = order[: min(pool_size, n_docs - 1)]
        pools.append(pool[overlap[pool] >= 0])
    return pools


def _assemble_batch(
    counts: sp.csr_matrix,
    queries: Sequence[TrainQuery],
    pools: Sequence[np.ndarray],
    query_idx: np.ndarray,
    n_hard: int,
    rng: np.random.Generator,
) -> StepBatch:
    doc_rows = [queries[i].positive_index for i in query_idx]
    negatives: list[tuple[int, ...]] = []
    n_queries = len(query_idx)
    for slot, qi in enumerate(query_idx):
        pool = pools[qi]
        if n_hard == 0 or pool.size == 0:
            negatives.append(())
            continue
        chosen = rng.choice(pool, size=n_hard, replace=pool.size < n_hard)
        start = len(doc_rows)
        doc_rows.extend(int(d) for d in chosen)
        negatives.append(tuple(range(start, start + len(chosen))))
    return StepBatch(
        counts=counts[np.asarray(doc_rows, dtype=np.int64)],
        query_terms=tuple(queries[i].term_ids for i in query_idx),
        positives=tuple(range(n_queries)),
        negatives=tuple(negatives),
    )


def train(
    config: TrainConfig,
    corpus_counts: Sequence[SparseVector],
    queries: Sequence[TrainQuery],
    vocab_size: int,
) -> tuple[EncoderParams, TrainLog]:
    """Run the full training loop; deterministic for a fixed seed.

    The regularizer mode decides how penalty weights evolve: "flops" keeps
    them at 1, "df_flops" refreshes them from freshly encoded validation docs
    every `df_refresh_interval` steps, "df_flops_static" pins them once from
    raw-count DF before the first step.
    """
    if len(corpus_counts) == 0:
        raise ValueError("corpus is empty")
    if len(queries) == 0 and config.total_steps > 0:
        raise ValueError("no training queries")
    for q in queries:
        if not (0 <= q.positive_index < len(corpus_counts)):
            raise ValueError(f"query {q.query_id!r}: positive doc index out of range")

    init_ss, sample_ss, val_ss = np.random.SeedSequence(config.seed).spawn(3)
    rng_init = np.random.default_rng(init_ss)
    rng_sample = np.random.default_rng(sample_ss)
    rng_val = np.random.default_rng(val_ss)

    X = counts_matrix(corpus_counts, vocab_size)
    state = TrainState(params=init_encoder_params(vocab_size, config.rank, rng_init))
    log = TrainLog()
    if config.total_steps == 0:
        return state.params, log

    pools = mine_hard_negative_pools(X, queries)
    n_val = min(config.df_sample_size, X.shape[0])
    validation = X[rng_val.choice(X.shape[0], size=n_val, replace=False)]

    weights = PenaltyWeights.ones(vocab_size)
    if config.regularizer == "df_flops_static":
        df = estimate_df(corpus_counts, 0.0, vocab_size=vocab_size)
        weights = penalty_weights(df, config.activation)

    schedule = config.schedule()
    n_q = len(queries)
    for s in range(config.total_steps):
        # DF snapshots are logged on the refresh cadence in every mode; only
        # the df_flops mode feeds them back into the penalty weights
        if s > 0 and s % config.df_refresh_interval == 0:
            refreshed, df, encoded = _df_refresh(state.params, validation, config)
            top1 = 100.0 * df.df.max() / df.sample_size
            log.df_snapshots.append(DfSnapshot(
                step=s, sample_size=df.sample_size, top1_df_pct=float(top1),
                avg_active=sum(len(v) for v in encoded) / len(encoded),
            ))
            if config.regularizer == "df_flops":
                weights = refreshed
        lam = lambda_at(s, schedule)
        qidx = rng_sample.choice(n_q, size=config.batch_size, replace=n_q < config.batch_size)
        batch = _assemble_batch(X, queries, pools, qidx, config.hard_negatives, rng_sample)
        state, record = train_step(state, batch, lam, weights, config.learning_rate)
        log.steps.append(record)
    return state.params, log


# --- training-query file (TSV: query_id <TAB> text <TAB> positive_doc_id) ----

def read_queries_tsv(path: str | Path) -> list[tuple[str, str, str]]:
    rows: list[tuple[str, str, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
            rows.append((parts[0], parts[1], parts[2]))
    return rows


def prepare_queries(
    rows: Sequence[tuple[str, str, str]],
    vocab: Vocabulary,
    doc_index: dict[str, int],
) -> list[TrainQuery]:
    """Tokenize query text to unique in-vocab term ids; resolve positives."""
    out = []
    for qid, text, pos_doc in rows:
        if pos_doc not in doc_index:
            raise ValueError(f"query {qid!r}: unknown positive doc id {pos_doc!r}")
        ids = sorted({vocab.term_to_id[t] for t in tokenize(text) if t in vocab.term_to_id})
        out.append(TrainQuery(
            query_id=qid,
            term_ids=np.asarray(ids, dtype=np.int64),
            positive_index=doc_index[pos_doc],
        ))
    return out


# --- checkpoint file ---------------------------------------------------------
#
# Layout (little-endian):
#   8 bytes   magic "DFFLOPS1"
#   32 bytes  sha256 of the vocabulary serialization
#   4 bytes   uint32 |V|
#   4 bytes   uint32 k
#   |V|*k*4   U, row-major float32
#   |V|*k*4   Vp, row-major float32
#   |V|*4     b, float32
#   |V|*4     g, float32

CHECKPOINT_MAGIC = b"DFFLOPS1"


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint file."""


def save_checkpoint(path: str | Path, params: EncoderParams, vocab_digest: str) -> None:
    digest = bytes.fromhex(vocab_digest)
    if len(digest) != 32:
        raise ValueError("vocab_digest must be a sha256 hex string")
    v, k = params.vocab_size, params.rank
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(digest)
        fh.write(struct.pack("<II", v, k))
        fh.write(np.ascontiguousarray(params.U, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(params.Vp, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(params.b, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(params.g, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[EncoderParams, str]:
    """Returns the parameters (widened to float64) and the vocab digest hex."""
    blob = Path(path).read_bytes()
    if len(blob) < 48 or blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    digest = blob[8:40].hex()
    v, k = struct.unpack("<II", blob[40:48])
    expected = 48 + 4 * (2 * v * k + 2 * v)
    if len(blob) != expected:
        raise CheckpointError(f"{path}: truncated checkpoint ({len(blob)} != {expected} bytes)")
    flat = np.frombuffer(blob, dtype="<f4", offset=48)
    U = flat[: v * k].reshape(v, k).astype(np.float64)
    Vp = flat[v * k : 2 * v * k].reshape(v, k).astype(np.float64)
    b = flat[2 * v * k : 2 * v * k + v].astype(np.float64)
    g = flat[2 * v * k + v :].astype(np.float64)
    return EncoderParams(U=U, Vp=Vp, b=b, g=g), digest
