"""Zipf-distributed synthetic retrieval testbed.

Token frequencies follow a truncated Zipf law, so the corpus contains both
stopword-like tokens that appear in nearly every document and a long tail of
discriminative ones.  Each query samples a few informative (low-frequency)
tokens from a designated source document, padded with high-frequency noise
tokens; the source document is the single relevant doc.  Training and
evaluation queries are drawn from disjoint source documents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SynthConfig:
    num_docs: int = 10000
    vocab_size: int = 2000
    num_train_queries: int = 1000
    num_eval_queries: int = 500
    zipf_exponent: float = 1.1
    doc_len_min: int = 20
    doc_len_max: int = 60
    query_min_terms: int = 2
    query_max_terms: int = 4
    noise_terms: int = 2              # high-frequency tokens appended to each query
    mid_terms: int = 1                # medium-frequency tokens appended to each query
    informative_min_rank: int = 150   # ranks at or past this count as informative
    mid_min_rank: int = 30            # mid band is [mid_min_rank, informative_min_rank)
    noise_max_rank: int = 25          # noise drawn from ranks below this
    seed: int = 42

    def __post_init__(self):
        if self.num_docs < 1 or self.vocab_size < 2:
            raise ValueError("num_docs and vocab_size must be positive")
        if self.num_train_queries < 0 or self.num_eval_queries < 0:
            raise ValueError("query counts must be >= 0")
        if not (1 <= self.doc_len_min <= self.doc_len_max):
            raise ValueError("bad document length range")
        if not (1 <= self.query_min_terms <= self.query_max_terms):
            raise ValueError("bad query term range")
        if self.num_train_queries + self.num_eval_queries > self.num_docs:
            raise ValueError("need a distinct source doc per query")


def _token(rank: int) -> str:
    return f"t{rank:05d}"


@dataclass(frozen=True)
class SynthData:
    docs: list[tuple[str, str]]                  # (doc_id, text)
    train_queries: list[tuple[str, str, str]]    # (query_id, text, positive_doc_id)
    eval_queries: list[tuple[str, str, str]]
    qrels: dict[str, dict[str, int]]             # judgments for the eval queries


def zipf_probs(vocab_size: int, exponent: float) -> np.ndarray:
    ranks = np.arange(1, vocab_size + 1, dtype=np.float64)
    p = ranks**-exponent
    return p / p.sum()


def generate(config: SynthConfig) -> SynthData:
    rng = np.random.default_rng(config.seed)
    probs = zipf_probs(config.vocab_size, config.zipf_exponent)

    lengths = rng.integers(config.doc_len_min, config.doc_len_max + 1, size=config.num_docs)
    all_tokens = rng.choice(config.vocab_size, size=int(lengths.sum()), p=probs)
    splits = np.cumsum(lengths)[:-1]
    doc_token_ranks = np.split(all_tokens, splits)

    docs = []
    for i, ranks in enumerate(doc_token_ranks):
        docs.append((f"d{i:06d}", " ".join(_token(int(r)) for r in ranks)))

    def make_query(doc_idx: int) -> str:
        ranks = np.unique(doc_token_ranks[doc_idx])
        informative = ranks[ranks >= config.informative_min_rank]
        if informative.size == 0:
            # fall back to the rarest tokens the doc has
            informative = np.sort(ranks)[-config.query_max_terms :]
        n_terms = int(rng.integers(config.query_min_terms, config.query_max_terms + 1))
        n_terms = min(n_terms, informative.size)
        chosen = rng.choice(informative, size=n_terms, replace=False)
        tokens = [_token(int(r)) for r in chosen]
        if config.mid_terms > 0:
            # medium-frequency content words from the doc; discriminative but
            # common enough that within-batch regularization pressure is real
            pool = ranks[(ranks >= config.mid_min_rank) & (ranks < config.informative_min_rank)]
            if pool.size > 0:
                mid = rng.choice(pool, size=min(config.mid_terms, pool.size), replace=False)
                tokens.extend(_token(int(r)) for r in mid)
        if config.noise_terms > 0:
            # stopword-like padding drawn from the source doc's own
            # high-frequency tokens, the way natural queries carry stopwords
            # that also occur in the relevant passage
            pool = ranks[ranks < config.noise_max_rank]
            if pool.size == 0:
                pool = np.arange(config.noise_max_rank)
            noise = rng.choice(pool, size=config.noise_terms, replace=pool.size < config.noise_terms)
            tokens.extend(_token(int(r)) for r in noise)
        return " ".join(tokens)

    n_sources = config.num_train_queries + config.num_eval_queries
    source_docs = rng.choice(config.num_docs, size=n_sources, replace=False)

    train_queries = []
    for qnum, doc_idx in enumerate(source_docs[: config.num_train_queries]):
        train_queries.append((f"tq{qnum:05d}", make_query(int(doc_idx)), docs[doc_idx][0]))

    eval_queries = []
    qrels: dict[str, dict[str, int]] = {}
    for qnum, doc_idx in enumerate(source_docs[config.num_train_queries :]):
        qid = f"eq{qnum:05d}"
        doc_id = docs[doc_idx][0]
        eval_queries.append((qid, make_query(int(doc_idx)), doc_id))
        qrels[qid] = {doc_id: 1}

    return SynthData(docs=docs, train_queries=train_queries, eval_queries=eval_queries, qrels=qrels)
