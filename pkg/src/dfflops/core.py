"""Vocabulary, sparse vectors, and document-frequency statistics.

Everything downstream (regularizers, encoder, index, benchmarks) is built on
the types in this module.  All of them are immutable after construction and
safe to share across threads.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase a string and split it on runs of non-alphanumerics.

    Empty tokens are dropped, so empty or all-punctuation input yields [].
    """
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    """Dense, ordered term lexicon: term ids are 0..len(terms)-1."""

    terms: tuple[str, ...]
    term_to_id: dict[str, int] = field(repr=False)

    @classmethod
    def from_terms(cls, terms: Sequence[str]) -> "Vocabulary":
        terms = tuple(terms)
        mapping = {t: i for i, t in enumerate(terms)}
        if len(mapping) != len(terms):
            raise ValueError("vocabulary contains duplicate terms")
        return cls(terms=terms, term_to_id=mapping)

    def __len__(self) -> int:
        return len(self.terms)

    def id_of(self, term: str) -> int:
        return self.term_to_id[term]

    def term_of(self, term_id: int) -> str:
        return self.terms[term_id]

    def __contains__(self, term: str) -> bool:
        return term in self.term_to_id

    def digest(self) -> str:
        """sha256 of the canonical newline-delimited serialization."""
        return hashlib.sha256(serialize_vocab(self).encode("utf-8")).hexdigest()


def serialize_vocab(vocab: Vocabulary) -> str:
    return "".join(t + "\n" for t in vocab.terms)


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    Path(path).write_text(serialize_vocab(vocab), encoding="utf-8")


def load_vocab(path: str | Path) -> Vocabulary:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return Vocabulary.from_terms(lines)


def build_vocab(corpus: Iterable[Sequence[str]], min_df: int = 1) -> Vocabulary:
    """Collect tokens appearing in at least `min_df` distinct documents.

    Terms are sorted lexicographically and numbered densely from 0.
    Raises ValueError if nothing survives the cutoff.
    """
    if min_df < 1:
        raise ValueError(f"min_df must be >= 1, got {min_df}")
    doc_counts: dict[str, int] = {}
    for tokens in corpus:
        for tok in set(tokens):
            doc_counts[tok] = doc_counts.get(tok, 0) + 1
    kept = sorted(t for t, c in doc_counts.items() if c >= min_df)
    if not kept:
        raise ValueError(f"empty vocabulary: no token appears in >= {min_df} documents")
    return Vocabulary.from_terms(kept)


class SparseVector:
    """A document representation: strictly increasing term ids with weights > 0.

    Weights are kept as float64; the inverted index quantizes to float32 when
    a vector is indexed.  Entry arrays are read-only after construction.
    """

    __slots__ = ("term_ids", "weights", "doc_id")

    def __init__(self, term_ids, weights, doc_id: str | None = None, *, _checked: bool = False):
        term_ids = np.asarray(term_ids, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
        if not _checked:
            if term_ids.ndim != 1 or weights.ndim != 1 or len(term_ids) != len(weights):
                raise ValueError("term_ids and weights must be 1-d arrays of equal length")
            if len(term_ids) > 0:
                if np.any(np.diff(term_ids) <= 0):
                    raise ValueError("term ids must be strictly increasing")
                if term_ids[0] < 0:
                    raise ValueError("term ids must be non-negative")
                if np.any(weights <= 0):
                    raise ValueError("all stored weights must be > 0")
        term_ids.setflags(write=False)
        weights.setflags(write=False)
        self.term_ids = term_ids
        self.weights = weights
        self.doc_id = doc_id

    @classmethod
    def from_dict(cls, entries: dict[int, float], doc_id: str | None = None) -> "SparseVector":
        ids = sorted(t for t, w in entries.items() if w != 0)
        return cls(ids, [entries[t] for t in ids], doc_id)

    def __len__(self) -> int:
        return len(self.term_ids)

    def weight(self, term_id: int) -> float:
        """Weight of `term_id`, 0.0 if absent."""
        pos = np.searchsorted(self.term_ids, term_id)
        if pos < len(self.term_ids) and self.term_ids[pos] == term_id:
            return float(self.weights[pos])
        return 0.0

    def to_dict(self) -> dict[int, float]:
        return {int(t): float(w) for t, w in zip(self.term_ids, self.weights)}

    def densify(self, size: int) -> np.ndarray:
        dense = np.zeros(size, dtype=np.float64)
        dense[self.term_ids] = self.weights
        return dense

    def __repr__(self) -> str:
        return f"SparseVector(doc_id={self.doc_id!r}, nnz={len(self)})"


@dataclass(frozen=True)
class DocBatch:
    """A batch of sparse vectors over one shared vocabulary."""

    vectors: tuple[SparseVector, ...]
    vocab_size: int

    def __post_init__(self):
        if len(self.vectors) < 1:
            raise ValueError("batch must contain at least one vector")
        for v in self.vectors:
            if len(v) > 0 and v.term_ids[-1] >= self.vocab_size:
                raise ValueError("vector term id exceeds vocabulary size")

    @classmethod
    def of(cls, vectors: Sequence[SparseVector], vocab_size: int) -> "DocBatch":
        return cls(vectors=tuple(vectors), vocab_size=vocab_size)

    def __len__(self) -> int:
        return len(self.vectors)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((len(self.vectors), self.vocab_size), dtype=np.float64)
        for i, v in enumerate(self.vectors):
            out[i, v.term_ids] = v.weights
        return out


@dataclass(frozen=True)
class DfTable:
    """Estimated per-term document frequencies over a sample of vectors."""

    df: np.ndarray          # int64, len == vocab size
    sample_size: int        # number of vectors the counts were taken over
    epsilon: float          # weights > epsilon counted as active

    def __post_init__(self):
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        if np.any(self.df < 0) or np.any(self.df > self.sample_size):
            raise ValueError("df counts must lie in [0, sample_size]")
        self.df.setflags(write=False)

    def ratios(self) -> np.ndarray:
        return self.df.astype(np.float64) / self.sample_size


def vectorize_counts(tokens: Sequence[str], vocab: Vocabulary, doc_id: str | None = None) -> SparseVector:
    """Raw occurrence counts of in-vocabulary tokens; OOV tokens are ignored."""
    counts: dict[int, int] = {}
    lookup = vocab.term_to_id
    for tok in tokens:
        tid = lookup.get(tok)
        if tid is not None:
            counts[tid] = counts.get(tid, 0) + 1
    return SparseVector.from_dict(counts, doc_id)


def sparse_dot(query_terms: Iterable[int], doc: SparseVector) -> float:
    """Binary-query score: sum of the doc weights of the matched query terms.

    Accumulation runs in ascending term order so the float reduction order is
    fixed; `search` uses the same order, keeping both paths bit-identical.
    """
    total = 0.0
    for tid in sorted(set(int(t) for t in query_terms)):
        total += doc.weight(tid)
    return total


def estimate_df(
    vectors: Sequence[SparseVector],
    epsilon: float = 0.0,
    *,
    vocab_size: int | None = None,
) -> DfTable:
    """Count, per term, how many vectors give it weight > epsilon.

    `vocab_size` fixes the length of the returned table; when omitted it is
    inferred from the largest term id present.
    """
    if len(vectors) == 0:
        raise ValueError("cannot estimate document frequencies from an empty sample")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    max_term = max((int(v.term_ids[-1]) for v in vectors if len(v) > 0), default=-1)
    if vocab_size is None:
        vocab_size = max(max_term + 1, 1)
    elif max_term >= vocab_size:
        raise ValueError(f"term id {max_term} exceeds vocab_size {vocab_size}")
    active = [v.term_ids[v.weights > epsilon] for v in vectors if len(v) > 0]
    if active:
        df = np.bincount(np.concatenate(active), minlength=vocab_size)
    else:
        df = np.zeros(vocab_size, dtype=np.int64)
    return DfTable(df=df.astype(np.int64), sample_size=len(vectors), epsilon=epsilon)


def avg_active_terms(vectors: Sequence[SparseVector]) -> float:
    """Mean number of active (non-zero) terms per vector."""
    if len(vectors) == 0:
        raise ValueError("cannot average over an empty vector list")
    return sum(len(v) for v in vectors) / len(vectors)


# --- corpus ingestion ------------------------------------------------------

def read_corpus_jsonl(path: str | Path) -> list[tuple[str, str]]:
    """Read a JSON-lines corpus of {"id": ..., "text": ...} objects."""
    docs: list[tuple[str, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                docs.append((str(obj["id"]), str(obj["text"])))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: bad corpus line ({exc})") from exc
    return docs


def write_corpus_jsonl(docs: Iterable[tuple[str, str]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, text in docs:
            fh.write(json.dumps({"id": doc_id, "text": text}) + "\n")
