"""Inverted index: posting lists, exact top-k scoring, and DF diagnostics.

The engine does no dynamic pruning: every document sharing at least one term
with the query (a "match") is scored, so the match count is the latency
proxy the benchmarks report.  Posting weights are quantized to float32 at
build time; `brute_force_search` applies the same quantization, which keeps
the two scoring paths bit-identical on any input.

Scores accumulate in float64, visiting query terms in ascending term order,
so search and the brute-force oracle add the same numbers in the same order.
Ties are broken toward the smaller internal doc id everywhere; internal ids
are assigned by position in the build input.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import SparseVector, Vocabulary

INDEX_MAGIC = b"DFFIDX\x00\x00"
INDEX_VERSION = 1


class IndexFormatError(ValueError):
    """Malformed, truncated, or wrong-version index file."""


def prune_topk(vector: SparseVector, k: int) -> SparseVector:
    """Keep the k highest-weight entries (ties kept toward smaller term id)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(vector) <= k:
        return vector
    # stable sort on (-weight, term_id); term ids are already ascending
    order = np.argsort(-vector.weights, kind="stable")[:k]
    keep = np.sort(order)
    return SparseVector(vector.term_ids[keep], vector.weights[keep], vector.doc_id, _checked=True)


@dataclass(frozen=True)
class PostingList:
    term_id: int
    doc_ids: np.ndarray   # int32, strictly increasing internal ids
    weights: np.ndarray   # float32, > 0

    def __len__(self) -> int:
        return len(self.doc_ids)


@dataclass(frozen=True)
class SearchResult:
    """Ranked (doc_id, score) pairs plus the number of candidates scored."""

    results: tuple[tuple[str, float], ...]
    matches: int


class InvertedIndex:
    """Immutable term -> postings map over a fixed document collection."""

    def __init__(
        self,
        vocab_size: int,
        doc_names: Sequence[str],
        posting_ids: Sequence[np.ndarray],
        posting_weights: Sequence[np.ndarray],
    ):
        if len(posting_ids) != vocab_size or len(posting_weights) != vocab_size:
            raise ValueError("need one posting array pair per vocabulary term")
        self.vocab_size = vocab_size
        self.doc_names = tuple(doc_names)
        self.doc_count = len(self.doc_names)
        self._ids = [np.asarray(a, dtype=np.int32) for a in posting_ids]
        self._weights = [np.asarray(a, dtype=np.float32) for a in posting_weights]
        lengths = np.zeros(self.doc_count, dtype=np.int64)
        for ids in self._ids:
            ids.setflags(write=False)
            if len(ids) > 1 and np.any(np.diff(ids) <= 0):
                raise ValueError("posting doc ids must be strictly increasing")
            if len(ids) > 0 and (ids[0] < 0 or ids[-1] >= self.doc_count):
                raise ValueError("posting doc id out of range")
            np.add.at(lengths, ids, 1)
        for w in self._weights:
            w.setflags(write=False)
        self.doc_lengths = lengths
        self.doc_lengths.setflags(write=False)

    def postings(self, term_id: int) -> PostingList:
        return PostingList(term_id, self._ids[term_id], self._weights[term_id])

    def posting_count(self) -> int:
        return sum(len(a) for a in self._ids)

    def avg_doc_length(self) -> float:
        if self.doc_count == 0:
            return 0.0
        return float(self.doc_lengths.mean())


def build_index(docs: Sequence[SparseVector], vocab_size: int | None = None) -> InvertedIndex:
    """Invert (doc, term, weight) triples into per-term posting lists.

    Every doc needs a unique, non-None doc_id; internal ids follow input
    order.  Weights are cast to float32.  An empty corpus is rejected.
    `vocab_size` defaults to the largest term id present plus one.
    """
    if len(docs) == 0:
        raise ValueError("cannot build an index from an empty corpus")
    names: list[str] = []
    seen: set[str] = set()
    max_term = -1
    for vec in docs:
        if vec.doc_id is None:
            raise ValueError("every indexed vector needs a doc_id")
        if vec.doc_id in seen:
            raise ValueError(f"duplicate doc id {vec.doc_id!r}")
        seen.add(vec.doc_id)
        names.append(vec.doc_id)
        if len(vec) > 0:
            max_term = max(max_term, int(vec.term_ids[-1]))
    if vocab_size is None:
        vocab_size = max_term + 1
    elif max_term >= vocab_size:
        raise ValueError(f"term id {max_term} exceeds vocab_size {vocab_size}")

    if vocab_size == 0:
        return InvertedIndex(0, names, [], [])

    all_terms = np.concatenate([v.term_ids for v in docs])
    all_docs = np.concatenate(
        [np.full(len(v), i, dtype=np.int32) for i, v in enumerate(docs)]
    )
    all_weights = np.concatenate([v.weights.astype(np.float32) for v in docs])
    # stable sort by term keeps the doc-major input order, i.e. ascending
    # internal ids within each posting list
    order = np.argsort(all_terms, kind="stable")
    terms_sorted = all_terms[order]
    docs_sorted = all_docs[order]
    weights_sorted = all_weights[order]
    bounds = np.searchsorted(terms_sorted, np.arange(vocab_size + 1))
    posting_ids = [docs_sorted[bounds[t] : bounds[t + 1]] for t in range(vocab_size)]
    posting_weights = [weights_sorted[bounds[t] : bounds[t + 1]] for t in range(vocab_size)]
    return InvertedIndex(vocab_size, names, posting_ids, posting_weights)


def _clean_query(index_vocab_size: int, query_terms: Iterable[int]) -> list[int]:
    terms = sorted({int(t) for t in query_terms})
    if terms and (terms[0] < 0):
        raise ValueError("negative term id in query")
    return [t for t in terms if t < index_vocab_size]


def match_count(index: InvertedIndex, query_terms: Iterable[int]) -> int:
    """Number of distinct documents sharing at least one term with the query."""
    terms = _clean_query(index.vocab_size, query_terms)
    if not terms:
        return 0
    lists = [index._ids[t] for t in terms]
    return int(np.unique(np.concatenate(lists)).size)


def search(index: InvertedIndex, query_terms: Iterable[int], top_k: int = 10) -> SearchResult:
    """Exact top-k by accumulated posting weights over the match set.

    Scores every candidate in the posting-list union (full traversal), ranks
    by (score desc, internal id asc), and reports the union size as matches.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    terms = _clean_query(index.vocab_size, query_terms)
    if not terms:
        return SearchResult(results=(), matches=0)
    scores = np.zeros(index.doc_count, dtype=np.float64)
    touched = []
    for t in terms:
        ids = index._ids[t]
        if len(ids) > 0:
            scores[ids] += index._weights[t]
            touched.append(ids)
    if not touched:
        return SearchResult(results=(), matches=0)
    cands = np.unique(np.concatenate(touched))
    order = np.lexsort((cands, -scores[cands]))[:top_k]
    ranked = tuple(
        (index.doc_names[int(cands[i])], float(scores[cands[i]])) for i in order
    )
    return SearchResult(results=ranked, matches=int(cands.size))


def brute_force_search(
    docs: Sequence[SparseVector], query_terms: Iterable[int], top_k: int = 10
) -> SearchResult:
    """Score every document directly; the defining oracle for `search`.

    Applies the same float32 weight quantization and the same ascending-term
    accumulation order as the index, so agreement is exact, not approximate.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    terms = sorted({int(t) for t in query_terms})
    scored: list[tuple[float, int, str]] = []
    matches = 0
    for internal, vec in enumerate(docs):
        if vec.doc_id is None:
            raise ValueError("every doc needs a doc_id")
        score = 0.0
        hit = False
        for t in terms:
            pos = np.searchsorted(vec.term_ids, t)
            if pos < len(vec.term_ids) and vec.term_ids[pos] == t:
                score += float(np.float32(vec.weights[pos]))
                hit = True
        if hit:
            matches += 1
            scored.append((score, internal, vec.doc_id))
    scored.sort(key=lambda item: (-item[0], item[1]))
    ranked = tuple((doc_id, score) for score, _, doc_id in scored[:top_k])
    return SearchResult(results=ranked, matches=matches)


def df_report(index: InvertedIndex, top_n: int = 100) -> list[tuple[int, float]]:
    """The top_n terms by posting-list length as (term_id, DF%) descending.

    DF% = posting length / doc count * 100; ties go to the smaller term id.
    """
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    lengths = np.asarray([len(a) for a in index._ids], dtype=np.int64)
    order = np.lexsort((np.arange(index.vocab_size), -lengths))[:top_n]
    return [(int(t), 100.0 * float(lengths[t]) / index.doc_count) for t in order]


# --- binary index file -------------------------------------------------------
#
# Layout (little-endian):
#   8 bytes    magic "DFFIDX\0\0"
#   4 bytes    uint32 version (= 1)
#   4 bytes    uint32 |V|
#   4 bytes    uint32 doc_count
#   doc table  per doc: varint name length, then UTF-8 name bytes
#   offsets    (|V| + 1) uint64: start of each term's posting block relative
#              to the start of the posting section (last entry = section size)
#   postings   per term: varint posting count n, n varint doc-id deltas
#              (first = id, later = id - prev, always >= 1), n float32 weights


def _write_varint(out: bytearray, value: int) -> None:
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise IndexFormatError("truncated varint")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7


def _encode_varints(values: np.ndarray) -> bytes:
    """LEB128-encode an array of unsigned ints (vectorized)."""
    values = np.asarray(values, dtype=np.uint64)
    if values.size == 0:
        return b""
    nbytes = np.ones(values.size, dtype=np.int64)
    rest = values >> np.uint64(7)
    while np.any(rest):
        nbytes += rest > 0
        rest >>= np.uint64(7)
    total = int(nbytes.sum())
    ends = np.cumsum(nbytes)
    starts = ends - nbytes
    offsets = (np.arange(total) - np.repeat(starts, nbytes)).astype(np.uint64)
    chunks = (np.repeat(values, nbytes) >> (np.uint64(7) * offsets)) & np.uint64(0x7F)
    continues = np.arange(total) != np.repeat(ends - 1, nbytes)
    return (chunks.astype(np.uint8) | (continues.astype(np.uint8) << 7)).tobytes()


def _decode_varints(buf: bytes, expected: int) -> np.ndarray:
    """Decode exactly `expected` LEB128 values from buf (must consume it all)."""
    arr = np.frombuffer(buf, dtype=np.uint8)
    if arr.size == 0:
        if expected != 0:
            raise IndexFormatError("truncated varint run")
        return np.zeros(0, dtype=np.uint64)
    last = (arr & 0x80) == 0
    if not last[-1] or int(last.sum()) != expected:
        raise IndexFormatError("malformed varint run")
    vid = np.zeros(arr.size, dtype=np.int64)
    vid[1:] = np.cumsum(last[:-1])
    starts = np.nonzero(np.concatenate([[True], last[:-1]]))[0]
    offsets = (np.arange(arr.size) - starts[vid]).astype(np.uint64)
    values = np.zeros(expected, dtype=np.uint64)
    np.add.at(values, vid, (arr & np.uint8(0x7F)).astype(np.uint64) << (np.uint64(7) * offsets))
    return values


def save_index(index: InvertedIndex, path: str | Path) -> None:
    doc_table = bytearray()
    for name in index.doc_names:
        raw = name.encode("utf-8")
        _write_varint(doc_table, len(raw))
        doc_table.extend(raw)

    blocks: list[bytes] = []
    offsets = np.zeros(index.vocab_size + 1, dtype=np.uint64)
    pos = 0
    for t in range(index.vocab_size):
        block = bytearray()
        ids = index._ids[t]
        _write_varint(block, len(ids))
        if len(ids) > 0:
            deltas = np.diff(ids.astype(np.int64), prepend=0)
            block.extend(_encode_varints(deltas))
        block.extend(np.ascontiguousarray(index._weights[t], dtype="<f4").tobytes())
        offsets[t] = pos
        pos += len(block)
        blocks.append(bytes(block))
    offsets[index.vocab_size] = pos

    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<III", INDEX_VERSION, index.vocab_size, index.doc_count))
        fh.write(bytes(doc_table))
        fh.write(offsets.astype("<u8").tobytes())
        for block in blocks:
            fh.write(block)


def load_index(path: str | Path) -> InvertedIndex:
    blob = Path(path).read_bytes()
    if len(blob) < 20 or blob[:8] != INDEX_MAGIC:
        raise IndexFormatError(f"{path}: not an index file (bad magic)")
    version, vocab_size, doc_count = struct.unpack("<III", blob[8:20])
    if version != INDEX_VERSION:
        raise IndexFormatError(f"{path}: unsupported index version {version}")
    pos = 20
    names = []
    for _ in range(doc_count):
        n, pos = _read_varint(blob, pos)
        names.append(blob[pos : pos + n].decode("utf-8"))
        pos += n
    offs_end = pos + 8 * (vocab_size + 1)
    if offs_end > len(blob):
        raise IndexFormatError(f"{path}: truncated offset table")
    offsets = np.frombuffer(blob, dtype="<u8", count=vocab_size + 1, offset=pos)
    base = offs_end
    posting_ids = []
    posting_weights = []
    for t in range(vocab_size):
        p = base + int(offsets[t])
        end = base + int(offsets[t + 1])
        if end > len(blob):
            raise IndexFormatError(f"{path}: truncated posting data")
        n, p = _read_varint(blob, p)
        if p + 4 * n > end:
            raise IndexFormatError(f"{path}: posting block size mismatch for term {t}")
        deltas = _decode_varints(blob[p : end - 4 * n], n)
        ids = np.cumsum(deltas).astype(np.int32)
        weights = np.frombuffer(blob, dtype="<f4", count=n, offset=end - 4 * n)
        posting_ids.append(ids)
        posting_weights.append(weights.copy())
    return InvertedIndex(vocab_size, names, posting_ids, posting_weights)


# --- encoded-vector interchange (JSON lines) ---------------------------------

def write_vectors_jsonl(
    vectors: Sequence[SparseVector], vocab: Vocabulary, path: str | Path
) -> None:
    """One {"id": ..., "vector": {term: weight, ...}} object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for vec in vectors:
            entries = {vocab.term_of(int(t)): float(w) for t, w in zip(vec.term_ids, vec.weights)}
            fh.write(json.dumps({"id": vec.doc_id, "vector": entries}) + "\n")


def read_vectors_jsonl(path: str | Path, vocab: Vocabulary) -> list[SparseVector]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                entries = {vocab.term_to_id[t]: float(w) for t, w in obj["vector"].items()}
                out.append(SparseVector.from_dict(entries, str(obj["id"])))
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: unknown term or missing field ({exc})") from exc
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: bad JSON ({exc})") from exc
    return out
