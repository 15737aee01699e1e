"""Retrieval-quality metrics, TREC-format I/O, and the latency benchmark.

Metrics follow the usual conventions: queries without judged documents (or,
for nDCG, with a zero ideal gain) are excluded from the mean.  The benchmark
runs queries sequentially on one thread, timing tokenization plus search per
query; one full warmup pass is discarded before measuring.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import Vocabulary, tokenize
from .index import InvertedIndex, df_report, search

# run: query_id -> ranked doc ids (best first)
Run = Mapping[str, Sequence[str]]
# qrels: query_id -> {doc_id: grade}
Qrels = Mapping[str, Mapping[str, int]]


def mrr_at_k(run: Run, qrels: Qrels, k: int = 10) -> float:
    """Mean reciprocal rank of the first relevant doc within the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    total, n = 0.0, 0
    for qid, ranking in run.items():
        judged = qrels.get(qid)
        if not judged:
            continue
        n += 1
        for rank, doc in enumerate(ranking[:k], start=1):
            if judged.get(doc, 0) > 0:
                total += 1.0 / rank
                break
    return total / n if n else 0.0


def recall_at_k(run: Run, qrels: Qrels, k: int = 100) -> float:
    """Mean fraction of each query's relevant docs found in the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    total, n = 0.0, 0
    for qid, ranking in run.items():
        judged = qrels.get(qid)
        if not judged:
            continue
        relevant = {d for d, g in judged.items() if g > 0}
        if not relevant:
            continue
        n += 1
        total += len(relevant.intersection(ranking[:k])) / len(relevant)
    return total / n if n else 0.0


def ndcg_at_k(run: Run, qrels: Qrels, k: int = 10) -> float:
    """Graded nDCG with gain 2^grade - 1 and log2(rank + 1) discount."""
    if k < 1:
        raise ValueError("k must be >= 1")
    total, n = 0.0, 0
    for qid, ranking in run.items():
        judged = qrels.get(qid)
        if not judged:
            continue
        ideal_gains = sorted((g for g in judged.values() if g > 0), reverse=True)[:k]
        idcg = sum((2**g - 1) / math.log2(r + 1) for r, g in enumerate(ideal_gains, start=1))
        if idcg == 0.0:
            continue
        n += 1
        dcg = sum(
            (2 ** judged.get(doc, 0) - 1) / math.log2(rank + 1)
            for rank, doc in enumerate(ranking[:k], start=1)
        )
        total += dcg / idcg
    return total / n if n else 0.0


# --- TREC file formats -------------------------------------------------------

def read_qrels(path: str | Path) -> dict[str, dict[str, int]]:
    """TREC qrels: `query_id 0 doc_id grade` per line."""
    qrels: dict[str, dict[str, int]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 whitespace-separated fields")
            qid, _, doc, grade = parts
            if int(grade) < 0:
                raise ValueError(f"{path}:{lineno}: negative relevance grade")
            qrels.setdefault(qid, {})[doc] = int(grade)
    return qrels


def write_qrels(qrels: Qrels, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in qrels:
            for doc, grade in qrels[qid].items():
                fh.write(f"{qid} 0 {doc} {grade}\n")


def read_run(path: str | Path) -> dict[str, list[str]]:
    """TREC run: `query_id Q0 doc_id rank score tag`; ranked by the rank field."""
    rows: dict[str, list[tuple[int, str]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 whitespace-separated fields")
            qid, _, doc, rank, _score, _tag = parts
            rows.setdefault(qid, []).append((int(rank), doc))
    return {qid: [doc for _, doc in sorted(pairs)] for qid, pairs in rows.items()}


def format_run_lines(
    qid: str, ranked: Sequence[tuple[str, float]], tag: str = "dfflops"
) -> list[str]:
    return [
        f"{qid} Q0 {doc} {rank} {score:.6f} {tag}"
        for rank, (doc, score) in enumerate(ranked, start=1)
    ]


# --- latency benchmark -------------------------------------------------------

@dataclass(frozen=True)
class BenchReport:
    latency_avg_ms: float
    latency_p99_ms: float
    matches_avg: float
    top1_df_pct: float
    avg_emb_length: float
    per_query_ms: tuple[float, ...]   # per-query means across repeats
    repeats: int
    query_count: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "latency_avg_ms": self.latency_avg_ms,
                "latency_p99_ms": self.latency_p99_ms,
                "matches_avg": self.matches_avg,
                "top1_df_pct": self.top1_df_pct,
                "avg_emb_length": self.avg_emb_length,
                "repeats": self.repeats,
                "query_count": self.query_count,
                "per_query_ms": list(self.per_query_ms),
            },
            sort_keys=True,
        )

    def table(self) -> str:
        header = f"{'Latency Avg (ms)':>18} {'Latency P99 (ms)':>18} {'Matches Avg':>12} {'Top@1 DF%':>10} {'Avg Emb Len':>12}"
        row = (
            f"{self.latency_avg_ms:>18.3f} {self.latency_p99_ms:>18.3f} "
            f"{self.matches_avg:>12.1f} {self.top1_df_pct:>10.2f} {self.avg_emb_length:>12.1f}"
        )
        return header + "\n" + row


def percentile_nearest_rank(values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * n)-th smallest value."""
    if not values:
        raise ValueError("empty sample")
    ordered = sorted(values)
    rank = max(1, math.ceil(pct / 100.0 * len(ordered)))
    return ordered[rank - 1]


def bench_latency(
    index: InvertedIndex,
    queries: Sequence[tuple[str, str]],
    vocab: Vocabulary,
    repeats: int = 3,
    top_k: int = 10,
) -> BenchReport:
    """Time (query tokenization + search) per query, repeated `repeats` times.

    Reports the mean over per-query means, nearest-rank p99 over per-query
    means, the exact mean match count, the DF% of the most frequent indexed
    term, and the average indexed vector length.
    """
    if len(queries) == 0:
        raise ValueError("empty query set")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")

    lookup = vocab.term_to_id

    def run_query(text: str):
        terms = {lookup[t] for t in tokenize(text) if t in lookup}
        return search(index, terms, top_k)

    # one discarded warmup pass
    for _, text in queries:
        run_query(text)

    timings = np.zeros((repeats, len(queries)), dtype=np.float64)
    matches = np.zeros(len(queries), dtype=np.int64)
    for r in range(repeats):
        for i, (_, text) in enumerate(queries):
            t0 = time.perf_counter()
            result = run_query(text)
            timings[r, i] = (time.perf_counter() - t0) * 1000.0
            matches[i] = result.matches

    per_query = timings.mean(axis=0)
    top1 = df_report(index, 1)
    return BenchReport(
        latency_avg_ms=float(per_query.mean()),
        latency_p99_ms=float(percentile_nearest_rank(per_query.tolist(), 99.0)),
        matches_avg=float(matches.mean()),
        top1_df_pct=float(top1[0][1]) if top1 else 0.0,
        avg_emb_length=index.avg_doc_length(),
        per_query_ms=tuple(float(x) for x in per_query),
        repeats=repeats,
        query_count=len(queries),
    )
