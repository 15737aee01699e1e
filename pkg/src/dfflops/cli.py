"""Command-line surface: ingestion, training, indexing, search, eval, bench.

Every command is deterministic for a fixed seed (timings excepted) and exits
0 exactly when it completed.  Errors are written to stderr with a
machine-parsable ``error[<kind>]:`` prefix.  Config files are plain
``key = value`` lines; ``#`` starts a comment, and paths are resolved
relative to the config file's directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .core import (
    SparseVector,
    Vocabulary,
    avg_active_terms,
    build_vocab,
    load_vocab,
    read_corpus_jsonl,
    save_vocab,
    tokenize,
    vectorize_counts,
    write_corpus_jsonl,
)
from .encoder import (
    TrainConfig,
    counts_matrix,
    encode_corpus,
    load_checkpoint,
    prepare_queries,
    read_queries_tsv,
    save_checkpoint,
    train,
)
from .eval import (
    bench_latency,
    format_run_lines,
    mrr_at_k,
    ndcg_at_k,
    read_qrels,
    read_run,
    recall_at_k,
    write_qrels,
)
from .index import (
    build_index,
    df_report,
    load_index,
    prune_topk,
    read_vectors_jsonl,
    save_index,
    search,
    write_vectors_jsonl,
)
from .reg import ActivationParams
from .synth import SynthConfig, generate


class CliError(Exception):
    """User-facing failure with a machine-parsable kind tag."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


# --- config files ------------------------------------------------------------

def parse_config_lines(text: str, source: str = "<config>") -> list[tuple[str, str, int]]:
    """Split documented key=value lines into (key, value, lineno) triples."""
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError("config", f"{source}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        entries.append((key.strip(), value.strip(), lineno))
    return entries


@dataclass
class ConfigReader:
    """Typed accessor over parsed config entries; rejects unknown keys."""

    entries: list[tuple[str, str, int]]
    source: str
    base_dir: Path
    used: set = field(default_factory=set)

    @classmethod
    def from_file(cls, path: str | Path) -> "ConfigReader":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise CliError("io", f"cannot read config {path}: {exc}") from exc
        return cls(parse_config_lines(text, str(path)), str(path), path.parent.resolve())

    def _values(self, key: str) -> list[str]:
        self.used.add(key)
        return [v for k, v, _ in self.entries if k == key]

    def get(self, key: str, default: str | None = None) -> str | None:
        vals = self._values(key)
        return vals[-1] if vals else default

    def get_all(self, key: str) -> list[str]:
        return self._values(key)

    def get_path(self, key: str, default: str | None = None) -> Path | None:
        val = self.get(key, default)
        if val is None:
            return None
        p = Path(val)
        return p if p.is_absolute() else self.base_dir / p

    def get_typed(self, key: str, conv: Callable, default):
        val = self.get(key, None)
        if val is None:
            return default
        try:
            return conv(val)
        except (TypeError, ValueError) as exc:
            raise CliError("config", f"{self.source}: bad value for {key!r}: {val!r}") from exc

    def reject_unknown(self) -> None:
        for key, _, lineno in self.entries:
            if key not in self.used:
                raise CliError("config", f"{self.source}:{lineno}: unknown key {key!r}")


def _parse_bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes"):
        return True
    if v.lower() in ("0", "false", "no"):
        return False
    raise ValueError(v)


# --- manifests ----------------------------------------------------------------

def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    path: Path,
    command: str,
    seed: int | None,
    config_snapshot: dict,
    inputs: dict[str, Path],
    outputs: dict[str, Path],
) -> None:
    manifest = {
        "tool_version": __version__,
        "command": command,
        "seed": seed,
        "config": config_snapshot,
        "inputs": {name: {"path": str(p), "sha256": sha256_file(p)} for name, p in inputs.items()},
        "outputs": {name: {"path": str(p), "sha256": sha256_file(p)} for name, p in outputs.items()},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- shared loading helpers ----------------------------------------------------

def _load_vocab(path: Path) -> Vocabulary:
    try:
        vocab = load_vocab(path)
    except OSError as exc:
        raise CliError("io", f"cannot read vocabulary {path}: {exc}") from exc
    if len(vocab) == 0:
        raise CliError("data", f"vocabulary {path} is empty")
    return vocab


def _load_corpus(path: Path) -> list[tuple[str, str]]:
    try:
        return read_corpus_jsonl(path)
    except OSError as exc:
        raise CliError("io", f"cannot read corpus {path}: {exc}") from exc
    except ValueError as exc:
        raise CliError("format", str(exc)) from exc


def _count_vectors(docs: Sequence[tuple[str, str]], vocab: Vocabulary) -> list[SparseVector]:
    return [vectorize_counts(tokenize(text), vocab, doc_id) for doc_id, text in docs]


def _read_query_tsv_lenient(path: Path) -> list[tuple[str, str]]:
    """(query_id, text) rows; a trailing positive-doc column is accepted and ignored."""
    rows = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) < 2:
                    raise CliError("format", f"{path}:{lineno}: expected at least 2 tab-separated fields")
                rows.append((parts[0], parts[1]))
    except OSError as exc:
        raise CliError("io", f"cannot read queries {path}: {exc}") from exc
    return rows


def _query_terms(text: str, vocab: Vocabulary) -> set[int]:
    lookup = vocab.term_to_id
    return {lookup[t] for t in tokenize(text) if t in lookup}


# --- commands ------------------------------------------------------------------

def cmd_build_vocab(args: argparse.Namespace) -> int:
    docs = _load_corpus(Path(args.corpus))
    try:
        vocab = build_vocab((tokenize(text) for _, text in docs), min_df=args.min_df)
    except ValueError as exc:
        raise CliError("data", str(exc)) from exc
    save_vocab(vocab, args.out)
    print(f"wrote {len(vocab)} terms to {args.out}")
    return 0


def _train_config_from(reader: ConfigReader, seed_override: int | None) -> tuple[TrainConfig, dict]:
    activation = ActivationParams(
        alpha=reader.get_typed("alpha", float, 0.1),
        beta=reader.get_typed("beta", float, 10.0),
    )
    raw = dict(
        learning_rate=reader.get_typed("learning_rate", float, 0.05),
        batch_size=reader.get_typed("batch_size", int, 16),
        total_steps=reader.get_typed("total_steps", int, 2000),
        peak_lambda=reader.get_typed("peak_lambda", float, 1.0),
        warmup_steps=reader.get_typed("warmup_steps", int, None),
        df_refresh_interval=reader.get_typed("df_refresh_interval", int, 100),
        df_sample_size=reader.get_typed("df_sample_size", int, 2048),
        hard_negatives=reader.get_typed("hard_negatives", int, 7),
        regularizer=reader.get("regularizer", "df_flops"),
        epsilon=reader.get_typed("epsilon", float, 0.0),
        rank=reader.get_typed("rank", int, 64),
        seed=reader.get_typed("seed", int, 42),
    )
    if seed_override is not None:
        raw["seed"] = seed_override
    try:
        config = TrainConfig(activation=activation, **raw)
    except ValueError as exc:
        raise CliError("config", f"{reader.source}: {exc}") from exc
    snapshot = dict(raw)
    snapshot["alpha"] = activation.alpha
    snapshot["beta"] = activation.beta
    snapshot["warmup_steps"] = config.warmup_steps
    return config, snapshot


def cmd_train(args: argparse.Namespace) -> int:
    reader = ConfigReader.from_file(args.config)
    corpus_path = reader.get_path("corpus")
    queries_path = reader.get_path("queries")
    vocab_path = reader.get_path("vocab")
    out_dir = reader.get_path("out_dir", "train_out")
    if args.out_dir:
        out_dir = Path(args.out_dir)
    if corpus_path is None or queries_path is None or vocab_path is None:
        raise CliError("config", f"{reader.source}: corpus, queries and vocab are required")
    config, snapshot = _train_config_from(reader, args.seed)
    reader.reject_unknown()

    vocab = _load_vocab(vocab_path)
    docs = _load_corpus(corpus_path)
    counts = _count_vectors(docs, vocab)
    doc_index = {doc_id: i for i, (doc_id, _) in enumerate(docs)}
    if len(doc_index) != len(docs):
        raise CliError("data", f"duplicate doc ids in {corpus_path}")
    try:
        rows = read_queries_tsv(queries_path)
        queries = prepare_queries(rows, vocab, doc_index)
    except (OSError, ValueError) as exc:
        raise CliError("data", f"bad training queries: {exc}") from exc

    try:
        params, log = train(config, counts, queries, len(vocab))
    except ValueError as exc:
        raise CliError("data", str(exc)) from exc

    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "checkpoint.bin"
    logf = out_dir / "trainlog.jsonl"
    save_checkpoint(ckpt, params, vocab.digest())
    log.write_jsonl(logf)
    write_manifest(
        out_dir / "manifest.json",
        "train",
        config.seed,
        snapshot,
        inputs={"corpus": corpus_path, "queries": queries_path, "vocab": vocab_path},
        outputs={"checkpoint": ckpt, "trainlog": logf},
    )
    print(f"trained {config.total_steps} steps ({config.regularizer}); wrote {ckpt}")
    return 0


def cmd_encode(args: argparse.Namespace) -> int:
    vocab = _load_vocab(Path(args.vocab))
    try:
        params, digest = load_checkpoint(args.checkpoint)
    except (OSError, ValueError) as exc:
        raise CliError("format", f"cannot load checkpoint: {exc}") from exc
    if digest != vocab.digest():
        raise CliError("data", "vocabulary hash mismatch between checkpoint and vocab file")
    if params.vocab_size != len(vocab):
        raise CliError("data", "checkpoint dimension does not match vocabulary size")
    docs = _load_corpus(Path(args.corpus))
    counts = _count_vectors(docs, vocab)
    X = counts_matrix(counts, len(vocab))
    vectors = encode_corpus(params, X, doc_ids=[d for d, _ in docs])
    if args.prune_k is not None:
        if args.prune_k < 1:
            raise CliError("config", "--prune-k must be >= 1")
        vectors = [prune_topk(v, args.prune_k) for v in vectors]
    write_vectors_jsonl(vectors, vocab, args.out)
    print(f"encoded {len(vectors)} docs (avg {avg_active_terms(vectors):.1f} active terms)")
    return 0


def cmd_index(args: argparse.Namespace) -> int:
    vocab = _load_vocab(Path(args.vocab))
    try:
        vectors = read_vectors_jsonl(args.vectors, vocab)
    except (OSError, ValueError) as exc:
        raise CliError("format", f"bad vectors file: {exc}") from exc
    try:
        index = build_index(vectors, vocab_size=len(vocab))
    except ValueError as exc:
        raise CliError("data", str(exc)) from exc
    save_index(index, args.out)
    print(f"indexed {index.doc_count} docs, {index.posting_count()} postings -> {args.out}")
    return 0


def _load_index(path: str) -> "InvertedIndex":
    try:
        return load_index(path)
    except OSError as exc:
        raise CliError("io", f"cannot read index {path}: {exc}") from exc
    except ValueError as exc:
        raise CliError("format", str(exc)) from exc


def cmd_search(args: argparse.Namespace) -> int:
    index = _load_index(args.index)
    vocab = _load_vocab(Path(args.vocab))
    if args.query is not None:
        queries = [("q0", args.query)]
    elif args.queries is not None:
        queries = _read_query_tsv_lenient(Path(args.queries))
    else:
        raise CliError("config", "provide --query or --queries")
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for qid, text in queries:
            result = search(index, _query_terms(text, vocab), args.top_k)
            for line in format_run_lines(qid, result.results, tag=args.tag):
                print(line, file=out)
    finally:
        if args.out:
            out.close()
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        run = read_run(args.run)
        qrels = read_qrels(args.qrels)
    except (OSError, ValueError) as exc:
        raise CliError("format", str(exc)) from exc
    print(f"MRR@{args.mrr_k} {mrr_at_k(run, qrels, args.mrr_k):.4f}")
    print(f"Recall@{args.recall_k} {recall_at_k(run, qrels, args.recall_k):.4f}")
    print(f"nDCG@{args.ndcg_k} {ndcg_at_k(run, qrels, args.ndcg_k):.4f}")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    index = _load_index(args.index)
    vocab = _load_vocab(Path(args.vocab))
    queries = _read_query_tsv_lenient(Path(args.queries))
    try:
        report = bench_latency(index, queries, vocab, repeats=args.repeats, top_k=args.top_k)
    except ValueError as exc:
        raise CliError("data", str(exc)) from exc
    print(report.table())
    if args.json_out:
        Path(args.json_out).write_text(report.to_json() + "\n", encoding="utf-8")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    index = _load_index(args.index)
    vocab = _load_vocab(Path(args.vocab)) if args.vocab else None
    rows = df_report(index, args.top_n)
    print(f"{'rank':>4} {'term_id':>8} {'term':>12} {'df_pct':>8}")
    lines = ["rank,term_id,term,df_pct"]
    for rank, (tid, pct) in enumerate(rows, start=1):
        term = vocab.term_of(tid) if vocab and tid < len(vocab) else ""
        print(f"{rank:>4} {tid:>8} {term:>12} {pct:>8.2f}")
        lines.append(f"{rank},{tid},{term},{pct:.6f}")
    if args.csv_out:
        Path(args.csv_out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_gen_corpus(args: argparse.Namespace) -> int:
    try:
        config = SynthConfig(
            num_docs=args.docs,
            vocab_size=args.terms,
            num_train_queries=args.train_queries,
            num_eval_queries=args.eval_queries,
            noise_terms=args.noise_terms,
            seed=args.seed if args.seed is not None else 42,
        )
    except ValueError as exc:
        raise CliError("config", str(exc)) from exc
    data = generate(config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus_jsonl(data.docs, out / "corpus.jsonl")
    _write_queries_tsv(data.train_queries, out / "train_queries.tsv")
    _write_queries_tsv(data.eval_queries, out / "eval_queries.tsv")
    write_qrels(data.qrels, out / "qrels.txt")
    print(
        f"wrote {len(data.docs)} docs, {len(data.train_queries)} train / "
        f"{len(data.eval_queries)} eval queries to {out}"
    )
    return 0


def _write_queries_tsv(rows: Sequence[tuple[str, str, str]], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid, text, pos in rows:
            fh.write(f"{qid}\t{text}\t{pos}\n")


# --- the comparison experiment --------------------------------------------------

@dataclass(frozen=True)
class Regime:
    name: str
    regularizer: str
    peak_lambda: float
    prune: int | None = None

    def train_key(self) -> tuple:
        return (self.regularizer, self.peak_lambda)


DEFAULT_DF_FLOPS_LAMBDA = 1.0

DEFAULT_REGIMES = (
    Regime("flops", "flops", 1e-3),
    Regime("flops_prune150", "flops", 1e-3, prune=150),
    Regime("flops_lam0.1", "flops", 0.1),
    Regime("flops_lam1", "flops", 1.0),
    Regime("df_flops", "df_flops", DEFAULT_DF_FLOPS_LAMBDA),
    Regime("df_flops_prune150", "df_flops", DEFAULT_DF_FLOPS_LAMBDA, prune=150),
)


def _parse_regime(value: str, source: str) -> Regime:
    parts = value.split()
    if not parts:
        raise CliError("config", f"{source}: empty regime definition")
    name = parts[0]
    fields = {"reg": "flops", "peak_lambda": None, "prune": None}
    for tok in parts[1:]:
        if "=" not in tok:
            raise CliError("config", f"{source}: regime {name!r}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        if k not in fields:
            raise CliError("config", f"{source}: regime {name!r}: unknown field {k!r}")
        fields[k] = v
    if fields["peak_lambda"] is None:
        raise CliError("config", f"{source}: regime {name!r}: peak_lambda is required")
    try:
        return Regime(
            name=name,
            regularizer=fields["reg"],
            peak_lambda=float(fields["peak_lambda"]),
            prune=int(fields["prune"]) if fields["prune"] is not None else None,
        )
    except ValueError as exc:
        raise CliError("config", f"{source}: regime {name!r}: {exc}") from exc


@dataclass
class CompareSettings:
    out_dir: Path
    seeds: tuple[int, ...]
    regimes: tuple[Regime, ...]
    synth: SynthConfig
    min_df: int
    train_overrides: dict
    repeats: int
    bench_top_k: int
    run_top_k: int
    mrr_k: int
    recall_k: int
    ndcg_k: int
    df_series_top: int
    data_paths: dict[str, Path] | None   # corpus/train_queries/eval_queries/qrels


def _compare_settings(reader: ConfigReader, args: argparse.Namespace) -> CompareSettings:
    seeds_raw = reader.get("seeds", "42,43,44")
    if args.seed is not None:
        seeds_raw = str(args.seed)
    try:
        seeds = tuple(int(s) for s in seeds_raw.split(",") if s.strip())
    except ValueError as exc:
        raise CliError("config", f"bad seeds list {seeds_raw!r}") from exc
    if not seeds:
        raise CliError("config", "at least one seed is required")

    regime_lines = reader.get_all("regime")
    regimes = tuple(_parse_regime(v, reader.source) for v in regime_lines) or DEFAULT_REGIMES
    for r in regimes:
        if r.regularizer not in ("flops", "df_flops", "df_flops_static"):
            raise CliError("config", f"regime {r.name!r}: unknown regularizer {r.regularizer!r}")

    synth = SynthConfig(
        num_docs=reader.get_typed("num_docs", int, 10000),
        vocab_size=reader.get_typed("vocab_terms", int, 2000),
        num_train_queries=reader.get_typed("num_train_queries", int, 1000),
        num_eval_queries=reader.get_typed("num_eval_queries", int, 500),
        zipf_exponent=reader.get_typed("zipf_exponent", float, 1.1),
        doc_len_min=reader.get_typed("doc_len_min", int, 20),
        doc_len_max=reader.get_typed("doc_len_max", int, 60),
        query_min_terms=reader.get_typed("query_min_terms", int, 2),
        query_max_terms=reader.get_typed("query_max_terms", int, 4),
        noise_terms=reader.get_typed("noise_terms", int, 2),
        informative_min_rank=reader.get_typed("informative_min_rank", int, 150),
        noise_max_rank=reader.get_typed("noise_max_rank", int, 25),
        seed=seeds[0],
    )

    train_overrides = dict(
        learning_rate=reader.get_typed("learning_rate", float, 0.05),
        batch_size=reader.get_typed("batch_size", int, 16),
        total_steps=reader.get_typed("total_steps", int, 2000),
        warmup_steps=reader.get_typed("warmup_steps", int, None),
        df_refresh_interval=reader.get_typed("df_refresh_interval", int, 100),
        df_sample_size=reader.get_typed("df_sample_size", int, 2048),
        hard_negatives=reader.get_typed("hard_negatives", int, 7),
        epsilon=reader.get_typed("epsilon", float, 0.0),
        rank=reader.get_typed("rank", int, 64),
    )
    activation = ActivationParams(
        alpha=reader.get_typed("alpha", float, 0.1),
        beta=reader.get_typed("beta", float, 10.0),
    )
    train_overrides["activation"] = activation

    paths = {}
    for key in ("corpus", "train_queries", "eval_queries", "qrels"):
        p = reader.get_path(key)
        if p is not None:
            paths[key] = p
    if paths and len(paths) != 4:
        raise CliError("config", "give all of corpus, train_queries, eval_queries, qrels or none")

    out_dir = reader.get_path("out_dir", "compare_out")
    if args.out_dir:
        out_dir = Path(args.out_dir)

    settings = CompareSettings(
        out_dir=out_dir,
        seeds=seeds,
        regimes=regimes,
        synth=synth,
        min_df=reader.get_typed("min_df", int, 2),
        train_overrides=train_overrides,
        repeats=reader.get_typed("repeats", int, 3),
        bench_top_k=reader.get_typed("bench_top_k", int, 10),
        run_top_k=reader.get_typed("run_top_k", int, 100),
        mrr_k=reader.get_typed("mrr_k", int, 10),
        recall_k=reader.get_typed("recall_k", int, 100),
        ndcg_k=reader.get_typed("ndcg_k", int, 10),
        df_series_top=reader.get_typed("df_series_top", int, 100),
        data_paths=paths or None,
    )
    reader.reject_unknown()
    return settings


def _stage(name: str, fn: Callable, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except CliError:
        raise
    except Exception as exc:
        raise CliError("stage", f"compare stage {name!r} failed: {exc}") from exc


def run_compare(settings: CompareSettings) -> dict:
    """Train/encode/index/bench every regime for every seed; return the report."""
    rows = []
    series = []
    raw_avg_tokens = None

    for seed in settings.seeds:
        if settings.data_paths is None:
            synth_cfg = SynthConfig(**{**settings.synth.__dict__, "seed": seed})
            data = _stage("generate", generate, synth_cfg)
            docs = data.docs
            train_rows = data.train_queries
            eval_rows = [(q, t) for q, t, _ in data.eval_queries]
            qrels = data.qrels
        else:
            docs = _stage("load corpus", _load_corpus, settings.data_paths["corpus"])
            train_rows = _stage("load train queries", read_queries_tsv, settings.data_paths["train_queries"])
            eval_rows = _read_query_tsv_lenient(settings.data_paths["eval_queries"])
            qrels = _stage("load qrels", read_qrels, settings.data_paths["qrels"])

        vocab = _stage(
            "build vocab", build_vocab, (tokenize(text) for _, text in docs), settings.min_df
        )
        counts = _stage("vectorize", _count_vectors, docs, vocab)
        raw_avg_tokens = avg_active_terms(counts)
        doc_index = {doc_id: i for i, (doc_id, _) in enumerate(docs)}
        queries = _stage("prepare queries", prepare_queries, train_rows, vocab, doc_index)

        cache_key = None
        cached = None
        for regime in settings.regimes:
            if cache_key != (seed,) + regime.train_key():
                config = TrainConfig(
                    peak_lambda=regime.peak_lambda,
                    regularizer=regime.regularizer,
                    seed=seed,
                    **settings.train_overrides,
                )
                params, log = _stage(f"train {regime.name}", train, config, counts, queries, len(vocab))
                X = counts_matrix(counts, len(vocab))
                vectors = _stage(f"encode {regime.name}", encode_corpus, params, X, [d for d, _ in docs])
                cache_key = (seed,) + regime.train_key()
                cached = vectors
            vectors = cached
            if regime.prune is not None:
                vectors = [prune_topk(v, regime.prune) for v in vectors]
            index = _stage(f"index {regime.name}", build_index, vectors, vocab_size=len(vocab))

            report = _stage(
                f"bench {regime.name}", bench_latency, index, eval_rows, vocab,
                settings.repeats, settings.bench_top_k,
            )
            run = {}
            for qid, text in eval_rows:
                result = search(index, _query_terms(text, vocab), settings.run_top_k)
                run[qid] = [doc for doc, _ in result.results]
            rows.append({
                "seed": seed,
                "regime": regime.name,
                "regularizer": regime.regularizer,
                "peak_lambda": regime.peak_lambda,
                "prune": regime.prune,
                "mrr": mrr_at_k(run, qrels, settings.mrr_k),
                "recall": recall_at_k(run, qrels, settings.recall_k),
                "ndcg": ndcg_at_k(run, qrels, settings.ndcg_k),
                "latency_avg_ms": report.latency_avg_ms,
                "latency_p99_ms": report.latency_p99_ms,
                "matches_avg": report.matches_avg,
                "top1_df_pct": report.top1_df_pct,
                "avg_emb_length": report.avg_emb_length,
            })
            for rank, (tid, pct) in enumerate(df_report(index, settings.df_series_top), start=1):
                series.append({"seed": seed, "regime": regime.name, "rank": rank, "df_pct": pct})

    return {
        "tool_version": __version__,
        "seeds": list(settings.seeds),
        "metric_ks": {"mrr": settings.mrr_k, "recall": settings.recall_k, "ndcg": settings.ndcg_k},
        "raw_corpus_avg_tokens": raw_avg_tokens,
        "rows": rows,
        "df_series": series,
    }


def _format_compare_table(report: dict) -> str:
    mk = report["metric_ks"]
    header = (
        f"{'seed':>5} {'regime':<20} {('MRR@%d' % mk['mrr']):>8} {('R@%d' % mk['recall']):>8} "
        f"{'LatAvg(ms)':>11} {'LatP99(ms)':>11} {'MatchAvg':>10} {'Top1DF%':>8} {'AvgEmbLen':>10}"
    )
    lines = [header]
    for row in report["rows"]:
        lines.append(
            f"{row['seed']:>5} {row['regime']:<20} {row['mrr']:>8.4f} {row['recall']:>8.4f} "
            f"{row['latency_avg_ms']:>11.3f} {row['latency_p99_ms']:>11.3f} "
            f"{row['matches_avg']:>10.1f} {row['top1_df_pct']:>8.2f} {row['avg_emb_length']:>10.1f}"
        )
    return "\n".join(lines)


def cmd_compare(args: argparse.Namespace) -> int:
    if args.config:
        reader = ConfigReader.from_file(args.config)
    else:
        reader = ConfigReader([], "<defaults>", Path.cwd())
    settings = _compare_settings(reader, args)
    settings.out_dir.mkdir(parents=True, exist_ok=True)

    report = run_compare(settings)

    report_path = settings.out_dir / "report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    table = _format_compare_table(report)
    (settings.out_dir / "table.txt").write_text(table + "\n", encoding="utf-8")
    series_lines = ["seed,regime,rank,df_pct"]
    series_lines += [
        f"{s['seed']},{s['regime']},{s['rank']},{s['df_pct']:.6f}" for s in report["df_series"]
    ]
    (settings.out_dir / "df_series.csv").write_text("\n".join(series_lines) + "\n", encoding="utf-8")
    print(table)
    print(f"\nreport: {report_path}")
    return 0


# --- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dfflops",
        description="Learned sparse retrieval with document-frequency-aware regularization.",
    )
    parser.add_argument("--version", action="version", version=f"dfflops {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(fn=fn)
        p.add_argument("--threads", type=int, default=1, help="BLAS thread cap (default 1)")
        return p

    p = add("build-vocab", cmd_build_vocab, "build a vocabulary from a JSONL corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--min-df", type=int, default=1)
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train an encoder from a key=value config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out-dir", default=None, help="override the config out_dir")

    p = add("encode", cmd_encode, "encode a corpus with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--prune-k", type=int, default=None, help="keep only the k largest weights")

    p = add("index", cmd_index, "build a binary inverted index from encoded vectors")
    p.add_argument("--vectors", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)

    p = add("search", cmd_search, "run queries against an index (TREC run output)")
    p.add_argument("--index", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--query", default=None, help="single query text")
    p.add_argument("--queries", default=None, help="TSV file of query_id<TAB>text")
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--tag", default="dfflops")
    p.add_argument("--out", default=None, help="write run lines here instead of stdout")

    p = add("eval", cmd_eval, "score a TREC run against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--mrr-k", type=int, default=10)
    p.add_argument("--recall-k", type=int, default=100)
    p.add_argument("--ndcg-k", type=int, default=10)

    p = add("bench", cmd_bench, "latency/sparsity benchmark over a query set")
    p.add_argument("--index", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--json-out", default=None)

    p = add("stats", cmd_stats, "top-N document-frequency table of an index")
    p.add_argument("--index", required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--top-n", type=int, default=100)
    p.add_argument("--csv-out", default=None)

    p = add("gen-corpus", cmd_gen_corpus, "generate the synthetic Zipf testbed")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--docs", type=int, default=10000)
    p.add_argument("--terms", type=int, default=2000)
    p.add_argument("--train-queries", type=int, default=1000)
    p.add_argument("--eval-queries", type=int, default=500)
    p.add_argument("--noise-terms", type=int, default=2)
    p.add_argument("--seed", type=int, default=42)

    p = add("compare", cmd_compare, "train/encode/index/bench a set of regimes end-to-end")
    p.add_argument("--config", default=None, help="experiment config (defaults used if omitted)")
    p.add_argument("--seed", type=int, default=None, help="run a single seed instead of the config list")
    p.add_argument("--out-dir", default=None)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        import threadpoolctl

        with threadpoolctl.threadpool_limits(limits=max(1, args.threads)):
            return args.fn(args)
    except CliError as exc:
        print(f"error[{exc.kind}]: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error[internal]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
