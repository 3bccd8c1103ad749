"""Command-line pipeline: ingest -> split -> build-index -> retrieve -> export
-> evaluate / analyze-overlap.

Errors print one machine-readable JSON object to stderr
(``{"error": kind, "detail": message}``) and exit nonzero; a missing input
file exits 2. Commands never mutate their inputs, stage every artifact
through temp-file renames, and remove everything they wrote if they fail
midway. Data artifacts are byte-reproducible for identical configs; the
run-metadata sidecars additionally record wall-clock timings.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import corpus as corpus_mod
from .config import RunConfig, make_backend
from .corpus import (
    PreprocessLimits,
    SplitSpec,
    atomic_write_text,
    dump_jsonl_line,
    load_corpus,
    save_corpus,
)
from .errors import (
    AlignmentError,
    ConfigError,
    DialogevError,
    IngestError,
    RetrievalError,
    TransportError,
)
from .metrics import OverlapMode, evaluate_corpus, overlap_report
from .report import (
    render_metric_figure,
    render_overlap_counts_figure,
    render_overlap_figure,
    write_metric_csv,
    write_overlap_csv,
)
from .retrieval import build_retrieval_set
from .scoring import tokenize
from .triples import build_triples, format_records, read_triples, write_formatted, write_triples

_ERROR_KINDS = [
    (FileNotFoundError, "input not found", 2),
    (OSError, "io error", 1),
    (ConfigError, "config error", 1),
    (IngestError, "ingest error", 1),
    (TransportError, "transport error", 1),
    (RetrievalError, "retrieval error", 1),
    (AlignmentError, "alignment error", 1),
    (DialogevError, "error", 1),
    (ValueError, "invalid value", 1),
]


class _Outputs:
    """Tracks files a command intends to write so failures can clean up."""

    def __init__(self):
        self.paths: list[Path] = []

    def register(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.paths.append(path)
        return path

    def write_text(self, path, text: str) -> Path:
        path = self.register(path)
        atomic_write_text(path, text)
        return path

    def write_json(self, path, obj) -> Path:
        return self.write_text(path, json.dumps(obj, indent=2, ensure_ascii=False) + "\n")

    def discard(self) -> None:
        for path in self.paths:
            Path(path).unlink(missing_ok=True)


def _run_with_cleanup(func, args) -> int:
    outputs = _Outputs()
    try:
        return func(args, outputs)
    except BaseException:
        outputs.discard()
        raise


def _hyp_tokens(path) -> list[tuple[str, list[str]]]:
    """Load a hypotheses JSONL file ({"id", "hyp"}) as (id, tokens) pairs."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pairs.append((str(obj["id"]), tokenize(str(obj["hyp"]))))
            except (ValueError, KeyError, TypeError) as exc:
                raise IngestError(f"{path}:{lineno}: invalid hypothesis record: {exc}") from exc
    return pairs


def _align_hyps(records, hyp_pairs) -> list[tuple[str, list[str]]]:
    """Reorder hypotheses to triple order; every id must match exactly once."""
    by_id: dict[str, list[str]] = {}
    for hyp_id, tokens in hyp_pairs:
        if hyp_id in by_id:
            raise AlignmentError(f"duplicate hypothesis id {hyp_id!r}")
        by_id[hyp_id] = tokens
    aligned = []
    for rec in records:
        if rec.instance.id not in by_id:
            raise AlignmentError(f"no hypothesis for id {rec.instance.id!r}")
        aligned.append((rec.instance.id, by_id.pop(rec.instance.id)))
    if by_id:
        raise AlignmentError(f"hypothesis id {next(iter(by_id))!r} matches no triple")
    return aligned


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_ingest(args, outputs: _Outputs) -> int:
    limits = PreprocessLimits(
        max_turns=args.max_turns,
        max_tokens_per_utterance=args.max_utterance_tokens,
    )

    def records():
        with open(args.input, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    yield json.loads(line)
                except ValueError as exc:
                    raise IngestError(f"{args.input}:{lineno}: not valid JSON: {exc}") from exc

    built, ingest_report = corpus_mod.ingest_reddit_chains(
        records(), limits, source_tag=args.source
    )
    if ingest_report.read == 0:
        print(f"warning: {args.input} contained no records", file=sys.stderr)

    outputs.register(args.output)
    save_corpus(built, args.output)
    report_path = args.report or str(args.output) + ".report.json"
    outputs.write_json(report_path, ingest_report.to_dict())
    print(
        f"ingest: read={ingest_report.read} emitted={ingest_report.emitted} "
        f"skipped_malformed={ingest_report.skipped_malformed} "
        f"discarded_by_limits={ingest_report.discarded_by_limits} -> {args.output}"
    )
    return 0


def cmd_split(args, outputs: _Outputs) -> int:
    source = load_corpus(args.corpus)
    extra_sizes = tuple(int(s) for s in args.extra_pool_sizes.split(",") if s) \
        if args.extra_pool_sizes else ()
    spec = SplitSpec(
        seed=args.seed,
        train_size=args.train_size,
        dev_size=args.dev_size,
        test_size=args.test_size,
        extra_pool_sizes=extra_sizes,
    )
    result = corpus_mod.split(source, spec)
    out_dir = Path(args.out_dir)
    parts = [
        ("train", result.train),
        ("dev", result.dev),
        ("test", result.test),
        *((f"extra{i}", pool) for i, pool in enumerate(result.extra_pools)),
    ]
    counts = {}
    for name, part in parts:
        path = outputs.register(out_dir / f"{name}.jsonl")
        save_corpus(part, path)
        counts[name] = len(part)
    outputs.write_json(
        out_dir / "split_meta.json",
        {
            "seed": spec.seed,
            "sizes": {
                "train": spec.train_size,
                "dev": spec.dev_size,
                "test": spec.test_size,
                "extra_pools": list(spec.extra_pool_sizes),
            },
            "source": str(args.corpus),
            "source_instances": len(source),
            "counts": counts,
        },
    )
    print(f"split: {counts} -> {out_dir}")
    return 0


def _load_config(args) -> RunConfig:
    raw_text = Path(args.config).read_text(encoding="utf-8")
    try:
        raw = json.loads(raw_text)
    except ValueError as exc:
        raise ConfigError(f"{args.config}: not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{args.config}: config must be a JSON object")

    retrieval = dict(raw.get("retrieval", {}))
    if getattr(args, "strategy", None):
        retrieval["strategy"] = args.strategy
    if getattr(args, "k", None) is not None:
        retrieval["k"] = args.k
    if getattr(args, "tau", None) is not None:
        retrieval["filter_threshold"] = None if args.tau == "off" else args.tau
    if getattr(args, "scorer", None):
        retrieval["scorer"] = args.scorer
    if getattr(args, "prefetch_m", None) is not None:
        retrieval["prefetch_m"] = args.prefetch_m
    if getattr(args, "exact", False):
        retrieval["exact_mode"] = True
    raw["retrieval"] = retrieval
    if getattr(args, "workers", None) is not None:
        raw["workers"] = args.workers
    return RunConfig.from_dict(raw)


def _build_set_from_config(cfg: RunConfig, progress=True):
    cfg.validate_input_paths()
    backend = make_backend(cfg.backend)
    corpora = [load_corpus(path) for path in cfg.retrieval_corpora]
    return build_retrieval_set(
        corpora[0],
        corpora[1:],
        backend=backend,
        context_side=cfg.context_side,
        cache_dir=cfg.cache_dir,
        progress=(lambda msg: print(msg, flush=True)) if progress else None,
    )


def cmd_build_index(args, outputs: _Outputs) -> int:
    cfg = _load_config(args)
    if cfg.cache_dir is None:
        raise ConfigError("build-index requires cache_dir in the config")
    started = time.perf_counter()
    rset = _build_set_from_config(cfg)
    elapsed = time.perf_counter() - started
    out_dir = Path(cfg.out_dir)
    manifest = json.loads((Path(cfg.cache_dir) / "manifest.json").read_text(encoding="utf-8"))
    outputs.write_json(
        out_dir / "index_meta.json",
        {
            "command": "build-index",
            "config_digest": cfg.digest(),
            "members": len(rset),
            "cache_dir": cfg.cache_dir,
            "cache_digest": manifest["digest"],
            "timing_s": round(elapsed, 3),
        },
    )
    print(f"build-index: {len(rset)} members cached under {cfg.cache_dir}")
    return 0


def cmd_retrieve(args, outputs: _Outputs) -> int:
    cfg = _load_config(args)
    if not cfg.queries:
        raise ConfigError("config has no 'queries' to retrieve for")
    wanted = args.splits.split(",") if args.splits else list(cfg.queries)
    missing = [name for name in wanted if name not in cfg.queries]
    if missing:
        raise ConfigError(f"splits not present in config queries: {missing}")

    build_started = time.perf_counter()
    rset = _build_set_from_config(cfg)
    build_elapsed = time.perf_counter() - build_started

    out_dir = Path(cfg.out_dir)
    retrieve_started = time.perf_counter()
    split_meta = {}
    for name in wanted:
        queries = load_corpus(cfg.queries[name], name=name)
        dump_lines: list[str] = []

        def collect(instance, evidences):
            dump_lines.append(
                dump_jsonl_line(
                    {
                        "query_id": instance.id,
                        "strategy": cfg.retrieval.strategy.value,
                        "evidences": [
                            {
                                "source_id": ev.source_id,
                                "text": ev.text,
                                "p": ev.score.precision,
                                "r": ev.score.recall,
                                "f": ev.score.f,
                                "rank": ev.rank,
                            }
                            for ev in evidences
                        ],
                    }
                )
            )

        records = build_triples(
            queries,
            rset,
            cfg.retrieval,
            seed=cfg.seed,
            split_tag=name,
            workers=cfg.workers,
            raw_sink=collect,
        )
        triples_path = outputs.register(out_dir / f"triples.{name}.jsonl")
        write_triples(records, triples_path)
        evidence_path = outputs.write_text(out_dir / f"evidence.{name}.jsonl", "".join(dump_lines))
        split_meta[name] = {
            "queries": len(queries),
            "triples": str(triples_path),
            "evidence": str(evidence_path),
        }
        print(f"retrieve[{name}]: {len(queries)} queries -> {triples_path}")
    retrieve_elapsed = time.perf_counter() - retrieve_started

    outputs.write_json(
        out_dir / "run_meta.json",
        {
            "command": "retrieve",
            "config_digest": cfg.digest(),
            "seed": cfg.seed,
            "strategy": cfg.retrieval.strategy.value,
            "scorer": cfg.retrieval.scorer.value,
            "k": cfg.retrieval.k,
            "tau": cfg.retrieval.filter_threshold,
            "prefetch_m": cfg.retrieval.prefetch_m,
            "exact_mode": cfg.retrieval.exact_mode,
            "use_idf": cfg.retrieval.use_idf,
            "context_side": cfg.context_side,
            "workers": cfg.workers,
            "members": len(rset),
            "splits": split_meta,
            "timing_s": {
                "build": round(build_elapsed, 3),
                "retrieve": round(retrieve_elapsed, 3),
            },
        },
    )
    return 0


def cmd_export(args, outputs: _Outputs) -> int:
    records = read_triples(args.triples)
    examples = format_records(records, args.mode)
    outputs.register(args.output)
    write_formatted(examples, args.output)
    print(f"export: {len(examples)} {args.mode} examples -> {args.output}")
    return 0


def _write_overlap_outputs(records, aligned, mode, multiset, out_dir, outputs) -> None:
    oreport = overlap_report(records, aligned, mode, multiset=multiset)
    stem = f"overlap.{oreport.mode.value}"
    outputs.write_json(out_dir / f"{stem}.json", oreport.to_json_obj())
    write_overlap_csv(oreport, outputs.register(out_dir / f"{stem}.csv"))
    render_overlap_figure(oreport, outputs.register(out_dir / f"{stem}.png"))
    render_overlap_counts_figure(oreport, outputs.register(out_dir / f"{stem}.counts.png"))
    populated = sum(1 for b in oreport.bins if b.n_examples)
    print(f"overlap[{oreport.mode.value}]: {len(oreport.bins)} bins ({populated} populated)")


def cmd_evaluate(args, outputs: _Outputs) -> int:
    records = read_triples(args.triples)
    aligned = _align_hyps(records, _hyp_tokens(args.hyps))
    refs = [rec.instance.response.tokens for rec in records]
    hyp_tokens = [tokens for _, tokens in aligned]

    report = evaluate_corpus(hyp_tokens, refs)
    out_dir = Path(args.out_dir)
    outputs.write_json(out_dir / "report.json", report.to_dict())
    write_metric_csv(report, outputs.register(out_dir / "report.csv"))
    render_metric_figure(report, outputs.register(out_dir / "report.png"))
    print(
        f"evaluate: n={report.n_examples} f1={report.f1:.4f} bleu={report.bleu:.4f} "
        f"dist1={report.dist1:.4f} dist2={report.dist2:.4f}"
    )
    if args.overlap_mode:
        _write_overlap_outputs(
            records, aligned, args.overlap_mode, args.multiset, out_dir, outputs
        )
    return 0


def cmd_analyze_overlap(args, outputs: _Outputs) -> int:
    records = read_triples(args.triples)
    aligned = _align_hyps(records, _hyp_tokens(args.hyps))
    _write_overlap_outputs(
        records, aligned, args.mode, args.multiset, Path(args.out_dir), outputs
    )
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _tau_arg(text: str):
    if text.lower() in ("off", "none", "disabled"):
        return "off"
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"--tau expects a number or 'off', got {text!r}"
        ) from None


def _add_config_options(sub, with_retrieval_overrides=True):
    sub.add_argument("--config", required=True, help="run config JSON path")
    if with_retrieval_overrides:
        sub.add_argument("--strategy", choices=["c2c", "c2r", "mix", "random"])
        sub.add_argument("--k", type=int)
        sub.add_argument("--tau", type=_tau_arg, help="filter threshold, or 'off'")
        sub.add_argument("--scorer", choices=["bm25", "bertscore"])
        sub.add_argument("--prefetch-m", type=int, dest="prefetch_m")
        sub.add_argument("--exact", action="store_true", help="score every member (no pre-fetch)")
        sub.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dialogev",
        description="Self-retrieval evidence augmentation for dialogue corpora.",
    )
    subparsers = parser.add_subparsers(dest="command")

    sub = subparsers.add_parser("ingest", help="flatten raw reply-tree JSONL into a corpus")
    sub.add_argument("--input", required=True)
    sub.add_argument("--output", required=True)
    sub.add_argument("--report", help="ingest report path (default <output>.report.json)")
    sub.add_argument("--source", default="reddit", help="source tag stored per instance")
    sub.add_argument("--max-turns", type=int, default=corpus_mod.DEFAULT_MAX_TURNS)
    sub.add_argument(
        "--max-utterance-tokens",
        type=int,
        default=corpus_mod.DEFAULT_MAX_TOKENS_PER_UTTERANCE,
    )
    sub.set_defaults(func=cmd_ingest)

    sub = subparsers.add_parser("split", help="seeded train/dev/test/extra splits")
    sub.add_argument("--corpus", required=True)
    sub.add_argument("--out-dir", required=True)
    sub.add_argument("--seed", type=int, required=True)
    sub.add_argument("--train-size", type=int, required=True)
    sub.add_argument("--dev-size", type=int, required=True)
    sub.add_argument("--test-size", type=int, required=True)
    sub.add_argument("--extra-pool-sizes", help="comma-separated extra pool sizes")
    sub.set_defaults(func=cmd_split)

    sub = subparsers.add_parser("build-index", help="build retrieval set and embedding cache")
    _add_config_options(sub)
    sub.set_defaults(func=cmd_build_index)

    sub = subparsers.add_parser("retrieve", help="retrieve evidences and write triples")
    _add_config_options(sub)
    sub.add_argument("--splits", help="comma-separated subset of config queries")
    sub.set_defaults(func=cmd_retrieve)

    sub = subparsers.add_parser("export", help="format triples for a generator")
    sub.add_argument("--triples", required=True)
    sub.add_argument("--mode", required=True, choices=["gpt_concat", "fid"])
    sub.add_argument("--output", required=True)
    sub.set_defaults(func=cmd_export)

    sub = subparsers.add_parser("evaluate", help="score hypotheses against triple references")
    sub.add_argument("--hyps", required=True, help="JSONL with {'id', 'hyp'} records")
    sub.add_argument("--triples", required=True)
    sub.add_argument("--out-dir", required=True)
    sub.add_argument("--overlap-mode", choices=["max", "sum"])
    sub.add_argument("--multiset", action="store_true", help="multiset overlap counting")
    sub.set_defaults(func=cmd_evaluate)

    sub = subparsers.add_parser("analyze-overlap", help="evidence-overlap binned metrics")
    sub.add_argument("--hyps", required=True)
    sub.add_argument("--triples", required=True)
    sub.add_argument("--mode", required=True, choices=["max", "sum"])
    sub.add_argument("--multiset", action="store_true")
    sub.add_argument("--out-dir", required=True)
    sub.set_defaults(func=cmd_analyze_overlap)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return 1
    try:
        return _run_with_cleanup(args.func, args)
    except tuple(kind for kind, _, _ in _ERROR_KINDS) as exc:
        for kind, label, code in _ERROR_KINDS:
            if isinstance(exc, kind):
                print(json.dumps({"error": label, "detail": str(exc)}), file=sys.stderr)
                return code
        raise  # unreachable


if __name__ == "__main__":
    sys.exit(main())
