"""Run configuration: one JSON file drives the pipeline commands.

Schema (all keys shown; * marks required):

    {
      "seed": 13,                       * master seed, never defaulted
      "out_dir": "runs/demo",           * where artifacts land
      "cache_dir": "runs/demo/cache",     embedding cache (null disables)
      "retrieval_corpora": ["train.jsonl", "extra0.jsonl"],  * first entry is
                                          the training corpus, the rest are
                                          extra retrieval pools
      "queries": {"train": "train.jsonl", "dev": "dev.jsonl"},  split -> path
      "backend": {"type": "hashed|static|http", "dim": 64,
                  "path": null, "url": null, "parallelism": 4},
      "retrieval": {"k": 8, "strategy": "c2c|c2r|mix|random",
                    "scorer": "bertscore|bm25",
                    "filter_threshold": "auto" | float | null,
                    "prefetch_m": 100, "exact_mode": false, "use_idf": false},
      "context_side": "latest" | "full",
      "format_mode": "gpt_concat" | "fid",
      "workers": 1
    }

``filter_threshold: "auto"`` resolves to 0.4 for the bertscore scorer on the
non-random strategies and to disabled otherwise (random evidence is a
baseline and BM25 scores have no natural fixed cutoff). The sha256 digest of
the resolved, canonically serialized config identifies a run in every
run-metadata sidecar.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .embedding import HttpEmbeddingBackend, StaticTableBackend
from .errors import ConfigError
from .retrieval import RetrievalConfig, ScorerKind, Strategy
from .triples import FID, GPT_CONCAT

DEFAULT_FILTER_THRESHOLD = 0.4
DEFAULT_BACKEND_DIM = 64


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class BackendConfig:
    type: str = "hashed"
    dim: int = DEFAULT_BACKEND_DIM
    path: str | None = None
    url: str | None = None
    parallelism: int = 4

    def __post_init__(self):
        if self.type not in ("hashed", "static", "http"):
            raise ConfigError(f"unknown backend type {self.type!r}")
        if self.dim < 1:
            raise ConfigError(f"backend dim must be >= 1, got {self.dim}")
        if self.type == "static" and not self.path:
            raise ConfigError("static backend requires 'path'")
        if self.type == "http" and not self.url:
            raise ConfigError("http backend requires 'url'")
        if self.parallelism < 1:
            raise ConfigError(f"backend parallelism must be >= 1, got {self.parallelism}")

    def to_dict(self) -> dict:
        return {
            "type": self.type,
            "dim": self.dim,
            "path": self.path,
            "url": self.url,
            "parallelism": self.parallelism,
        }


def make_backend(cfg: BackendConfig):
    if cfg.type == "hashed":
        return StaticTableBackend.hashed(cfg.dim)
    if cfg.type == "static":
        backend = StaticTableBackend.from_file(cfg.path)
        if backend.dim != cfg.dim:
            raise ConfigError(
                f"table {cfg.path} has dim {backend.dim}, config says {cfg.dim}"
            )
        return backend
    return HttpEmbeddingBackend(cfg.url, cfg.dim, parallelism=cfg.parallelism)


def _retrieval_from_dict(obj: dict) -> RetrievalConfig:
    allowed = {
        "k", "strategy", "scorer", "filter_threshold", "prefetch_m", "exact_mode", "use_idf",
    }
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown retrieval config keys: {sorted(unknown)}")
    try:
        strategy = Strategy(obj.get("strategy", "mix"))
    except ValueError:
        raise ConfigError(f"unknown strategy {obj.get('strategy')!r}") from None
    try:
        scorer = ScorerKind(obj.get("scorer", "bertscore"))
    except ValueError:
        raise ConfigError(f"unknown scorer {obj.get('scorer')!r}") from None

    tau = obj.get("filter_threshold", "auto")
    if tau == "auto":
        if scorer == ScorerKind.BERTSCORE and strategy != Strategy.RANDOM:
            tau = DEFAULT_FILTER_THRESHOLD
        else:
            tau = None
    elif tau is not None:
        if not isinstance(tau, (int, float)) or isinstance(tau, bool):
            raise ConfigError(f"filter_threshold must be 'auto', null or a number, got {tau!r}")
        tau = float(tau)

    return RetrievalConfig(
        k=int(obj.get("k", 8)),
        strategy=strategy,
        filter_threshold=tau,
        prefetch_m=int(obj.get("prefetch_m", 100)),
        exact_mode=bool(obj.get("exact_mode", False)),
        scorer=scorer,
        use_idf=bool(obj.get("use_idf", False)),
    )


def _retrieval_to_dict(cfg: RetrievalConfig) -> dict:
    return {
        "k": cfg.k,
        "strategy": cfg.strategy.value,
        "scorer": cfg.scorer.value,
        "filter_threshold": cfg.filter_threshold,
        "prefetch_m": cfg.prefetch_m,
        "exact_mode": cfg.exact_mode,
        "use_idf": cfg.use_idf,
    }


@dataclass(frozen=True)
class RunConfig:
    seed: int
    out_dir: str
    retrieval_corpora: tuple[str, ...]
    queries: dict[str, str] = field(default_factory=dict)
    cache_dir: str | None = None
    backend: BackendConfig = field(default_factory=BackendConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    context_side: str = "latest"
    format_mode: str = GPT_CONCAT
    workers: int = 1

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if not self.retrieval_corpora:
            raise ConfigError("retrieval_corpora must list at least the training corpus")
        if self.context_side not in ("latest", "full"):
            raise ConfigError(f"context_side must be 'latest' or 'full', got {self.context_side!r}")
        if self.format_mode not in (GPT_CONCAT, FID):
            raise ConfigError(f"format_mode must be '{GPT_CONCAT}' or '{FID}'")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        allowed = {
            "seed", "out_dir", "cache_dir", "retrieval_corpora", "queries",
            "backend", "retrieval", "context_side", "format_mode", "workers",
        }
        unknown = set(obj) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("seed", "out_dir", "retrieval_corpora"):
            if key not in obj:
                raise ConfigError(f"config missing required key: {key}")
        backend_obj = obj.get("backend", {})
        allowed_backend = {"type", "dim", "path", "url", "parallelism"}
        unknown = set(backend_obj) - allowed_backend
        if unknown:
            raise ConfigError(f"unknown backend config keys: {sorted(unknown)}")
        return cls(
            seed=obj["seed"],
            out_dir=str(obj["out_dir"]),
            retrieval_corpora=tuple(str(p) for p in obj["retrieval_corpora"]),
            queries={str(k): str(v) for k, v in obj.get("queries", {}).items()},
            cache_dir=None if obj.get("cache_dir") is None else str(obj["cache_dir"]),
            backend=BackendConfig(**backend_obj),
            retrieval=_retrieval_from_dict(obj.get("retrieval", {})),
            context_side=obj.get("context_side", "latest"),
            format_mode=obj.get("format_mode", GPT_CONCAT),
            workers=int(obj.get("workers", 1)),
        )

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        raw = Path(path).read_text(encoding="utf-8")
        try:
            obj = json.loads(raw)
        except ValueError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "cache_dir": self.cache_dir,
            "retrieval_corpora": list(self.retrieval_corpora),
            "queries": dict(self.queries),
            "backend": self.backend.to_dict(),
            "retrieval": _retrieval_to_dict(self.retrieval),
            "context_side": self.context_side,
            "format_mode": self.format_mode,
            "workers": self.workers,
        }

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode("utf-8")).hexdigest()

    def validate_input_paths(self) -> None:
        for path in [*self.retrieval_corpora, *self.queries.values()]:
            if not Path(path).exists():
                raise FileNotFoundError(path)
