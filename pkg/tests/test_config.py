import json

import numpy as np
import pytest

from dialogev.config import (
    BackendConfig,
    DEFAULT_FILTER_THRESHOLD,
    RunConfig,
    canonical_json,
    make_backend,
)
from dialogev.embedding import StaticTableBackend, write_embedding_table
from dialogev.errors import ConfigError


def minimal(**extra):
    obj = {"seed": 3, "out_dir": "out", "retrieval_corpora": ["train.jsonl"]}
    obj.update(extra)
    return obj


def test_canonical_json_is_order_insensitive():
    assert canonical_json({"b": 1, "a": 2}) == canonical_json({"a": 2, "b": 1})
    assert canonical_json({"a": 2, "b": 1}) == '{"a":2,"b":1}'


def test_from_dict_requires_core_keys():
    for key in ("seed", "out_dir", "retrieval_corpora"):
        broken = minimal()
        del broken[key]
        with pytest.raises(ConfigError, match=key):
            RunConfig.from_dict(broken)


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="mystery"):
        RunConfig.from_dict(minimal(mystery=1))
    with pytest.raises(ConfigError, match="speed"):
        RunConfig.from_dict(minimal(backend={"speed": 11}))
    with pytest.raises(ConfigError, match="depth"):
        RunConfig.from_dict(minimal(retrieval={"depth": 2}))


def test_defaults():
    cfg = RunConfig.from_dict(minimal())
    assert cfg.backend.type == "hashed"
    assert cfg.retrieval.k == 8
    assert cfg.context_side == "latest"
    assert cfg.format_mode == "gpt_concat"
    assert cfg.workers == 1
    assert cfg.cache_dir is None


def test_filter_threshold_auto_resolution():
    # default scorer bertscore + non-random strategy -> pinned default
    cfg = RunConfig.from_dict(minimal(retrieval={"strategy": "mix"}))
    assert cfg.retrieval.filter_threshold == DEFAULT_FILTER_THRESHOLD
    # random strategy -> no filter
    cfg = RunConfig.from_dict(minimal(retrieval={"strategy": "random"}))
    assert cfg.retrieval.filter_threshold is None
    # bm25 -> no filter
    cfg = RunConfig.from_dict(minimal(retrieval={"scorer": "bm25"}))
    assert cfg.retrieval.filter_threshold is None
    # explicit values survive
    cfg = RunConfig.from_dict(minimal(retrieval={"filter_threshold": 0.25}))
    assert cfg.retrieval.filter_threshold == 0.25
    cfg = RunConfig.from_dict(minimal(retrieval={"filter_threshold": None}))
    assert cfg.retrieval.filter_threshold is None


def test_filter_threshold_rejects_non_numbers():
    with pytest.raises(ConfigError, match="filter_threshold"):
        RunConfig.from_dict(minimal(retrieval={"filter_threshold": True}))
    with pytest.raises(ConfigError, match="filter_threshold"):
        RunConfig.from_dict(minimal(retrieval={"filter_threshold": "0.4"}))


def test_retrieval_enum_errors():
    with pytest.raises(ConfigError, match="strategy"):
        RunConfig.from_dict(minimal(retrieval={"strategy": "mixed-up"}))
    with pytest.raises(ConfigError, match="scorer"):
        RunConfig.from_dict(minimal(retrieval={"scorer": "tfidf"}))


def test_run_config_validation():
    with pytest.raises(ConfigError, match="seed"):
        RunConfig.from_dict(minimal(seed=True))
    with pytest.raises(ConfigError, match="retrieval_corpora"):
        RunConfig.from_dict(minimal(retrieval_corpora=[]))
    with pytest.raises(ConfigError, match="context_side"):
        RunConfig.from_dict(minimal(context_side="everything"))
    with pytest.raises(ConfigError, match="format_mode"):
        RunConfig.from_dict(minimal(format_mode="xml"))
    with pytest.raises(ConfigError, match="workers"):
        RunConfig.from_dict(minimal(workers=0))


def test_digest_is_stable_and_value_sensitive():
    a = RunConfig.from_dict(minimal(retrieval={"k": 4}))
    b = RunConfig.from_dict({**minimal(retrieval={"k": 4})})
    assert a.digest() == b.digest()
    c = RunConfig.from_dict(minimal(retrieval={"k": 5}))
    assert a.digest() != c.digest()
    assert len(a.digest()) == 64


def test_to_dict_roundtrip():
    cfg = RunConfig.from_dict(minimal(
        queries={"dev": "dev.jsonl"},
        retrieval={"k": 2, "strategy": "c2r", "exact_mode": True},
        backend={"dim": 8},
        workers=3,
    ))
    again = RunConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert again.digest() == cfg.digest()


def test_from_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(minimal()), encoding="utf-8")
    assert RunConfig.from_file(path).seed == 3
    path.write_text("{broken", encoding="utf-8")
    with pytest.raises(ConfigError, match="not valid JSON"):
        RunConfig.from_file(path)
    path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError, match="JSON object"):
        RunConfig.from_file(path)


def test_validate_input_paths(tmp_path):
    train = tmp_path / "train.jsonl"
    train.write_text("", encoding="utf-8")
    cfg = RunConfig.from_dict(minimal(
        retrieval_corpora=[str(train)], queries={"dev": str(tmp_path / "dev.jsonl")}
    ))
    with pytest.raises(FileNotFoundError):
        cfg.validate_input_paths()
    (tmp_path / "dev.jsonl").write_text("", encoding="utf-8")
    cfg.validate_input_paths()


def test_backend_config_validation():
    with pytest.raises(ConfigError, match="type"):
        BackendConfig(type="quantum")
    with pytest.raises(ConfigError, match="dim"):
        BackendConfig(dim=0)
    with pytest.raises(ConfigError, match="path"):
        BackendConfig(type="static")
    with pytest.raises(ConfigError, match="url"):
        BackendConfig(type="http")
    with pytest.raises(ConfigError, match="parallelism"):
        BackendConfig(parallelism=0)


def test_make_backend_hashed():
    backend = make_backend(BackendConfig(type="hashed", dim=12))
    assert isinstance(backend, StaticTableBackend)
    assert backend.dim == 12


def test_make_backend_static_checks_dim(tmp_path):
    path = tmp_path / "table.evt"
    write_embedding_table(path, 4, [("t", np.ones(4, dtype=np.float32))])
    backend = make_backend(BackendConfig(type="static", dim=4, path=str(path)))
    assert backend.dim == 4
    with pytest.raises(ConfigError, match="dim"):
        make_backend(BackendConfig(type="static", dim=8, path=str(path)))


def test_make_backend_http():
    backend = make_backend(BackendConfig(type="http", dim=6, url="http://h:1/"))
    assert backend.backend_id == "http:http://h:1:6"
