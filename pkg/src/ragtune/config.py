"""Run configuration: a versioned YAML document validated with line context.

Schema (version 1)::

    version: 1
    dataset: synth            # label carried into reports
    paths:                    # relative paths resolve against the config file
      corpus: data/corpus.jsonl
      queries: data/queries.jsonl
      index: work/index.json
      cache: work/cache.jsonl
      offline: work/offline.json
      checkpoints: work/checkpoints
      reports: work/reports
    backend:
      kind: mock              # or http
      endpoint: http://localhost:8000/v1
      model: ""
      max_in_flight: 4
      timeout: 60
      max_retries: 3
    train: {...}              # any TrainConfig field
    eval:
      ndocs: [1, 10]
      metrics: [rag_accuracy, ir_accuracy]
      search: full            # full | late | beta
    synth: {seed: 0, n_docs: 500, n_queries: 100, task: freeform}

Only the API key comes from the environment (``RAGTUNE_API_KEY``).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .learn.train import TrainConfig

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "stable_hash", "CONFIG_VERSION"]

CONFIG_VERSION = 1
PATH_KEYS = ("corpus", "queries", "index", "cache", "offline", "checkpoints", "reports")
METRICS = ("rag_accuracy", "ir_accuracy", "best_of_n")
EVAL_SEARCH = ("full", "late", "beta")
SYNTH_KEYS = {"seed", "n_docs", "n_queries", "task", "unreachable_fraction"}


class ConfigError(ValueError):
    pass


def stable_hash(obj: Any) -> str:
    """Hash of the sorted-key JSON form, so key order never matters."""
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


@dataclass
class RunConfig:
    source: Path
    dataset: str
    paths: dict[str, Path]
    backend: dict
    train: TrainConfig
    eval: dict
    synth: dict
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def config_hash(self) -> str:
        return stable_hash(self.raw)

    def with_seed(self, seed: int) -> "RunConfig":
        d = self.train.to_dict()
        d["seed"] = seed
        raw = json.loads(json.dumps(self.raw))
        raw.setdefault("train", {})["seed"] = seed
        return RunConfig(self.source, self.dataset, self.paths, self.backend, TrainConfig(**d), self.eval,
                         self.synth, raw)

    def with_backend(self, kind: str) -> "RunConfig":
        raw = json.loads(json.dumps(self.raw))
        raw.setdefault("backend", {})["kind"] = kind
        return RunConfig(self.source, self.dataset, self.paths, {**self.backend, "kind": kind}, self.train,
                         self.eval, self.synth, raw)


class _Lines:
    """Maps key paths to their line in the source document."""

    def __init__(self, name: str, text: str):
        self.name = name
        self.lines: dict[tuple, int] = {}
        try:
            node = yaml.compose(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f"{name}:{mark.line + 1}" if mark is not None else name
            raise ConfigError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from exc
        if node is not None:
            self._walk(node, ())

    def _walk(self, node, prefix):
        self.lines[prefix] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = prefix + (k.value,)
                self._walk(v, key)
                self.lines[key] = k.start_mark.line + 1

    def at(self, *key) -> str:
        while key and key not in self.lines:
            key = key[:-1]
        return f"{self.name}:{self.lines.get(key, 1)}"

    def fail(self, msg: str, *key):
        raise ConfigError(f"{self.at(*key)}: {msg}")


def _mapping(lines: _Lines, data: dict, key: str) -> dict:
    val = data.get(key, {})
    if val is None:
        return {}
    if not isinstance(val, dict):
        lines.fail(f"'{key}' must be a mapping", key)
    return val


def parse_config(text: str, source: str | Path = "<config>", check_inputs: bool = True) -> RunConfig:
    source = Path(source)
    lines = _Lines(str(source), text)
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        lines.fail("top level must be a mapping")
    unknown = set(data) - {"version", "dataset", "paths", "backend", "train", "eval", "synth"}
    if unknown:
        k = sorted(unknown)[0]
        lines.fail(f"unknown section '{k}'", k)
    if data.get("version") != CONFIG_VERSION:
        lines.fail(f"'version' must be {CONFIG_VERSION}", "version")

    base = source.parent if source.name != "<config>" else Path.cwd()
    raw_paths = _mapping(lines, data, "paths")
    paths = {}
    for key in PATH_KEYS:
        val = raw_paths.get(key)
        if not isinstance(val, str) or not val:
            lines.fail(f"paths.{key} must be a non-empty string", "paths", key)
        p = Path(val)
        paths[key] = p if p.is_absolute() else (base / p)
    for key in set(raw_paths) - set(PATH_KEYS):
        lines.fail(f"unknown path key '{key}'", "paths", key)
    if check_inputs:
        for key in ("corpus", "queries"):
            if not paths[key].exists():
                lines.fail(f"paths.{key} does not exist: {paths[key]}", "paths", key)

    backend = {"kind": "mock", "endpoint": "http://localhost:8000/v1", "model": "", "max_in_flight": 4,
               "timeout": 60.0, "max_retries": 3}
    raw_backend = _mapping(lines, data, "backend")
    for key, val in raw_backend.items():
        if key not in backend:
            lines.fail(f"unknown backend key '{key}'", "backend", key)
        backend[key] = val
    if backend["kind"] not in ("mock", "http"):
        lines.fail("backend.kind must be 'mock' or 'http'", "backend", "kind")
    for key in ("max_in_flight", "max_retries"):
        if not isinstance(backend[key], int) or backend[key] < (1 if key == "max_in_flight" else 0):
            lines.fail(f"backend.{key} must be a non-negative integer", "backend", key)
    if not isinstance(backend["timeout"], (int, float)) or backend["timeout"] <= 0:
        lines.fail("backend.timeout must be positive", "backend", "timeout")

    raw_train = _mapping(lines, data, "train")
    try:
        train = TrainConfig.from_dict(dict(raw_train))
    except (TypeError, ValueError) as exc:
        named = [k for k in raw_train if str(k) in str(exc)]
        raise ConfigError(f"{lines.at('train', *named[:1])}: {exc}") from exc

    ev = {"ndocs": [1, 10], "metrics": ["rag_accuracy", "ir_accuracy"], "search": "full"}
    raw_eval = _mapping(lines, data, "eval")
    for key, val in raw_eval.items():
        if key not in ev:
            lines.fail(f"unknown eval key '{key}'", "eval", key)
        ev[key] = val
    if not isinstance(ev["ndocs"], list) or not ev["ndocs"] or not all(isinstance(n, int) and n >= 1 for n in ev["ndocs"]):
        lines.fail("eval.ndocs must be a list of positive integers", "eval", "ndocs")
    if not isinstance(ev["metrics"], list) or not set(ev["metrics"]) <= set(METRICS):
        lines.fail(f"eval.metrics must be drawn from {list(METRICS)}", "eval", "metrics")
    if ev["search"] not in EVAL_SEARCH:
        lines.fail(f"eval.search must be one of {list(EVAL_SEARCH)}", "eval", "search")

    synth = {"seed": 0, "n_docs": 500, "n_queries": 100, "task": "freeform"}
    raw_synth = _mapping(lines, data, "synth")
    for key, val in raw_synth.items():
        if key not in SYNTH_KEYS:
            lines.fail(f"unknown synth key '{key}'", "synth", key)
        synth[key] = val

    dataset = data.get("dataset", "dataset")
    if not isinstance(dataset, str):
        lines.fail("dataset must be a string", "dataset")
    return RunConfig(source, dataset, paths, backend, train, ev, synth, data)


def load_config(path: str | Path, check_inputs: bool = True) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    return parse_config(text, path, check_inputs)
