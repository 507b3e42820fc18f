"""Run configuration: a single YAML file, endpoint/secret overrides from the environment."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import httpx
import yaml

from ..core import ScoringPolicy
from ..decoding import MAX_NEW_TOKENS, REQUIREMENTS, STRATEGIES, DecodeConfig, default_grid
from ..errors import ConfigError, DecodeLabError
from ..model_api import LogitProvider, SyntheticLayeredLM, TableLM, WordTokenizer
from ..quality import NATIVE_METRICS, ExternalScorer
from ..remote import RemoteModel
from ..uncertainty import UE_METHODS
from .data import TASKS, DatasetItem, ingest

ENV_PREFIX = "DECODELAB_"

DEFAULT_METRICS = {
    "qa": ["rougeL"],
    "ts": ["rougeL", "alignscore"],
    "mt": ["bleu", "comet", "alignscore"],
    "cg": ["pass@1"],
}


@dataclass
class DatasetSpec:
    path: str
    task: str


@dataclass
class RunConfig:
    model: dict[str, Any]
    datasets: list[DatasetSpec]
    strategies: dict[str, list[dict[str, Any]]]
    amateur: Optional[dict[str, Any]] = None
    tokenizer: dict[str, Any] = field(default_factory=dict)
    ue_methods: list[str] = field(default_factory=lambda: list(UE_METHODS))
    metrics: dict[str, list[str]] = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_METRICS.items()})
    scorers: dict[str, dict[str, Any]] = field(default_factory=dict)
    n_boot: int = 1000
    boot_seed: Optional[int] = None
    out: str = "runs/default"
    seed: int = 0
    workers: int = 1
    quarantine_threshold: float = 0.1
    max_new_tokens: dict[str, int] = field(default_factory=lambda: dict(MAX_NEW_TOKENS))
    scoring_policy: ScoringPolicy = ScoringPolicy.STRATEGY
    templates: dict[str, str] = field(default_factory=dict)
    selection_split: Optional[str] = None
    max_malformed_frac: float = 0.1
    multi_reference: bool = False
    base_dir: Path = field(default_factory=Path.cwd)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def grid(self, strategy: str, layer_count: int = 32) -> list[dict[str, Any]]:
        return self.strategies[strategy] or default_grid(strategy, layer_count)

    def decode_config(self, strategy: str, params: Mapping[str, Any], task: str) -> DecodeConfig:
        params = dict(params)
        if strategy in ("temperature", "top_p"):
            params.setdefault("seed", self.seed)
        return DecodeConfig(strategy, params, self.max_new_tokens[task], self.scoring_policy)


def _env_overrides(raw: dict, env: Mapping[str, str]) -> dict:
    raw = dict(raw)
    for section in ("model", "amateur"):
        key = f"{ENV_PREFIX}{section.upper()}_URL"
        if key in env and raw.get(section) is not None:
            raw[section] = {**raw[section], "url": env[key]}
    scorers = {name: dict(spec or {}) for name, spec in (raw.get("scorers") or {}).items()}
    for name, spec in scorers.items():
        slug = "".join(c if c.isalnum() else "_" for c in name).upper()
        for field_name in ("url", "api_key"):
            key = f"{ENV_PREFIX}SCORER_{slug}_{field_name.upper()}"
            if key in env:
                spec[field_name] = env[key]
    raw["scorers"] = scorers
    return raw


def _parse_strategies(raw) -> dict[str, list[dict[str, Any]]]:
    """``{name: "default" | [params, ...]}`` or a list of names (default grids)."""
    if raw is None:
        raw = {name: "default" for name in STRATEGIES}
    if isinstance(raw, list):
        raw = {name: "default" for name in raw}
    out = {}
    for name, grid in raw.items():
        if name not in STRATEGIES:
            raise ConfigError(f"unknown strategy {name!r}")
        if grid in (None, "default"):
            out[name] = []
        elif isinstance(grid, list) and all(isinstance(g, dict) for g in grid):
            out[name] = [dict(g) for g in grid]
        else:
            raise ConfigError(f"grid for {name} must be 'default' or a list of parameter maps")
    return out


def load_config(path: Union[str, Path], env: Optional[Mapping[str, str]] = None) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(raw, base_dir=path.parent, env=env)


def config_from_dict(raw: Mapping[str, Any], base_dir: Union[str, Path] = ".", env: Optional[Mapping[str, str]] = None) -> RunConfig:
    raw = _env_overrides(dict(raw), os.environ if env is None else env)
    if "model" not in raw:
        raise ConfigError("config needs a 'model' section")
    datasets = [DatasetSpec(str(d["path"]), str(d["task"])) for d in raw.get("datasets", [])]
    metrics = {k: list(v) for k, v in DEFAULT_METRICS.items()}
    metrics.update({k: list(v) for k, v in (raw.get("metrics") or {}).items()})
    max_new = dict(MAX_NEW_TOKENS)
    max_new.update({k: int(v) for k, v in (raw.get("max_new_tokens") or {}).items()})
    boot = raw.get("bootstrap") or {}
    try:
        return RunConfig(
            model=dict(raw["model"]),
            amateur=dict(raw["amateur"]) if raw.get("amateur") else None,
            tokenizer=dict(raw.get("tokenizer") or {}),
            datasets=datasets,
            strategies=_parse_strategies(raw.get("strategies")),
            ue_methods=list(raw.get("ue_methods", UE_METHODS)),
            metrics=metrics,
            scorers=raw["scorers"],
            n_boot=int(boot.get("n_trials", 1000)),
            boot_seed=boot.get("seed"),
            out=str(raw.get("out", "runs/default")),
            seed=int(raw.get("seed", 0)),
            workers=int(raw.get("workers", 1)),
            quarantine_threshold=float(raw.get("quarantine_threshold", 0.1)),
            max_new_tokens=max_new,
            scoring_policy=ScoringPolicy(raw.get("scoring_policy", ScoringPolicy.STRATEGY.value)),
            templates=dict(raw.get("templates") or {}),
            selection_split=raw.get("selection_split"),
            max_malformed_frac=float(raw.get("max_malformed_frac", 0.1)),
            multi_reference=bool(raw.get("multi_reference", False)),
            base_dir=Path(base_dir),
        )
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


# --- construction -----------------------------------------------------------


def build_tokenizer(cfg: RunConfig, vocab_size: Optional[int] = None) -> WordTokenizer:
    spec = cfg.tokenizer
    if "words" in spec:
        words = list(spec["words"])
    elif "words_file" in spec:
        words = cfg.resolve(spec["words_file"]).read_text(encoding="utf-8").split()
    else:
        n = int(spec.get("vocab_size") or vocab_size or cfg.model.get("vocab_size", 32))
        words = [f"w{i}" for i in range(n - 1)]
    return WordTokenizer(words, eos=spec.get("eos", "</s>"))


def build_model(spec: Mapping[str, Any], vocab_size: int) -> LogitProvider:
    kind = spec.get("kind")
    if kind == "table":
        return TableLM.random(
            vocab_size,
            seed=int(spec.get("seed", 0)),
            order=int(spec.get("order", 1)),
            concentration=float(spec.get("concentration", 1.0)),
            eos_mass=spec.get("eos_mass"),
        )
    if kind == "synthetic":
        return SyntheticLayeredLM(
            vocab_size,
            layer_count=int(spec.get("layer_count", 4)),
            hidden_dim=int(spec.get("hidden_dim", 16)),
            seed=int(spec.get("seed", 0)),
            order=int(spec.get("order", 1)),
            scale=float(spec.get("scale", 3.0)),
            context_mix=float(spec.get("context_mix", 0.0)),
            eos_bias=float(spec.get("eos_bias", 0.0)),
        )
    if kind == "remote":
        if not spec.get("url"):
            raise ConfigError("remote model needs a url")
        return RemoteModel(spec["url"], expected_vocab_size=vocab_size, timeout=float(spec.get("timeout", 30.0)))
    raise ConfigError(f"unknown model kind {kind!r}")


def build_scorer(spec: Mapping[str, Any]) -> ExternalScorer:
    headers = {"Authorization": f"Bearer {spec['api_key']}"} if spec.get("api_key") else None
    timeout = float(spec.get("timeout", 60.0))
    client = httpx.Client(timeout=timeout, headers=headers)
    return ExternalScorer(spec["url"], max_in_flight=int(spec.get("max_in_flight", 4)), client=client)


@dataclass
class Resources:
    tokenizer: WordTokenizer
    model: LogitProvider
    amateur: Optional[LogitProvider]
    scorers: dict[str, ExternalScorer]
    items: dict[str, list[DatasetItem]]
    malformed: dict[str, list[tuple[int, str]]]


def validate(cfg: RunConfig, connect: bool = True) -> list[str]:
    """Static problems in ``cfg`` (empty list = valid). Never raises."""
    problems = []
    if not cfg.datasets:
        problems.append("no datasets configured")
    for d in cfg.datasets:
        if d.task not in TASKS:
            problems.append(f"dataset {d.path}: unknown task {d.task!r}")
        elif not cfg.resolve(d.path).exists():
            problems.append(f"dataset {d.path} not found")
    tasks = {d.task for d in cfg.datasets if d.task in TASKS}
    for task in sorted(tasks):
        for m in cfg.metrics.get(task, []):
            if m not in NATIVE_METRICS and not (m in cfg.scorers and cfg.scorers[m].get("url")):
                problems.append(f"metric {m!r} for task {task} is neither native nor a configured scorer")
        if task not in cfg.templates and task not in ("qa", "ts", "mt", "cg"):
            problems.append(f"no template for task {task}")
    for ue in cfg.ue_methods:
        if ue not in UE_METHODS:
            problems.append(f"unknown uncertainty method {ue!r}")
    layer_count = int(cfg.model.get("layer_count", 32))
    for name in cfg.strategies:
        for params in cfg.grid(name, layer_count):
            try:
                cfg.decode_config(name, params, "qa")
            except ValueError as exc:
                problems.append(f"strategy {name} {params}: {exc}")
    if "cd" in cfg.strategies and cfg.amateur is None:
        problems.append("strategy cd needs an 'amateur' model")
    if not 0.0 <= cfg.quarantine_threshold <= 1.0:
        problems.append("quarantine_threshold must lie in [0, 1]")
    if cfg.model.get("kind") == "remote" and not connect:
        return problems
    try:
        tok = build_tokenizer(cfg)
        model = build_model(cfg.model, tok.vocab.size)
        caps = model.capabilities
        for name in cfg.strategies:
            need = REQUIREMENTS.get(name, {})
            if need.get("want_layers") and not caps.exposes_layer_logits:
                problems.append(f"strategy {name} needs layer logits the model does not expose")
            if need.get("want_hidden") and not caps.exposes_hidden_states:
                problems.append(f"strategy {name} needs hidden states the model does not expose")
        if cfg.amateur is not None:
            amateur = build_model(cfg.amateur, tok.vocab.size)
            if amateur.capabilities.vocab != caps.vocab:
                problems.append("amateur vocabulary differs from the expert's")
    except (DecodeLabError, OSError, ValueError) as exc:
        problems.append(f"model: {exc}")
    return problems


def load_resources(cfg: RunConfig) -> Resources:
    problems = validate(cfg)
    if problems:
        raise ConfigError("; ".join(problems))
    tok = build_tokenizer(cfg)
    model = build_model(cfg.model, tok.vocab.size)
    amateur = build_model(cfg.amateur, tok.vocab.size) if cfg.amateur else None
    tasks = {d.task for d in cfg.datasets}
    external = {m for t in tasks for m in cfg.metrics.get(t, []) if m not in NATIVE_METRICS}
    scorers = {m: build_scorer(cfg.scorers[m]) for m in sorted(external)}
    items: dict[str, list[DatasetItem]] = {}
    malformed: dict[str, list[tuple[int, str]]] = {}
    for d in cfg.datasets:
        res = ingest(cfg.resolve(d.path), d.task, cfg.max_malformed_frac)
        items.setdefault(d.task, []).extend(res.items)
        malformed[d.path] = res.malformed
    return Resources(tok, model, amateur, scorers, items, malformed)
