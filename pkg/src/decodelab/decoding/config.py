"""Decoding configuration and the default hyperparameter grids."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

from ..core import ScoringPolicy

STRATEGIES = (
    "greedy",
    "beam",
    "dbs",
    "cs",
    "cd",
    "fsd",
    "fsd_vec",
    "dola",
    "sled",
    "temperature",
    "top_p",
)

DEFAULTS: dict[str, dict[str, Any]] = {
    "greedy": {},
    "beam": {"k": 3},
    # lam: diversity strength; delta_n: n-gram order of the overlap penalty
    "dbs": {"k": 6, "G": 3, "lam": 1.0, "delta_n": 1},
    "cs": {"k": 4, "alpha": 0.6},
    "cd": {"alpha": 0.1, "beta": 0.5},
    # n: top-n candidate set; order: n-gram order of the anti-LM
    "fsd": {"n": 3, "alpha": 0.5, "order": 2},
    # window: number of trailing context positions averaged into the anti-model
    "fsd_vec": {"n": 3, "alpha": 0.5, "window": 3},
    # layers: half-open premature-layer bucket, None = every non-final layer
    "dola": {"layers": None, "head": 0.1},
    "sled": {"n": 5, "alpha": 1.0, "iterations": 1, "layers": None},
    "temperature": {"T": 1.0, "seed": 0},
    "top_p": {"p": 0.9, "T": 1.0, "seed": 0},
}

# Generation budgets per task.
MAX_NEW_TOKENS = {"qa": 64, "ts": 128, "mt": 128, "cg": 512}


@dataclass(frozen=True)
class DecodeConfig:
    strategy: str
    params: Mapping[str, Any] = field(default_factory=dict)
    max_new_tokens: int = 64
    scoring_policy: ScoringPolicy = ScoringPolicy.STRATEGY

    def __post_init__(self):
        if self.strategy not in DEFAULTS:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        unknown = set(self.params) - set(DEFAULTS[self.strategy])
        if unknown:
            raise ValueError(f"unknown {self.strategy} parameters: {sorted(unknown)}")
        merged = {**DEFAULTS[self.strategy], **self.params}
        if merged.get("layers") is not None:
            merged["layers"] = tuple(int(x) for x in merged["layers"])
        object.__setattr__(self, "params", merged)
        object.__setattr__(self, "scoring_policy", ScoringPolicy(self.scoring_policy))
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        _validate(self.strategy, merged)

    def __getitem__(self, key):
        return self.params[key]

    def with_params(self, **params) -> "DecodeConfig":
        return DecodeConfig(self.strategy, {**self.params, **params}, self.max_new_tokens, self.scoring_policy)


def _validate(strategy: str, p: Mapping[str, Any]) -> None:
    def check(cond, msg):
        if not cond:
            raise ValueError(f"{strategy}: {msg}")

    if strategy in ("beam", "dbs", "cs"):
        check(int(p["k"]) >= 1, "k must be >= 1")
    if strategy == "dbs":
        check(int(p["G"]) >= 1 and int(p["k"]) % int(p["G"]) == 0, "G must divide k")
        check(p["lam"] >= 0, "lam must be >= 0")
        check(int(p["delta_n"]) >= 1, "delta_n must be >= 1")
    if strategy == "cs":
        check(0.0 <= p["alpha"] <= 1.0, "alpha must lie in [0, 1]")
    if strategy == "cd":
        check(0.0 <= p["beta"] <= 1.0, "beta must lie in [0, 1]")
        check(0.0 < p["alpha"] < 1.0, "alpha must lie in (0, 1)")
    if strategy in ("fsd", "fsd_vec"):
        check(int(p["n"]) >= 1, "n must be >= 1")
        check(0.0 <= p["alpha"] <= 1.0, "alpha must lie in [0, 1]")
    if strategy == "fsd":
        check(int(p["order"]) >= 1, "order must be >= 1")
    if strategy == "fsd_vec":
        check(int(p["window"]) >= 1, "window must be >= 1")
    if strategy == "sled":
        check(int(p["n"]) >= 1, "n must be >= 1")
        check(p["alpha"] >= 0, "alpha must be >= 0")
        check(int(p["iterations"]) >= 1, "iterations must be >= 1")
    if strategy == "dola":
        check(0.0 <= p["head"] <= 1.0, "head must lie in [0, 1]")
    if p.get("layers") is not None:
        lo, hi = p["layers"]
        check(0 <= lo < hi, "layer bucket must be a non-empty [lo, hi)")
    if strategy == "temperature" or strategy == "top_p":
        check(p["T"] > 0, "T must be > 0")
    if strategy == "top_p":
        check(0.0 < p["p"] <= 1.0, "p must lie in (0, 1]")


def premature_layers(bucket: Optional[tuple[int, int]], layer_count: int) -> list[int]:
    """Candidate premature layers: the bucket minus the final layer."""
    final = layer_count - 1
    if bucket is None:
        layers = list(range(final))
    else:
        lo, hi = bucket
        layers = [l for l in range(lo, min(hi, final))]
    if not layers:
        raise ValueError(f"layer bucket {bucket} has no premature layer in a {layer_count}-layer model")
    return layers


def dola_buckets(layer_count: int) -> list[tuple[int, int]]:
    """Lower and upper half of the stack; [0, 16) and [16, 32) for 32 layers."""
    half = layer_count // 2
    return [(0, half), (half, layer_count)]


def default_grid(strategy: str, layer_count: int = 32) -> list[dict[str, Any]]:
    """Hyperparameter assignments swept for ``strategy``."""
    if strategy == "greedy":
        return [{}]
    if strategy == "beam":
        return [{"k": k} for k in (3, 5, 7)]
    if strategy == "dbs":
        return [{"k": k, "G": g} for k, g in ((3, 3), (6, 3), (9, 3), (6, 6), (12, 6))]
    if strategy == "cs":
        return [{"alpha": a} for a in (0.2, 0.4, 0.6)]
    if strategy == "cd":
        return [{"alpha": 0.1, "beta": b} for b in (0.1, 0.3, 0.5, 0.7, 0.9)]
    if strategy in ("fsd", "fsd_vec"):
        return [{"n": n, "alpha": a} for n, a in itertools.product((3, 5), (0.3, 0.5, 0.7))]
    if strategy == "dola":
        return [{"layers": b} for b in dola_buckets(layer_count)]
    if strategy == "sled":
        return [{"n": n, "alpha": a} for n, a in itertools.product((5, 10), (0.1, 1.0, 5.0))]
    if strategy == "temperature":
        return [{"T": t} for t in (0.8, 1.0, 1.2)]
    if strategy == "top_p":
        return [{"p": 0.9}]
    raise ValueError(f"unknown strategy {strategy!r}")
