"""Value types shared by every module.

All types are frozen dataclasses with a canonical JSON form
(``to_dict``/``from_dict``); log-probabilities are stored internally and
exponentiated only on access.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Optional, Sequence

import numpy as np


class ScoringPolicy(str, enum.Enum):
    STRATEGY = "strategy-distribution"
    BASE = "base-distribution"


class StopReason(str, enum.Enum):
    EOS = "eos"
    MAX_LENGTH = "max_length"


@dataclass(frozen=True)
class Vocabulary:
    size: int
    eos_id: int

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"vocabulary size must be >= 2, got {self.size}")
        if not 0 <= self.eos_id < self.size:
            raise ValueError(f"eos_id {self.eos_id} outside [0, {self.size})")

    def to_dict(self):
        return {"size": self.size, "eos_id": self.eos_id}

    @classmethod
    def from_dict(cls, d):
        return cls(size=int(d["size"]), eos_id=int(d["eos_id"]))


@dataclass(frozen=True)
class TokenSeq:
    """Token ids; the first ``offset`` ids are the prompt."""

    ids: tuple[int, ...]
    offset: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        if not 0 <= self.offset <= len(self.ids):
            raise ValueError("offset outside sequence")
        if any(i < 0 for i in self.ids):
            raise ValueError("negative token id")

    @property
    def prompt(self) -> tuple[int, ...]:
        return self.ids[: self.offset]

    @property
    def generated(self) -> tuple[int, ...]:
        return self.ids[self.offset :]

    def __len__(self):
        return len(self.ids)

    def append(self, token: int) -> "TokenSeq":
        return TokenSeq(self.ids + (int(token),), self.offset)

    def validate(self, vocab: Vocabulary) -> None:
        bad = [i for i in self.ids if i >= vocab.size]
        if bad:
            raise ValueError(f"token ids {bad} outside vocabulary of size {vocab.size}")

    def to_dict(self):
        return {"ids": list(self.ids), "offset": self.offset}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["ids"]), int(d.get("offset", 0)))


def _frozen_array(x) -> np.ndarray:
    a = np.array(x, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StepOutput:
    """One decoding step's view of the model.

    ``layer_logits`` (when present) holds one vector per layer with the final
    layer last; ``hidden_state`` is the last-layer state of the newest position.
    """

    final_logits: np.ndarray
    layer_logits: Optional[tuple[np.ndarray, ...]] = None
    hidden_state: Optional[np.ndarray] = None
    layer_count: int = 1

    def __post_init__(self):
        final = _frozen_array(self.final_logits)
        if final.ndim != 1:
            raise ValueError("final_logits must be a vector")
        if not np.all(np.isfinite(final)):
            raise ValueError("non-finite final logits")
        object.__setattr__(self, "final_logits", final)
        if self.layer_logits is not None:
            layers = tuple(_frozen_array(v) for v in self.layer_logits)
            if not layers:
                raise ValueError("layer_logits must not be empty")
            for v in layers:
                if v.shape != final.shape or not np.all(np.isfinite(v)):
                    raise ValueError("layer logits must be finite and match final_logits length")
            if not np.array_equal(layers[-1], final):
                raise ValueError("last layer_logits entry must equal final_logits")
            object.__setattr__(self, "layer_logits", layers)
        if self.hidden_state is not None:
            object.__setattr__(self, "hidden_state", _frozen_array(self.hidden_state))

    @property
    def vocab_size(self) -> int:
        return self.final_logits.shape[0]

    def __eq__(self, other):
        if not isinstance(other, StepOutput):
            return NotImplemented
        if self.layer_count != other.layer_count:
            return False
        if not np.array_equal(self.final_logits, other.final_logits):
            return False
        if (self.layer_logits is None) != (other.layer_logits is None):
            return False
        if self.layer_logits is not None and not all(
            np.array_equal(a, b) for a, b in zip(self.layer_logits, other.layer_logits)
        ):
            return False
        if (self.hidden_state is None) != (other.hidden_state is None):
            return False
        return self.hidden_state is None or np.array_equal(self.hidden_state, other.hidden_state)

    def to_dict(self):
        d: dict[str, Any] = {
            "final_logits": self.final_logits.tolist(),
            "layer_count": self.layer_count,
        }
        if self.layer_logits is not None:
            d["layer_logits"] = [v.tolist() for v in self.layer_logits]
        if self.hidden_state is not None:
            d["hidden_state"] = self.hidden_state.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        layers = d.get("layer_logits")
        hidden = d.get("hidden_state")
        return cls(
            final_logits=d["final_logits"],
            layer_logits=tuple(layers) if layers is not None else None,
            hidden_state=hidden,
            layer_count=int(d.get("layer_count", 1)),
        )


@dataclass(frozen=True)
class Hypothesis:
    """A partial or finished continuation with its per-step traces.

    Trace semantics (one entry per generated token):

    * ``logprob_trace``/``entropy_trace``: the distribution the strategy
      actually selected from (renormalized over restricted candidate sets).
    * ``base_logprob_trace``/``base_entropy_trace``: the untouched final-layer
      softmax.
    * ``score_trace``: the raw per-step strategy objective (penalized scores
      for DBS/CS, contrastive scores for CD, ...).
    """

    tokens: TokenSeq
    cum_strategy_score: float = 0.0
    logprob_trace: tuple[float, ...] = ()
    entropy_trace: tuple[float, ...] = ()
    base_logprob_trace: tuple[float, ...] = ()
    base_entropy_trace: tuple[float, ...] = ()
    score_trace: tuple[float, ...] = ()
    hidden_trace: Optional[tuple[tuple[float, ...], ...]] = None
    step_meta: tuple[Mapping[str, Any], ...] = ()
    finished: bool = False

    def __post_init__(self):
        n = len(self.tokens.generated)
        traces = (
            self.logprob_trace,
            self.entropy_trace,
            self.base_logprob_trace,
            self.base_entropy_trace,
            self.score_trace,
            self.step_meta,
        )
        if any(len(t) != n for t in traces):
            raise ValueError("trace lengths out of sync with generated tokens")
        if self.hidden_trace is not None and len(self.hidden_trace) != n:
            raise ValueError("hidden_trace length out of sync with generated tokens")
        if any(lp > 0.0 or math.isnan(lp) for lp in self.logprob_trace):
            raise ValueError("log-probabilities must be <= 0")

    @classmethod
    def start(cls, prompt: Sequence[int], with_hidden: bool = False) -> "Hypothesis":
        prompt = tuple(int(t) for t in prompt)
        return cls(TokenSeq(prompt, len(prompt)), hidden_trace=() if with_hidden else None)

    @property
    def generated(self) -> tuple[int, ...]:
        return self.tokens.generated

    @property
    def prob_trace(self) -> tuple[float, ...]:
        return tuple(math.exp(lp) for lp in self.logprob_trace)

    @property
    def cum_logprob(self) -> float:
        total = 0.0
        for lp in self.base_logprob_trace:
            total += lp
        return total

    def extend(
        self,
        token: int,
        *,
        logprob: float,
        entropy: float,
        base_logprob: float,
        base_entropy: float,
        score: float,
        score_increment: Optional[float] = None,
        hidden: Optional[Sequence[float]] = None,
        meta: Optional[Mapping[str, Any]] = None,
        finished: bool = False,
    ) -> "Hypothesis":
        inc = logprob if score_increment is None else score_increment
        hidden_trace = self.hidden_trace
        if hidden_trace is not None:
            if hidden is None:
                raise ValueError("hypothesis tracks hidden states; one is required")
            hidden_trace = hidden_trace + (tuple(float(h) for h in hidden),)
        return replace(
            self,
            tokens=self.tokens.append(token),
            cum_strategy_score=self.cum_strategy_score + inc,
            logprob_trace=self.logprob_trace + (float(logprob),),
            entropy_trace=self.entropy_trace + (float(entropy),),
            base_logprob_trace=self.base_logprob_trace + (float(base_logprob),),
            base_entropy_trace=self.base_entropy_trace + (float(base_entropy),),
            score_trace=self.score_trace + (float(score),),
            hidden_trace=hidden_trace,
            step_meta=self.step_meta + (dict(meta or {}),),
            finished=finished,
        )

    def to_dict(self):
        return {
            "tokens": self.tokens.to_dict(),
            "cum_strategy_score": self.cum_strategy_score,
            "logprob_trace": list(self.logprob_trace),
            "entropy_trace": list(self.entropy_trace),
            "base_logprob_trace": list(self.base_logprob_trace),
            "base_entropy_trace": list(self.base_entropy_trace),
            "score_trace": list(self.score_trace),
            "hidden_trace": None if self.hidden_trace is None else [list(h) for h in self.hidden_trace],
            "step_meta": [dict(m) for m in self.step_meta],
            "finished": self.finished,
        }

    @classmethod
    def from_dict(cls, d):
        hidden = d.get("hidden_trace")
        return cls(
            tokens=TokenSeq.from_dict(d["tokens"]),
            cum_strategy_score=float(d["cum_strategy_score"]),
            logprob_trace=tuple(d["logprob_trace"]),
            entropy_trace=tuple(d["entropy_trace"]),
            base_logprob_trace=tuple(d["base_logprob_trace"]),
            base_entropy_trace=tuple(d["base_entropy_trace"]),
            score_trace=tuple(d["score_trace"]),
            hidden_trace=None if hidden is None else tuple(tuple(h) for h in hidden),
            step_meta=tuple(dict(m) for m in d.get("step_meta", ())),
            finished=bool(d["finished"]),
        )


def strategy_id(strategy: str, params: Mapping[str, Any]) -> str:
    """Stable identifier such as ``beam[k=3]``."""
    if not params:
        return strategy
    inner = ",".join(f"{k}={_fmt_param(params[k])}" for k in sorted(params))
    return f"{strategy}[{inner}]"


def _fmt_param(v) -> str:
    # tuples are half-open layer buckets
    if isinstance(v, (list, tuple)):
        return "[" + ",".join(_fmt_param(x) for x in v) + ")"
    return str(v)


@dataclass(frozen=True)
class GenerationRecord:
    item_id: str
    strategy: str
    params: Mapping[str, Any]
    output: Hypothesis
    scoring_policy: ScoringPolicy = ScoringPolicy.STRATEGY
    stop_reason: StopReason = StopReason.MAX_LENGTH
    text: str = ""

    @property
    def strategy_id(self) -> str:
        return strategy_id(self.strategy, self.params)

    def to_dict(self):
        return {
            "item_id": self.item_id,
            "strategy": self.strategy,
            "params": _jsonable(self.params),
            "output": self.output.to_dict(),
            "scoring_policy": ScoringPolicy(self.scoring_policy).value,
            "stop_reason": StopReason(self.stop_reason).value,
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            item_id=d["item_id"],
            strategy=d["strategy"],
            params=_from_jsonable(d["params"]),
            output=Hypothesis.from_dict(d["output"]),
            scoring_policy=ScoringPolicy(d["scoring_policy"]),
            stop_reason=StopReason(d["stop_reason"]),
            text=d.get("text", ""),
        )


def _jsonable(params: Mapping[str, Any]) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}


def _from_jsonable(params: Mapping[str, Any]) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in params.items()}


@dataclass(frozen=True)
class EvalRecord:
    item_id: str
    uncertainty: float
    quality_raw: Mapping[str, float] = field(default_factory=dict)
    quality_norm: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name, v in self.quality_norm.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"normalized quality {name}={v} outside [0, 1]")

    def to_dict(self):
        return {
            "item_id": self.item_id,
            "uncertainty": self.uncertainty,
            "quality_raw": dict(self.quality_raw),
            "quality_norm": dict(self.quality_norm),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            item_id=d["item_id"],
            uncertainty=float(d["uncertainty"]),
            quality_raw=dict(d.get("quality_raw", {})),
            quality_norm=dict(d.get("quality_norm", {})),
        )


@dataclass(frozen=True)
class PRRResult:
    prr: float
    area_uns: float
    area_orc: float
    area_rand: float
    n_items: int
    boot_mean: Optional[float] = None
    boot_sd: Optional[float] = None
    n_boot: int = 0

    def to_dict(self):
        return {
            "prr": self.prr,
            "area_uns": self.area_uns,
            "area_orc": self.area_orc,
            "area_rand": self.area_rand,
            "n_items": self.n_items,
            "boot_mean": self.boot_mean,
            "boot_sd": self.boot_sd,
            "n_boot": self.n_boot,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def dumps(obj, **kwargs) -> str:
    """Canonical JSON for any core type (sorted keys, no whitespace variance)."""
    return json.dumps(obj.to_dict(), sort_keys=True, **kwargs)


def loads(cls, s: str):
    return cls.from_dict(json.loads(s))
