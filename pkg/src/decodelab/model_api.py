"""Logit-provider contract, numerically safe softmax helpers and toy models."""
from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import dataclass
from typing import Mapping, Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from .core import StepOutput, Vocabulary
from .errors import CapabilityError

# ln(0) stand-in for toy tables; keeps logits finite while preserving order
LOG_ZERO = -1e9


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max()
    return shifted - np.log(np.exp(shifted).sum())


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def entropy(probs) -> float:
    """Shannon entropy in nats; 0 * log 0 is taken as 0."""
    p = np.asarray(probs, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def masked_log_softmax(scores, support) -> np.ndarray:
    """Log-softmax of ``scores`` renormalized over the index set ``support``.

    Entries outside the support get ``-inf``.
    """
    z = np.asarray(scores, dtype=np.float64)
    out = np.full(z.shape, -np.inf)
    idx = np.asarray(support, dtype=np.int64)
    out[idx] = log_softmax(z[idx])
    return out


def entropy_from_logprobs(logprobs) -> float:
    lp = np.asarray(logprobs, dtype=np.float64)
    finite = np.isfinite(lp)
    p = np.exp(lp[finite])
    return float(-(p * lp[finite]).sum())


def log_table(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore"):
        z = np.log(p)
    return np.where(p > 0, z, LOG_ZERO)


@dataclass(frozen=True)
class ModelCapabilities:
    vocab: Vocabulary
    layer_count: int = 1
    exposes_layer_logits: bool = False
    exposes_hidden_states: bool = False
    # whether hidden states are taken before or after the final norm
    hidden_state_kind: str = "unspecified"

    def __post_init__(self):
        if self.layer_count < 1:
            raise ValueError("layer_count must be >= 1")
        if self.exposes_layer_logits and self.layer_count < 2:
            raise ValueError("layer logits require at least 2 layers")


@runtime_checkable
class LogitProvider(Protocol):
    capabilities: ModelCapabilities
    concurrency_safe: bool

    def step(self, context: Sequence[int], want_layers: bool = False, want_hidden: bool = False) -> StepOutput:
        ...


def check_capabilities(model: LogitProvider, want_layers: bool = False, want_hidden: bool = False) -> None:
    caps = model.capabilities
    if want_layers and not caps.exposes_layer_logits:
        raise CapabilityError(f"{type(model).__name__} does not expose layer logits")
    if want_hidden and not caps.exposes_hidden_states:
        raise CapabilityError(f"{type(model).__name__} does not expose hidden states")


def step(model: LogitProvider, context: Sequence[int], want_layers: bool = False, want_hidden: bool = False) -> StepOutput:
    """Ask ``model`` for the next-token view after ``context``."""
    if len(context) == 0:
        raise ValueError("context must be non-empty")
    check_capabilities(model, want_layers, want_hidden)
    out = model.step(tuple(context), want_layers=want_layers, want_hidden=want_hidden)
    if out.vocab_size != model.capabilities.vocab.size:
        raise ValueError(f"provider returned {out.vocab_size} logits, vocabulary has {model.capabilities.vocab.size}")
    return out


class TableLM:
    """Order-n lookup-table language model.

    ``table`` maps the last ``min(order, len(context))`` token ids to a
    probability vector; unseen keys fall back to the uniform distribution.
    """

    concurrency_safe = True

    def __init__(self, vocab: Vocabulary, order: int, table: Mapping[tuple[int, ...], Sequence[float]]):
        if order < 1:
            raise ValueError("order must be >= 1")
        self.vocab = vocab
        self.order = order
        self.capabilities = ModelCapabilities(vocab=vocab)
        self.table: dict[tuple[int, ...], np.ndarray] = {}
        self._logits: dict[tuple[int, ...], np.ndarray] = {}
        for key, row in table.items():
            p = np.asarray(row, dtype=np.float64)
            if p.shape != (vocab.size,):
                raise ValueError(f"row for {key} has wrong length")
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError(f"row for {key} is not a distribution")
            key = tuple(int(t) for t in key)
            self.table[key] = p
            self._logits[key] = log_table(p)
        self._uniform = np.zeros(vocab.size)

    @classmethod
    def random(
        cls,
        vocab_size: int,
        seed: int,
        order: int = 1,
        eos_id: Optional[int] = None,
        concentration: float = 1.0,
        eos_mass: Optional[float] = None,
    ) -> "TableLM":
        """Dirichlet rows for every context key of length 1..order."""
        rng = np.random.default_rng(seed)
        vocab = Vocabulary(vocab_size, vocab_size - 1 if eos_id is None else eos_id)
        table = {}
        for length in range(1, order + 1):
            for key in np.ndindex(*([vocab_size] * length)):
                row = rng.dirichlet(np.full(vocab_size, concentration))
                if eos_mass is not None:
                    row = row * (1.0 - eos_mass) / (1.0 - row[vocab.eos_id])
                    row[vocab.eos_id] = eos_mass
                row = row / row.sum()
                table[tuple(int(k) for k in key)] = row
        return cls(vocab, order, table)

    def distribution(self, context: Sequence[int]) -> np.ndarray:
        key = tuple(context[-self.order :])
        row = self.table.get(key)
        if row is None:
            return np.full(self.vocab.size, 1.0 / self.vocab.size)
        return row

    def step(self, context, want_layers=False, want_hidden=False) -> StepOutput:
        check_capabilities(self, want_layers, want_hidden)
        key = tuple(context[-self.order :])
        return StepOutput(final_logits=self._logits.get(key, self._uniform), layer_count=1)


def _seed_for(seed: int, key: Sequence[int]) -> list[int]:
    return [int(seed), len(key), *[int(k) for k in key]]


class SyntheticLayeredLM:
    """Seeded multi-layer toy model exposing layer logits and hidden states.

    Final-layer logits for a context come from a seeded draw keyed by the last
    ``order`` tokens. Earlier layers interpolate from an independent draw
    toward the final logits, so layer ``l`` agrees more with the final layer
    as ``l`` grows. The hidden state of the newest position is the embedding
    of the newest token, optionally blended with the mean context embedding.

    ``overrides`` pins the per-layer logits for chosen context keys (list of
    ``layer_count`` vectors, final last) so tests can craft exact situations.
    """

    concurrency_safe = True

    def __init__(
        self,
        vocab_size: int,
        layer_count: int = 4,
        hidden_dim: int = 16,
        seed: int = 0,
        order: int = 1,
        eos_id: Optional[int] = None,
        scale: float = 3.0,
        context_mix: float = 0.0,
        embeddings: Optional[np.ndarray] = None,
        overrides: Optional[Mapping[tuple[int, ...], Sequence[Sequence[float]]]] = None,
        eos_bias: float = 0.0,
    ):
        self.vocab = Vocabulary(vocab_size, vocab_size - 1 if eos_id is None else eos_id)
        self.capabilities = ModelCapabilities(
            vocab=self.vocab,
            layer_count=layer_count,
            exposes_layer_logits=layer_count >= 2,
            exposes_hidden_states=True,
            hidden_state_kind="token-embedding",
        )
        self.layer_count = layer_count
        self.seed = seed
        self.order = order
        self.scale = scale
        self.context_mix = context_mix
        self.eos_bias = eos_bias
        if embeddings is None:
            rng = np.random.default_rng([seed, 0xE3B])
            embeddings = rng.standard_normal((vocab_size, hidden_dim))
        self.embeddings = np.asarray(embeddings, dtype=np.float64)
        if self.embeddings.shape[0] != vocab_size:
            raise ValueError("embeddings must have one row per token")
        self.overrides = {}
        for key, layers in (overrides or {}).items():
            layers = [np.asarray(v, dtype=np.float64) for v in layers]
            if len(layers) != layer_count:
                raise ValueError(f"override for {key} needs {layer_count} layer vectors")
            self.overrides[tuple(key)] = layers
        self._cache: dict[tuple[int, ...], tuple[np.ndarray, ...]] = {}
        self._lock = threading.Lock()

    def _layers(self, key: tuple[int, ...]) -> tuple[np.ndarray, ...]:
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        if key in self.overrides:
            layers = tuple(self.overrides[key])
        else:
            rng = np.random.default_rng(_seed_for(self.seed, key))
            final = self.scale * rng.standard_normal(self.vocab.size)
            final[self.vocab.eos_id] += self.eos_bias
            early = self.scale * rng.standard_normal(self.vocab.size)
            L = self.layer_count
            layers = tuple(
                early + (final - early) * ((l + 1) / L) if l < L - 1 else final for l in range(L)
            )
        with self._lock:
            self._cache[key] = layers
        return layers

    def step(self, context, want_layers=False, want_hidden=False) -> StepOutput:
        check_capabilities(self, want_layers, want_hidden)
        key = tuple(int(t) for t in context[-self.order :])
        layers = self._layers(key)
        hidden = None
        if want_hidden:
            hidden = self.embeddings[context[-1]]
            if self.context_mix:
                hidden = hidden + self.context_mix * self.embeddings[list(context)].mean(axis=0)
        return StepOutput(
            final_logits=layers[-1],
            layer_logits=layers if want_layers else None,
            hidden_state=hidden,
            layer_count=self.layer_count,
        )


def make_self_loop_lm(
    seed: int,
    vocab_size: int = 12,
    loop_token: int = 0,
    loop_prob: float = 0.6,
    layer_count: int = 2,
    hidden_dim: int = 16,
) -> SyntheticLayeredLM:
    """Repetition-prone toy model: after any token, ``loop_token`` is the most
    likely continuation with probability ``loop_prob`` (a self-loop once the
    model emits it). The rest of the mass is spread by a seeded Dirichlet draw.
    """
    rng = np.random.default_rng([seed, 0x100F])
    eos = vocab_size - 1
    if loop_token == eos:
        raise ValueError("loop token must not be eos")
    overrides = {}
    for t in range(vocab_size):
        rest = rng.dirichlet(np.ones(vocab_size - 1)) * (1.0 - loop_prob)
        row = np.insert(rest, loop_token, loop_prob)
        row[eos] = min(row[eos], 1e-3)
        row = row / row.sum()
        z = log_table(row)
        overrides[(t,)] = [z] * layer_count
    return SyntheticLayeredLM(
        vocab_size,
        layer_count=layer_count,
        hidden_dim=hidden_dim,
        seed=seed,
        eos_id=eos,
        overrides=overrides,
    )


class WordTokenizer:
    """Whitespace word tokenizer over a fixed word list.

    Out-of-vocabulary words map to a stable hashed id among the non-special
    tokens. Decoding drops the eos token.
    """

    def __init__(self, words: Sequence[str], eos: str = "</s>"):
        words = list(words)
        if eos not in words:
            words.append(eos)
        self.words = words
        self.eos = eos
        self.index = {w: i for i, w in enumerate(words)}
        self.vocab = Vocabulary(len(words), self.index[eos])

    def encode(self, text: str) -> list[int]:
        ids = []
        for w in re.findall(r"\S+", text.lower()):
            i = self.index.get(w)
            if i is None:
                h = int.from_bytes(hashlib.sha1(w.encode("utf-8")).digest()[:4], "big")
                i = h % (self.vocab.size - 1)
                if i >= self.vocab.eos_id:
                    i += 1
            ids.append(i)
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.words[i] for i in ids if i != self.vocab.eos_id)
