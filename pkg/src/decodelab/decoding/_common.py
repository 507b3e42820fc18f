from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from ..core import GenerationRecord, Hypothesis, StepOutput, StopReason
from ..errors import CapabilityError, ProviderStepError
from ..model_api import LogitProvider, check_capabilities, entropy_from_logprobs, log_softmax
from ..model_api import step as provider_step
from .config import DecodeConfig


def call_step(model: LogitProvider, context: Sequence[int], t: int, want_layers=False, want_hidden=False) -> StepOutput:
    try:
        return provider_step(model, context, want_layers=want_layers, want_hidden=want_hidden)
    except CapabilityError:
        raise
    except Exception as exc:
        raise ProviderStepError(t, exc) from exc


def check_prompt(model: LogitProvider, prompt: Sequence[int]) -> tuple[int, ...]:
    prompt = tuple(int(t) for t in prompt)
    if not prompt:
        raise ValueError("prompt must contain at least one token")
    V = model.capabilities.vocab.size
    if any(not 0 <= t < V for t in prompt):
        raise ValueError("prompt token outside vocabulary")
    return prompt


def top_ids(probs: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries, ties to the lowest id."""
    return np.argsort(-np.asarray(probs), kind="stable")[:k]


def best_of(scores: np.ndarray, candidates: Sequence[int]) -> int:
    """Candidate with the highest score; ties go to the lowest token id."""
    cands = sorted(int(c) for c in candidates)
    vals = np.asarray(scores)[cands]
    return cands[int(np.argmax(vals))]


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


@dataclass
class Choice:
    token: int
    logprob: float
    entropy: float
    score: float
    meta: Mapping[str, Any] = field(default_factory=dict)
    hidden: Optional[np.ndarray] = None


def finish_record(item_id: str, cfg: DecodeConfig, hyp: Hypothesis, eos_id: int) -> GenerationRecord:
    gen = hyp.generated
    reason = StopReason.EOS if gen and gen[-1] == eos_id else StopReason.MAX_LENGTH
    if not hyp.finished:
        hyp = replace(hyp, finished=True)
    return GenerationRecord(
        item_id=item_id,
        strategy=cfg.strategy,
        params=dict(cfg.params),
        output=hyp,
        scoring_policy=cfg.scoring_policy,
        stop_reason=reason,
    )


def run_single_path(
    model: LogitProvider,
    prompt: Sequence[int],
    cfg: DecodeConfig,
    item_id: str,
    choose: Callable[[Hypothesis, StepOutput, np.ndarray, int], Choice],
    want_layers: bool = False,
    track_hidden: bool = False,
    on_emit: Optional[Callable[[int], None]] = None,
) -> GenerationRecord:
    """Drive a one-hypothesis strategy until eos or the token budget.

    ``choose(hyp, step_output, base_logprobs, t)`` picks the next token and
    reports its probability under the strategy distribution.
    """
    prompt = check_prompt(model, prompt)
    check_capabilities(model, want_layers=want_layers, want_hidden=track_hidden)
    eos = model.capabilities.vocab.eos_id
    hyp = Hypothesis.start(prompt, with_hidden=track_hidden)
    for t in range(cfg.max_new_tokens):
        out = call_step(model, hyp.tokens.ids, t, want_layers=want_layers)
        base_lp = log_softmax(out.final_logits)
        c = choose(hyp, out, base_lp, t)
        done = c.token == eos or t == cfg.max_new_tokens - 1
        hyp = hyp.extend(
            c.token,
            logprob=c.logprob,
            entropy=c.entropy,
            base_logprob=float(base_lp[c.token]),
            base_entropy=entropy_from_logprobs(base_lp),
            score=c.score,
            score_increment=c.score,
            hidden=c.hidden if track_hidden else None,
            meta=c.meta,
            finished=done,
        )
        if on_emit is not None:
            on_emit(c.token)
        if c.token == eos:
            break
    return finish_record(item_id, cfg, hyp, eos)
