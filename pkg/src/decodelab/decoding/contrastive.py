"""Contrastive search, contrastive decoding and FSD (n-gram and vector anti-LMs)."""
from __future__ import annotations

from collections import Counter, defaultdict
from typing import Sequence

import numpy as np

from ..core import GenerationRecord
from ..errors import VocabMismatchError
from ..model_api import (
    LogitProvider,
    check_capabilities,
    entropy_from_logprobs,
    log_softmax,
    masked_log_softmax,
    softmax,
)
from ._common import Choice, best_of, call_step, check_prompt, cosine, run_single_path, top_ids
from .config import DecodeConfig


class _HiddenContext:
    """Hidden states of every position in the running context.

    Prompt positions come from one provider step per prompt prefix; generated
    positions reuse the lookahead state of the chosen candidate.
    """

    def __init__(self, provider, prompt):
        self.provider = provider
        self.states = [
            np.asarray(call_step(provider, prompt[: j + 1], 0, want_hidden=True).hidden_state)
            for j in range(len(prompt))
        ]

    def lookahead(self, context, y, t) -> np.ndarray:
        return np.asarray(call_step(self.provider, tuple(context) + (int(y),), t, want_hidden=True).hidden_state)

    def push(self, h):
        self.states.append(np.asarray(h))


def decode_cs(provider: LogitProvider, prompt: Sequence[int], cfg: DecodeConfig, item_id: str = "") -> GenerationRecord:
    """Contrastive search.

    Among the top-k tokens, pick the one maximizing
    ``(1 - alpha) * p(y) - alpha * max_j cos(h_y, h_j)`` where ``h_y`` comes
    from one lookahead step per candidate (k extra provider calls per position).
    """
    prompt = check_prompt(provider, prompt)
    check_capabilities(provider, want_hidden=True)
    k, alpha = int(cfg["k"]), float(cfg["alpha"])
    ctx = _HiddenContext(provider, prompt)

    def choose(hyp, out, lp, t):
        p = np.exp(lp)
        cands = top_ids(p, k)
        scores = np.full(lp.shape, -np.inf)
        penalty, hidden = {}, {}
        for y in cands:
            h = ctx.lookahead(hyp.tokens.ids, y, t)
            sim = max(cosine(h, s) for s in ctx.states)
            penalty[int(y)], hidden[int(y)] = sim, h
            scores[y] = (1.0 - alpha) * p[y] - alpha * sim
        tok = best_of(scores, cands)
        strat = masked_log_softmax(lp, cands)
        ctx.push(hidden[tok])
        return Choice(
            tok,
            float(strat[tok]),
            entropy_from_logprobs(strat),
            float(scores[tok]),
            meta={"penalty": penalty[tok]},
            hidden=hidden[tok],
        )

    return run_single_path(provider, prompt, cfg, item_id, choose, track_hidden=True)


def decode_cd(
    expert: LogitProvider,
    amateur: LogitProvider,
    prompt: Sequence[int],
    cfg: DecodeConfig,
    item_id: str = "",
) -> GenerationRecord:
    """Contrastive decoding between an expert and an amateur model.

    Candidates are restricted to ``{y : P_e(y) > alpha * max P_a}``; the score
    is ``(1 - beta) z_e - beta z_a``. An empty head falls back to the expert
    argmax and is flagged in the step metadata.
    """
    if expert.capabilities.vocab != amateur.capabilities.vocab:
        raise VocabMismatchError("expert and amateur must share one vocabulary")
    prompt = check_prompt(expert, prompt)
    alpha, beta = float(cfg["alpha"]), float(cfg["beta"])

    def choose(hyp, out, lp_e, t):
        lp_a = log_softmax(call_step(amateur, hyp.tokens.ids, t).final_logits)
        head = np.flatnonzero(np.exp(lp_e) > alpha * np.exp(lp_a).max())
        if head.size == 0:
            tok = int(np.argmax(lp_e))
            return Choice(tok, float(lp_e[tok]), entropy_from_logprobs(lp_e), float(lp_e[tok]), meta={"fallback": True})
        scores = (1.0 - beta) * lp_e - beta * lp_a
        tok = best_of(scores, head)
        strat = masked_log_softmax(scores, head)
        return Choice(tok, float(strat[tok]), entropy_from_logprobs(strat), float(scores[tok]), meta={"fallback": False})

    return run_single_path(expert, prompt, cfg, item_id, choose)


class NGramAntiLM:
    """Add-one smoothed n-gram model over the running prefix."""

    def __init__(self, order: int, vocab_size: int, tokens: Sequence[int] = ()):
        self.order = order
        self.vocab_size = vocab_size
        self.counts: dict[tuple[int, ...], Counter] = defaultdict(Counter)
        self.tokens: list[int] = []
        for tok in tokens:
            self.push(tok)

    def push(self, tok: int) -> None:
        self.tokens.append(int(tok))
        if len(self.tokens) >= self.order:
            ctx = tuple(self.tokens[len(self.tokens) - self.order : -1])
            self.counts[ctx][int(tok)] += 1

    def probs(self) -> np.ndarray:
        """P_anti(. | last order-1 tokens of the prefix)."""
        ctx = tuple(self.tokens[len(self.tokens) - self.order + 1 :]) if self.order > 1 else ()
        c = self.counts.get(ctx, Counter())
        out = np.ones(self.vocab_size)
        for y, cnt in c.items():
            out[y] += cnt
        return out / (sum(c.values()) + self.vocab_size)


def decode_fsd(provider: LogitProvider, prompt: Sequence[int], cfg: DecodeConfig, item_id: str = "") -> GenerationRecord:
    """FSD: ``(1 - alpha) P_base - alpha P_anti`` over the top-n base tokens."""
    if cfg.strategy == "fsd_vec":
        return decode_fsd_vec(provider, prompt, cfg, item_id)
    prompt = check_prompt(provider, prompt)
    n, alpha = int(cfg["n"]), float(cfg["alpha"])
    anti = NGramAntiLM(int(cfg["order"]), provider.capabilities.vocab.size, prompt)

    def choose(hyp, out, lp, t):
        p = np.exp(lp)
        cands = top_ids(p, n)
        scores = np.full(lp.shape, -np.inf)
        p_anti = anti.probs()
        scores[cands] = (1.0 - alpha) * p[cands] - alpha * p_anti[cands]
        tok = best_of(scores, cands)
        strat = masked_log_softmax(lp, cands)
        return Choice(tok, float(strat[tok]), entropy_from_logprobs(strat), float(scores[tok]), meta={"p_anti": float(p_anti[tok])})

    return run_single_path(provider, prompt, cfg, item_id, choose, on_emit=anti.push)


def decode_fsd_vec(provider: LogitProvider, prompt: Sequence[int], cfg: DecodeConfig, item_id: str = "") -> GenerationRecord:
    """FSD with a vector anti-model.

    P_anti over the top-n candidates is the softmax of cosine similarities
    between each candidate's lookahead hidden state and the mean hidden state
    of the last ``window`` context positions.
    """
    prompt = check_prompt(provider, prompt)
    check_capabilities(provider, want_hidden=True)
    n, alpha, window = int(cfg["n"]), float(cfg["alpha"]), int(cfg["window"])
    ctx = _HiddenContext(provider, prompt)

    def choose(hyp, out, lp, t):
        p = np.exp(lp)
        cands = top_ids(p, n)
        centre = np.mean(ctx.states[-window:], axis=0)
        hidden = {int(y): ctx.lookahead(hyp.tokens.ids, y, t) for y in cands}
        sims = np.array([cosine(hidden[int(y)], centre) for y in cands])
        p_anti = np.zeros(lp.shape)
        p_anti[cands] = softmax(sims)
        scores = np.full(lp.shape, -np.inf)
        scores[cands] = (1.0 - alpha) * p[cands] - alpha * p_anti[cands]
        tok = best_of(scores, cands)
        strat = masked_log_softmax(lp, cands)
        ctx.push(hidden[tok])
        return Choice(
            tok,
            float(strat[tok]),
            entropy_from_logprobs(strat),
            float(scores[tok]),
            meta={"p_anti": float(p_anti[tok])},
            hidden=hidden[tok],
        )

    return run_single_path(provider, prompt, cfg, item_id, choose, track_hidden=True)
