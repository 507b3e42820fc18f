"""Greedy search, beam search and diverse (grouped) beam search."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..core import GenerationRecord, Hypothesis
from ..model_api import LogitProvider, entropy_from_logprobs, log_softmax
from ._common import Choice, call_step, check_prompt, finish_record, run_single_path
from .config import DecodeConfig


def decode_greedy(provider: LogitProvider, prompt: Sequence[int], cfg: DecodeConfig, item_id: str = "") -> GenerationRecord:
    def choose(hyp, out, lp, t):
        tok = int(np.argmax(lp))
        return Choice(tok, float(lp[tok]), entropy_from_logprobs(lp), float(lp[tok]))

    return run_single_path(provider, prompt, cfg, item_id, choose)


class _StepCache:
    """Per-decode memo of (log-softmax, entropy) keyed by context."""

    def __init__(self, provider):
        self.provider = provider
        self._memo = {}

    def __call__(self, ids, t):
        hit = self._memo.get(ids)
        if hit is None:
            lp = log_softmax(call_step(self.provider, ids, t).final_logits)
            hit = (lp, entropy_from_logprobs(lp))
            self._memo[ids] = hit
        return hit


def _rank_key(entry):
    # entries are (score, generated tokens, ...); higher score first, then lexicographic tokens
    return (-entry[0], entry[1])


def decode_beam(provider: LogitProvider, prompt: Sequence[int], cfg: DecodeConfig, item_id: str = "") -> GenerationRecord:
    """Keep the top-k partial sequences by cumulative log-probability.

    Finished beams stay in the pool frozen and keep competing for the k slots,
    so the search stops once every retained beam has finished.
    """
    prompt = check_prompt(provider, prompt)
    k = int(cfg["k"])
    eos = provider.capabilities.vocab.eos_id
    V = provider.capabilities.vocab.size
    lookup = _StepCache(provider)
    active = [Hypothesis.start(prompt)]
    finished: list[Hypothesis] = []
    for t in range(cfg.max_new_tokens):
        last = t == cfg.max_new_tokens - 1
        pool = [(h.cum_strategy_score, h.generated, h, None) for h in finished]
        for h in active:
            lp, _ = lookup(h.tokens.ids, t)
            for y in range(V):
                pool.append((h.cum_strategy_score + float(lp[y]), h.generated + (y,), h, y))
        pool.sort(key=_rank_key)
        active, finished = [], []
        for score, _gen, h, y in pool[:k]:
            if y is None:
                finished.append(h)
                continue
            lp, ent = lookup(h.tokens.ids, t)
            done = y == eos or last
            new = h.extend(
                y,
                logprob=float(lp[y]),
                entropy=ent,
                base_logprob=float(lp[y]),
                base_entropy=ent,
                score=float(lp[y]),
                finished=done,
            )
            (finished if done else active).append(new)
        if not active:
            break
    best = min(((h.cum_strategy_score, h.generated, h) for h in finished), key=_rank_key)[2]
    return finish_record(item_id, cfg, best, eos)


def _ngram_overlap(tokens: tuple[int, ...], others: list[tuple[int, ...]], n: int) -> int:
    if len(tokens) < n:
        return 0
    tail = tokens[-n:]
    return sum(1 for o in others if len(o) >= n and o[-n:] == tail)


def decode_dbs(provider: LogitProvider, prompt: Sequence[int], cfg: DecodeConfig, item_id: str = "") -> GenerationRecord:
    """Diverse beam search with G groups of k/G beams.

    Group g ranks candidates by cumulative log-probability minus
    ``lam`` times the n-gram overlap (n = ``delta_n``; n=1 is token overlap)
    with the sequences groups 0..g-1 selected at the same step. The penalized
    total is kept in ``cum_strategy_score``; the returned hypothesis is the
    best across groups by raw cumulative log-probability.
    """
    prompt = check_prompt(provider, prompt)
    k, G = int(cfg["k"]), int(cfg["G"])
    lam, n = float(cfg["lam"]), int(cfg["delta_n"])
    width = k // G
    eos = provider.capabilities.vocab.eos_id
    V = provider.capabilities.vocab.size
    lookup = _StepCache(provider)
    active = [[Hypothesis.start(prompt)] for _ in range(G)]
    finished: list[list[Hypothesis]] = [[] for _ in range(G)]
    for t in range(cfg.max_new_tokens):
        last = t == cfg.max_new_tokens - 1
        chosen_this_step: list[tuple[int, ...]] = []
        for g in range(G):
            pool = [(h.cum_strategy_score, h.generated, h, None, None) for h in finished[g]]
            for h in active[g]:
                lp, _ = lookup(h.tokens.ids, t)
                for y in range(V):
                    seq = h.tokens.ids + (y,)
                    inc = float(lp[y]) - lam * _ngram_overlap(seq, chosen_this_step, n) if lam else float(lp[y])
                    pool.append((h.cum_strategy_score + inc, h.generated + (y,), h, y, inc))
            pool.sort(key=_rank_key)
            new_active, new_finished = [], []
            group_chosen = []
            for _score, _gen, h, y, inc in pool[:width]:
                if y is None:
                    new_finished.append(h)
                    continue
                lp, ent = lookup(h.tokens.ids, t)
                if lam:
                    penalties = np.array(
                        [_ngram_overlap(h.tokens.ids + (v,), chosen_this_step, n) for v in range(V)],
                        dtype=np.float64,
                    )
                    strat_ent = entropy_from_logprobs(log_softmax(lp - lam * penalties))
                else:
                    strat_ent = ent
                done = y == eos or last
                new = h.extend(
                    y,
                    logprob=min(inc, 0.0),
                    entropy=strat_ent,
                    base_logprob=float(lp[y]),
                    base_entropy=ent,
                    score=inc,
                    score_increment=inc,
                    meta={"group": g},
                    finished=done,
                )
                group_chosen.append(new.tokens.ids)
                (new_finished if done else new_active).append(new)
            chosen_this_step.extend(group_chosen)
            active[g], finished[g] = new_active, new_finished
        if not any(active):
            break
    everything = [h for group in finished for h in group]
    best = min(((h.cum_logprob, h.generated, h) for h in everything), key=_rank_key)[2]
    return finish_record(item_id, cfg, best, eos)
