"""Layer-contrastive strategies (DoLa, SLED) and Jensen-Shannon divergence."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..core import GenerationRecord
from ..model_api import LogitProvider, entropy_from_logprobs, log_softmax, masked_log_softmax, softmax
from ._common import Choice, best_of, run_single_path, top_ids
from .config import DecodeConfig, premature_layers


def _kl(p: np.ndarray, m: np.ndarray) -> float:
    nz = p > 0
    return float(np.sum(p[nz] * (np.log(p[nz]) - np.log(m[nz]))))


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in nats, in [0, ln 2]."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)
    return 0.5 * _kl(p, m) + 0.5 * _kl(q, m)


def decode_dola(provider: LogitProvider, prompt: Sequence[int], cfg: DecodeConfig, item_id: str = "") -> GenerationRecord:
    """DoLa: contrast the final layer with the most divergent premature layer.

    The premature layer maximizes JSD to the final distribution (ties to the
    lowest layer). Scores are ``log p_final - log p_premature`` on the head
    ``{y : p_final(y) >= head * max p_final}``. When every candidate layer
    matches the final one (JSD 0) the final-layer argmax is emitted.
    """
    layers = premature_layers(cfg["layers"], provider.capabilities.layer_count)
    head_ratio = float(cfg["head"])

    def choose(hyp, out, lp_final, t):
        p_final = np.exp(lp_final)
        divs = [jsd(softmax(out.layer_logits[l]), p_final) for l in layers]
        best = int(np.argmax(divs))
        if divs[best] <= 0.0:
            tok = int(np.argmax(lp_final))
            return Choice(tok, float(lp_final[tok]), entropy_from_logprobs(lp_final), float(lp_final[tok]), meta={"layer": None})
        layer = layers[best]
        head = np.flatnonzero(p_final >= head_ratio * p_final.max())
        adjusted = np.full(lp_final.shape, -np.inf)
        adjusted[head] = lp_final[head] - log_softmax(out.layer_logits[layer])[head]
        tok = best_of(adjusted, head)
        strat = masked_log_softmax(adjusted, head)
        return Choice(
            tok,
            float(strat[tok]),
            entropy_from_logprobs(strat),
            float(adjusted[tok]),
            meta={"layer": layer, "jsd": divs[best]},
        )

    return run_single_path(provider, prompt, cfg, item_id, choose, want_layers=True)


def evolve_logits(final_logits, layer_logits, premature: Sequence[int], n: int, alpha: float, iterations: int = 1):
    """One or more logit-evolution updates restricted to the top-n final tokens.

    Each iteration adds ``alpha * (softmax(z) - mean_l softmax(z_l))`` to the
    top-n entries of ``z``. Returns ``(candidates, evolved logits)``.
    """
    z = log_softmax(final_logits)
    cands = top_ids(np.exp(z), n)
    p_early = np.mean([softmax(layer_logits[l]) for l in premature], axis=0)
    for _ in range(iterations):
        direction = softmax(z)[cands] - p_early[cands]
        z = z.copy()
        z[cands] += alpha * direction
    return cands, z


def decode_sled(provider: LogitProvider, prompt: Sequence[int], cfg: DecodeConfig, item_id: str = "") -> GenerationRecord:
    layers = premature_layers(cfg["layers"], provider.capabilities.layer_count)
    n, alpha, iterations = int(cfg["n"]), float(cfg["alpha"]), int(cfg["iterations"])

    def choose(hyp, out, lp_final, t):
        cands, z = evolve_logits(out.final_logits, out.layer_logits, layers, n, alpha, iterations)
        tok = best_of(z, cands)
        strat = masked_log_softmax(z, cands)
        return Choice(tok, float(strat[tok]), entropy_from_logprobs(strat), float(z[tok]))

    return run_single_path(provider, prompt, cfg, item_id, choose, want_layers=True)
