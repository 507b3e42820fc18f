"""Stochastic baselines: temperature and nucleus (top-p) sampling."""
from __future__ import annotations

import zlib
from typing import Sequence

import numpy as np

from ..core import GenerationRecord
from ..model_api import LogitProvider, entropy_from_logprobs, log_softmax
from ._common import Choice, run_single_path
from .config import DecodeConfig

# cumulative-mass slack so that e.g. 0.6 + 0.3 counts as reaching p = 0.9
_MASS_EPS = 1e-12


def item_rng(seed: int, item_id: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(item_id.encode("utf-8"))])


def nucleus(probs, p: float) -> np.ndarray:
    """Smallest probability-sorted prefix with mass >= p, renormalized."""
    probs = np.asarray(probs, dtype=np.float64)
    order = np.argsort(-probs, kind="stable")
    mass = np.cumsum(probs[order])
    cut = int(np.searchsorted(mass, p - _MASS_EPS, side="left"))
    keep = order[: min(cut, len(order) - 1) + 1]
    out = np.zeros_like(probs)
    out[keep] = probs[keep]
    return out / out.sum()


def draw(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw of one token."""
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    return int(np.searchsorted(cdf, rng.random(), side="right"))


def decode_sampled(provider: LogitProvider, prompt: Sequence[int], cfg: DecodeConfig, item_id: str = "") -> GenerationRecord:
    T = float(cfg["T"])
    top_p = float(cfg["p"]) if cfg.strategy == "top_p" else 1.0
    rng = item_rng(cfg["seed"], item_id)

    def choose(hyp, out, lp, t):
        scaled = log_softmax(np.asarray(out.final_logits) / T)
        probs = np.exp(scaled)
        if top_p < 1.0:
            probs = nucleus(probs, top_p)
        tok = draw(probs, rng)
        with np.errstate(divide="ignore"):
            strat = np.log(probs)
        return Choice(tok, float(strat[tok]), entropy_from_logprobs(strat), float(strat[tok]))

    return run_single_path(provider, prompt, cfg, item_id, choose)
