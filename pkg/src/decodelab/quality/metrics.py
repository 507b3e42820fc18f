"""Native per-item quality metrics and min-max normalization.

Text is normalized identically for every metric: lowercase, punctuation
replaced by spaces, whitespace tokenization.
"""
from __future__ import annotations

import math
import unicodedata
from collections import Counter
from typing import Hashable, Sequence, Union

from ..errors import DegenerateQualityError


def normalize_text(text: str) -> list[str]:
    chars = [" " if unicodedata.category(c).startswith("P") else c for c in text.lower()]
    return "".join(chars).split()


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(hyp: str, ref: Union[str, Sequence[str]]) -> float:
    """LCS-based F1. A list of references scores the best match."""
    if not isinstance(ref, str):
        return max((rouge_l(hyp, r) for r in ref), default=0.0)
    h, r = normalize_text(hyp), normalize_text(ref)
    lcs = _lcs_length(h, r)
    if lcs == 0:
        return 0.0
    p, rc = lcs / len(h), lcs / len(r)
    return 2 * p * rc / (p + rc)


def _ngrams(tokens: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(hyp: str, ref: Union[str, Sequence[str]], max_n: int = 4) -> float:
    """Sentence-level BLEU-4 with add-one smoothing on the n > 1 precisions."""
    if not isinstance(ref, str):
        return max((bleu(hyp, r, max_n) for r in ref), default=0.0)
    h, r = normalize_text(hyp), normalize_text(ref)
    c = len(h)
    if c == 0:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        hyp_counts = _ngrams(h, n)
        ref_counts = _ngrams(r, n)
        matches = sum(min(cnt, ref_counts[g]) for g, cnt in hyp_counts.items())
        total = sum(hyp_counts.values())
        if n == 1:
            if matches == 0:
                return 0.0
            log_p += math.log(matches / total)
        else:
            log_p += math.log((matches + 1) / (total + 1))
    bp = 1.0 if c >= len(r) else math.exp(1.0 - len(r) / c)
    return bp * math.exp(log_p / max_n)


def distinct_n(tokens: Union[str, Sequence[Hashable]], n: int) -> float:
    """Fraction of distinct n-grams; strings are normalized and split first."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(tokens, str):
        tokens = normalize_text(tokens)
    grams = [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]
    if not grams:
        return 0.0
    return len(set(grams)) / len(grams)


def minmax_normalize(scores: Sequence[float]) -> list[float]:
    if len(scores) == 0:
        raise ValueError("cannot normalize an empty list")
    lo, hi = min(scores), max(scores)
    if hi == lo:
        raise DegenerateQualityError(f"all {len(scores)} quality scores equal {lo}")
    span = hi - lo
    return [(s - lo) / span for s in scores]


NATIVE_METRICS = {"rougeL": rouge_l, "bleu": bleu}
