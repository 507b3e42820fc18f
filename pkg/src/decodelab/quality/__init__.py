from .metrics import NATIVE_METRICS, bleu, distinct_n, minmax_normalize, normalize_text, rouge_l
from .scorer import ExternalScorer, ScoredPair, serve_scorer

__all__ = [
    "NATIVE_METRICS",
    "ExternalScorer",
    "ScoredPair",
    "bleu",
    "distinct_n",
    "minmax_normalize",
    "normalize_text",
    "rouge_l",
    "serve_scorer",
]
