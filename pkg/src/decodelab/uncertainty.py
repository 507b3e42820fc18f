"""Sequence-level uncertainty scores from per-step traces."""
from __future__ import annotations

import math
from typing import Optional

from .core import GenerationRecord, ScoringPolicy
from .errors import EmptyGenerationError

UE_METHODS = ("msp", "mte")


def _traces(record: GenerationRecord, policy: Optional[ScoringPolicy]):
    policy = ScoringPolicy(policy or record.scoring_policy)
    out = record.output
    if policy is ScoringPolicy.BASE:
        lp, ent = out.base_logprob_trace, out.base_entropy_trace
    else:
        lp, ent = out.logprob_trace, out.entropy_trace
    if not lp:
        raise EmptyGenerationError(f"record {record.item_id!r} has no generated tokens")
    return lp, ent


def msp(record: GenerationRecord, policy: Optional[ScoringPolicy] = None) -> float:
    """Negative log-likelihood of the generated tokens (higher = less certain).

    Under the strategy policy penalized per-step scores (DBS) enter as-is, so
    values can exceed the plain likelihood range.
    """
    lp, _ = _traces(record, policy)
    return -math.fsum(lp)


def mte(record: GenerationRecord, policy: Optional[ScoringPolicy] = None) -> float:
    """Mean per-step entropy (nats) of the scoring distribution."""
    _, ent = _traces(record, policy)
    return math.fsum(ent) / len(ent)


def score(record: GenerationRecord, method: str, policy: Optional[ScoringPolicy] = None) -> float:
    if method == "msp":
        return msp(record, policy)
    if method == "mte":
        return mte(record, policy)
    raise ValueError(f"unknown uncertainty method {method!r}")
