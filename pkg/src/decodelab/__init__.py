"""Decoding strategies, sequence-level uncertainty and prediction-rejection evaluation."""
from .core import (
    EvalRecord,
    GenerationRecord,
    Hypothesis,
    PRRResult,
    ScoringPolicy,
    StepOutput,
    StopReason,
    TokenSeq,
    Vocabulary,
)
from .decoding import DecodeConfig, decode
from .eval import bootstrap, build_curve, prr, prr_diff
from .model_api import SyntheticLayeredLM, TableLM, WordTokenizer
from .uncertainty import msp, mte

__version__ = "0.1.0"

__all__ = [
    "DecodeConfig",
    "EvalRecord",
    "GenerationRecord",
    "Hypothesis",
    "PRRResult",
    "ScoringPolicy",
    "StepOutput",
    "StopReason",
    "SyntheticLayeredLM",
    "TableLM",
    "TokenSeq",
    "Vocabulary",
    "WordTokenizer",
    "bootstrap",
    "build_curve",
    "decode",
    "msp",
    "mte",
    "prr",
    "prr_diff",
]
