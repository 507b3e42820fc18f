"""Decoding strategies as pure functions from (provider, prompt, config) to a record."""
from __future__ import annotations

from typing import Optional, Sequence

from ..core import GenerationRecord
from ..model_api import LogitProvider, check_capabilities
from .config import DEFAULTS, MAX_NEW_TOKENS, STRATEGIES, DecodeConfig, default_grid, dola_buckets, premature_layers
from .contrastive import NGramAntiLM, decode_cd, decode_cs, decode_fsd, decode_fsd_vec
from .layers import decode_dola, decode_sled, evolve_logits, jsd
from .sampling import decode_sampled, nucleus
from .search import decode_beam, decode_dbs, decode_greedy

_DISPATCH = {
    "greedy": decode_greedy,
    "beam": decode_beam,
    "dbs": decode_dbs,
    "cs": decode_cs,
    "fsd": decode_fsd,
    "fsd_vec": decode_fsd_vec,
    "dola": decode_dola,
    "sled": decode_sled,
    "temperature": decode_sampled,
    "top_p": decode_sampled,
}

# capability each strategy needs from the provider
REQUIREMENTS = {
    "cs": {"want_hidden": True},
    "fsd_vec": {"want_hidden": True},
    "dola": {"want_layers": True},
    "sled": {"want_layers": True},
}


def decode(
    provider: LogitProvider,
    prompt: Sequence[int],
    cfg: DecodeConfig,
    item_id: str = "",
    amateur: Optional[LogitProvider] = None,
) -> GenerationRecord:
    check_capabilities(provider, **REQUIREMENTS.get(cfg.strategy, {}))
    if cfg.strategy == "cd":
        if amateur is None:
            raise ValueError("contrastive decoding needs an amateur provider")
        return decode_cd(provider, amateur, prompt, cfg, item_id)
    return _DISPATCH[cfg.strategy](provider, prompt, cfg, item_id)


__all__ = [
    "DEFAULTS",
    "MAX_NEW_TOKENS",
    "REQUIREMENTS",
    "STRATEGIES",
    "DecodeConfig",
    "NGramAntiLM",
    "decode",
    "decode_beam",
    "decode_cd",
    "decode_cs",
    "decode_dbs",
    "decode_dola",
    "decode_fsd",
    "decode_fsd_vec",
    "decode_greedy",
    "decode_sampled",
    "decode_sled",
    "default_grid",
    "dola_buckets",
    "evolve_logits",
    "jsd",
    "nucleus",
    "premature_layers",
]
