"""Client (and loopback stub) for externally hosted quality scorers.

Protocol::

    POST /v1/handshake -> {metric, range: [lo, hi]}
    POST /v1/score  {items: [{id, hypothesis, reference, aux?}]} -> {scores: [{id, score}]}
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Optional, Sequence

import httpx

from .._http import HTTPStatus, JsonServer, post_json
from ..errors import MalformedPayload, MissingItemsError, RangeViolationError


@dataclass(frozen=True)
class ScoredPair:
    id: str
    hypothesis: str
    reference: Any
    metric: str = ""
    score: Optional[float] = None
    aux: Optional[str] = None

    def request(self) -> dict:
        d = {"id": self.id, "hypothesis": self.hypothesis, "reference": self.reference}
        if self.aux is not None:
            d["aux"] = self.aux
        return d


class ExternalScorer:
    def __init__(self, url: str, timeout: float = 60.0, max_in_flight: int = 4, client: Optional[httpx.Client] = None):
        self.url = url.rstrip("/")
        self.max_in_flight = max(1, int(max_in_flight))
        self._client = client or httpx.Client(timeout=timeout)
        info = post_json(self._client, f"{self.url}/v1/handshake", {})
        try:
            self.metric = str(info["metric"])
            lo, hi = info["range"]
            self.range = (float(lo), float(hi))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedPayload(f"bad scorer handshake: {info!r}") from exc

    def close(self):
        self._client.close()

    def score(self, pairs: Sequence[ScoredPair]) -> list[ScoredPair]:
        """Score one batch; every requested id must come back inside the declared range."""
        if not pairs:
            return []
        body = post_json(self._client, f"{self.url}/v1/score", {"items": [p.request() for p in pairs]})
        try:
            returned = {str(s["id"]): s["score"] for s in body["scores"]}
        except (KeyError, TypeError) as exc:
            raise MalformedPayload("score response must carry scores: [{id, score}]") from exc
        missing = [p.id for p in pairs if p.id not in returned]
        if missing:
            raise MissingItemsError(missing)
        lo, hi = self.range
        out = []
        for p in pairs:
            v = returned[p.id]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise MalformedPayload(f"score for {p.id} is not a finite number")
            if not lo <= v <= hi:
                raise RangeViolationError(f"{self.metric} score {v} for {p.id} outside [{lo}, {hi}]")
            out.append(ScoredPair(p.id, p.hypothesis, p.reference, self.metric, float(v), p.aux))
        return out

    def score_many(self, batches: Iterable[Sequence[ScoredPair]]) -> list[list[ScoredPair]]:
        """Score several batches with at most ``max_in_flight`` concurrent requests; order is preserved."""
        batches = list(batches)
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(self.score, batches))


def serve_scorer(
    metric: str,
    score_fn: Callable[[dict], float],
    score_range: tuple[float, float] = (0.0, 1.0),
    host: str = "127.0.0.1",
    port: int = 0,
) -> JsonServer:
    """Loopback scorer applying ``score_fn(item)`` to every request item (not started)."""

    def handshake(_body):
        return {"metric": metric, "range": list(score_range)}

    def score(body):
        items = body.get("items")
        if not isinstance(items, list):
            raise HTTPStatus(400, "items must be a list")
        return {"scores": [{"id": it["id"], "score": score_fn(it)} for it in items]}

    return JsonServer({"/v1/handshake": handshake, "/v1/score": score}, host=host, port=port)
