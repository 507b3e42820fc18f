"""Remote logit provider speaking the JSON step protocol, plus a loopback server.

Protocol::

    POST /v1/handshake -> {vocab_size, layer_count, exposes_layer_logits, exposes_hidden_states[, eos_id]}
    POST /v1/step  {context: [int], want_layers: bool, want_hidden: bool}
                   -> {final_logits: [float], layer_logits?: [[float]], hidden_state?: [float]}
"""
from __future__ import annotations

import math
from typing import Optional, Sequence

import httpx

from ._http import HTTPStatus, JsonServer, post_json
from .core import StepOutput, Vocabulary
from .errors import MalformedPayload, VocabMismatchError
from .model_api import LogitProvider, ModelCapabilities, check_capabilities


def _float_list(value, length: int, name: str) -> list[float]:
    if not isinstance(value, list) or len(value) != length:
        raise MalformedPayload(f"{name} must be a list of {length} numbers")
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise MalformedPayload(f"{name} contains a non-finite or non-numeric entry")
        out.append(float(v))
    return out


class RemoteModel:
    """Client side of the step protocol; usable anywhere a provider is expected."""

    concurrency_safe = True

    def __init__(
        self,
        url: str,
        expected_vocab_size: Optional[int] = None,
        eos_id: Optional[int] = None,
        timeout: float = 30.0,
        client: Optional[httpx.Client] = None,
    ):
        self.url = url.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout)
        info = post_json(self._client, f"{self.url}/v1/handshake", {})
        try:
            vocab_size = int(info["vocab_size"])
            layer_count = int(info["layer_count"])
            caps_layers = bool(info["exposes_layer_logits"])
            caps_hidden = bool(info["exposes_hidden_states"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedPayload(f"bad handshake payload: {info!r}") from exc
        if expected_vocab_size is not None and vocab_size != expected_vocab_size:
            raise VocabMismatchError(f"server vocabulary {vocab_size} != expected {expected_vocab_size}")
        eos = info.get("eos_id", eos_id if eos_id is not None else vocab_size - 1)
        self.capabilities = ModelCapabilities(
            vocab=Vocabulary(vocab_size, int(eos)),
            layer_count=layer_count,
            exposes_layer_logits=caps_layers,
            exposes_hidden_states=caps_hidden,
            hidden_state_kind=str(info.get("hidden_state_kind", "unspecified")),
        )

    def close(self):
        self._client.close()

    def step(self, context: Sequence[int], want_layers: bool = False, want_hidden: bool = False) -> StepOutput:
        check_capabilities(self, want_layers, want_hidden)
        body = post_json(
            self._client,
            f"{self.url}/v1/step",
            {"context": [int(t) for t in context], "want_layers": want_layers, "want_hidden": want_hidden},
        )
        if not isinstance(body, dict):
            raise MalformedPayload("step response must be an object")
        V = self.capabilities.vocab.size
        final = _float_list(body.get("final_logits"), V, "final_logits")
        layers = None
        if want_layers:
            raw = body.get("layer_logits")
            L = self.capabilities.layer_count
            if not isinstance(raw, list) or len(raw) != L:
                raise MalformedPayload(f"layer_logits must hold {L} vectors")
            layers = tuple(_float_list(v, V, "layer_logits") for v in raw)
        hidden = None
        if want_hidden:
            raw = body.get("hidden_state")
            if not isinstance(raw, list) or not raw:
                raise MalformedPayload("hidden_state missing")
            hidden = _float_list(raw, len(raw), "hidden_state")
        try:
            return StepOutput(final, layers, hidden, self.capabilities.layer_count)
        except ValueError as exc:
            raise MalformedPayload(str(exc)) from exc


def serve_model(provider: LogitProvider, host: str = "127.0.0.1", port: int = 0) -> JsonServer:
    """Expose ``provider`` over the step protocol (not started)."""
    caps = provider.capabilities

    def handshake(_body):
        return {
            "vocab_size": caps.vocab.size,
            "layer_count": caps.layer_count,
            "exposes_layer_logits": caps.exposes_layer_logits,
            "exposes_hidden_states": caps.exposes_hidden_states,
            "eos_id": caps.vocab.eos_id,
            "hidden_state_kind": caps.hidden_state_kind,
        }

    def do_step(body):
        try:
            context = [int(t) for t in body["context"]]
        except (KeyError, TypeError, ValueError):
            raise HTTPStatus(400, "context must be a list of ints")
        if not context or any(not 0 <= t < caps.vocab.size for t in context):
            raise HTTPStatus(400, "context empty or out of vocabulary")
        want_layers = bool(body.get("want_layers", False))
        want_hidden = bool(body.get("want_hidden", False))
        out = provider.step(tuple(context), want_layers=want_layers, want_hidden=want_hidden)
        resp = {"final_logits": out.final_logits.tolist()}
        if want_layers:
            resp["layer_logits"] = [v.tolist() for v in out.layer_logits]
        if want_hidden:
            resp["hidden_state"] = out.hidden_state.tolist()
        return resp

    return JsonServer({"/v1/handshake": handshake, "/v1/step": do_step}, host=host, port=port)
