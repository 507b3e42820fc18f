"""Minimal JSON-over-HTTP server used by the loopback model and scorer stubs."""
from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Mapping

import httpx

from .errors import MalformedPayload, ProtocolError, ProtocolTimeout

Route = Callable[[Any], Any]


class JsonServer:
    """Serve ``routes`` (path -> handler(body) -> response body) on a background thread.

    Use as a context manager; ``url`` is available once started. Handlers
    raising ``HTTPStatus`` return that status with an error body.
    """

    def __init__(self, routes: Mapping[str, Route], host: str = "127.0.0.1", port: int = 0):
        self.routes = dict(routes)
        routes_ref = self.routes

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                handler = routes_ref.get(self.path)
                if handler is None:
                    self._send(404, {"error": f"no route {self.path}"})
                    return
                length = int(self.headers.get("Content-Length") or 0)
                raw = self.rfile.read(length) if length else b"{}"
                try:
                    body = json.loads(raw or b"{}")
                except json.JSONDecodeError:
                    self._send(400, {"error": "invalid JSON"})
                    return
                try:
                    result = handler(body)
                except HTTPStatus as exc:
                    self._send(exc.status, {"error": str(exc)})
                    return
                except Exception as exc:  # surfaced to the client as a 500
                    self._send(500, {"error": repr(exc)})
                    return
                self._send(200, result)

            def _send(self, status, payload):
                data = payload if isinstance(payload, bytes) else json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                try:
                    self.end_headers()
                    self.wfile.write(data)
                except (BrokenPipeError, ConnectionResetError):
                    pass  # client gave up (timeout); nothing to deliver

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._server.daemon_threads = True
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "JsonServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


class HTTPStatus(Exception):
    def __init__(self, status: int, message: str = ""):
        super().__init__(message)
        self.status = status


def post_json(client: httpx.Client, url: str, payload: Any) -> Any:
    try:
        resp = client.post(url, json=payload)
    except httpx.TimeoutException as exc:
        raise ProtocolTimeout(f"timeout calling {url}") from exc
    except httpx.HTTPError as exc:
        raise ProtocolError(f"transport failure calling {url}: {exc}") from exc
    if resp.status_code != 200:
        raise ProtocolError(f"{url} answered {resp.status_code}: {resp.text[:200]}")
    try:
        return resp.json()
    except ValueError as exc:
        raise MalformedPayload(f"{url} returned non-JSON body") from exc
