"""Thin HTTP layer shared by the node and the registry.

Server side: a threaded stdlib HTTP server with a regex route table and
JSON bodies everywhere. Client side: one helper that POSTs/GETs JSON and
returns (status, parsed body) without raising on 4xx/5xx, so callers can
branch on the machine-readable error shape {"error": code, "detail": str}.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable
from urllib.parse import parse_qs, urlsplit

from .model import canonical_json_bytes

log = logging.getLogger(__name__)

__all__ = ["JsonHttpServer", "HttpApiError", "http_json"]

MAX_BODY_BYTES = 8 * 1024 * 1024


class HttpApiError(Exception):
    """Raise inside a route handler to produce an error response."""

    def __init__(self, status: int, code: str, detail: str = ""):
        super().__init__(f"{status} {code}: {detail}")
        self.status = status
        self.code = code
        self.detail = detail


# handler(path_match, query: dict[str, str], body: Any) -> (status, jsonable)
Route = tuple[str, re.Pattern, Callable]


class JsonHttpServer:
    """Route-table server on loopback; one daemon thread per connection."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._routes: list[Route] = []
        self._observer: Callable[[str, str, int, float], None] | None = None
        outer = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):  # quiet; we log ourselves
                log.debug("http %s", fmt % args)

            def _dispatch(self, method: str) -> None:
                import time as _time
                started = _time.monotonic()
                split = urlsplit(self.path)
                query = {k: v[-1] for k, v in parse_qs(split.query).items()}
                body = None
                length = int(self.headers.get("Content-Length") or 0)
                if length:
                    if length > MAX_BODY_BYTES:
                        self._reply(413, {"error": "body_too_large", "detail": ""})
                        return
                    raw = self.rfile.read(length)
                    try:
                        body = json.loads(raw)
                    except ValueError:
                        self._reply(400, {"error": "bad_json",
                                          "detail": "request body is not JSON"})
                        return
                status = 500
                try:
                    for m, pattern, fn in outer._routes:
                        if m != method:
                            continue
                        match = pattern.fullmatch(split.path)
                        if match is None:
                            continue
                        status, payload = fn(match, query, body)
                        self._reply(status, payload)
                        return
                    status = 404
                    self._reply(404, {"error": "not_found", "detail": split.path})
                except HttpApiError as exc:
                    status = exc.status
                    self._reply(exc.status, {"error": exc.code, "detail": exc.detail})
                except Exception as exc:
                    log.exception("handler error on %s %s", method, split.path)
                    status = 500
                    self._reply(500, {"error": "internal", "detail": str(exc)})
                finally:
                    if outer._observer is not None:
                        elapsed_ms = (_time.monotonic() - started) * 1000.0
                        try:
                            outer._observer(method, split.path, status, elapsed_ms)
                        except Exception:
                            log.exception("request observer failed")

            def _reply(self, status: int, payload: Any) -> None:
                data = canonical_json_bytes(payload)
                self.send_response(status)
                self.send_header("Content-Type", "application/json; charset=utf-8")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                try:
                    self.wfile.write(data)
                except (BrokenPipeError, ConnectionResetError):
                    pass

            def do_GET(self):
                self._dispatch("GET")

            def do_POST(self):
                self._dispatch("POST")

            def do_DELETE(self):
                self._dispatch("DELETE")

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def route(self, method: str, pattern: str, fn: Callable) -> None:
        self._routes.append((method, re.compile(pattern), fn))

    def set_observer(self, fn: Callable[[str, str, int, float], None]) -> None:
        """fn(method, path, status, elapsed_ms) after every request."""
        self._observer = fn

    def start(self) -> None:
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name=f"httpd-{self.port}", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None


def http_json(method: str, url: str, body: Any = None,
              timeout_s: float = 10.0) -> tuple[int, Any]:
    """One JSON round trip. Returns (status, parsed body or None).

    Transport-level failures raise OSError/URLError; HTTP error statuses
    return normally with their parsed error body.
    """
    data = None
    headers = {"Accept": "application/json"}
    if body is not None:
        data = canonical_json_bytes(body)
        headers["Content-Type"] = "application/json; charset=utf-8"
    req = urllib.request.Request(url, data=data, headers=headers, method=method)
    try:
        with urllib.request.urlopen(req, timeout=timeout_s) as resp:
            raw = resp.read()
            status = resp.status
    except urllib.error.HTTPError as exc:
        raw = exc.read()
        status = exc.code
    if not raw:
        return status, None
    try:
        return status, json.loads(raw)
    except ValueError:
        return status, None
