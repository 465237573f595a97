"""Instrumented in-process HTTP endpoint for client tests.

Serves the chat-completions wire protocol on 127.0.0.1 with a scriptable
behavior queue and counters for peak concurrency, total hits, and
authorization headers, so tests can assert the client's retry, ordering,
and bounded-in-flight contracts against real sockets.
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class MockEndpoint:
    """A tiny chat-completions server with scripted responses.

    ``script`` is a list of behaviors consumed per request (then the last
    one repeats): ``("ok", text)``, ``("status", code)``, or
    ``("sleep_ok", seconds, text)``.
    """

    def __init__(self, script=None, hold_seconds: float = 0.0):
        self.script = list(script or [("ok", "OK")])
        self.hold_seconds = hold_seconds
        self.hits = 0
        self.in_flight = 0
        self.peak_in_flight = 0
        self.auth_headers: list[str | None] = []
        self.bodies: list[dict] = []
        self._lock = threading.Lock()
        endpoint = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # keep test output clean
                pass

            def do_POST(self):
                with endpoint._lock:
                    endpoint.hits += 1
                    endpoint.in_flight += 1
                    endpoint.peak_in_flight = max(endpoint.peak_in_flight, endpoint.in_flight)
                    idx = min(endpoint.hits - 1, len(endpoint.script) - 1)
                    behavior = endpoint.script[idx]
                    endpoint.auth_headers.append(self.headers.get("Authorization"))
                    length = int(self.headers.get("Content-Length", 0))
                    endpoint.bodies.append(json.loads(self.rfile.read(length) or b"{}"))
                try:
                    if endpoint.hold_seconds:
                        time.sleep(endpoint.hold_seconds)
                    if behavior[0] == "sleep_ok":
                        time.sleep(behavior[1])
                        self._reply_ok(behavior[2])
                    elif behavior[0] == "ok":
                        self._reply_ok(behavior[1])
                    else:
                        self.send_response(behavior[1])
                        self.send_header("Content-Type", "application/json")
                        self.end_headers()
                        self.wfile.write(b'{"error": "scripted"}')
                finally:
                    with endpoint._lock:
                        endpoint.in_flight -= 1

            def _reply_ok(self, text: str):
                body = json.dumps(
                    {"choices": [{"message": {"role": "assistant", "content": text}}]}
                ).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self) -> "MockEndpoint":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._server.shutdown()
        self._server.server_close()
