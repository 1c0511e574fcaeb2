from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


class ScriptedHttpServer:
    """Tiny local HTTP endpoint whose POST behavior tests can swap out.

    ``behavior(path, body, headers) -> (status, payload)`` decides each
    response; every request is recorded on ``requests``.
    """

    def __init__(self):
        self.requests: list[dict] = []
        self.behavior = lambda path, body, headers: (200, {})
        self._lock = threading.Lock()

        server = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                try:
                    body = json.loads(raw) if raw else None
                except json.JSONDecodeError:
                    body = raw.decode("utf-8", errors="replace")
                with server._lock:
                    server.requests.append(
                        {
                            "path": self.path,
                            "body": body,
                            "headers": {k: v for k, v in self.headers.items()},
                        }
                    )
                status, payload = server.behavior(self.path, body, dict(self.headers))
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def close(self):
        self._httpd.shutdown()
        self._httpd.server_close()


@pytest.fixture
def http_server():
    server = ScriptedHttpServer()
    yield server
    server.close()


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES
