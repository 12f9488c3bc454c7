"""Shared fixtures: a tiny threaded HTTP server that speaks the
embeddings and chat-completions wire formats, with scriptable failures."""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest


class ScriptedApiServer:
    """Serves deterministic embeddings/chat replies; can be told to fail
    or stall for the first N requests."""

    def __init__(self):
        self.requests: list[dict] = []
        self.fail_next = 0          # respond 500 to this many requests
        self.fail_status = 500
        self.stall_first = 0.0      # sleep this long on the very first request
        self.embed_dim = 4
        self.dim_per_request: list[int] = []  # override dim per request order
        self.lock = threading.Lock()
        self._count = 0

        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                with outer.lock:
                    outer.requests.append({
                        "path": self.path,
                        "body": body,
                        "auth": self.headers.get("Authorization"),
                    })
                    idx = outer._count
                    outer._count += 1
                    fail = outer.fail_next > 0
                    if fail:
                        outer.fail_next -= 1
                if idx == 0 and outer.stall_first:
                    time.sleep(outer.stall_first)
                if fail:
                    self.send_response(outer.fail_status)
                    self.end_headers()
                    self.wfile.write(b"scripted failure")
                    return
                if "input" in body:
                    reply = outer._embed_reply(body, idx)
                else:
                    reply = outer._chat_reply(body)
                payload = json.dumps(reply).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    def _embed_reply(self, body: dict, idx: int) -> dict:
        dim = self.embed_dim
        if idx < len(self.dim_per_request):
            dim = self.dim_per_request[idx]
        data = []
        for i, text in enumerate(body["input"]):
            rng = np.random.default_rng(abs(hash(text)) % (2**32))
            vec = rng.normal(size=dim)
            data.append({"index": i, "embedding": [float(x) for x in vec]})
        return {"data": data}

    def _chat_reply(self, body: dict) -> dict:
        user = body["messages"][-1]["content"]
        return {"choices": [{"message": {"content": f"echo:{user[:40]}"},
                             "finish_reason": "stop"}]}

    @property
    def url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}/v1"

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def api_server():
    server = ScriptedApiServer()
    yield server
    server.close()
