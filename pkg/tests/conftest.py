import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from hetg.graph import TextGraph, save_graph


def make_graph(labels, edges, classes=None, texts=None):
    n = len(labels)
    classes = classes or [f"c{i}" for i in range(max(labels) + 1)]
    texts = texts or [f"node {i}" for i in range(n)]
    return TextGraph.build(texts, labels, edges, classes)


def random_graph(n, p, n_classes, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_classes, n)
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    return make_graph(list(labels), edges, [f"c{i}" for i in range(n_classes)])


@pytest.fixture
def dataset_files(tmp_path):
    """Write a graph to the on-disk trio and return the three paths."""

    def _write(graph, name="g"):
        paths = tuple(tmp_path / f"{name}.{ext}" for ext in ("jsonl", "tsv", "txt"))
        save_graph(graph, *paths)
        return paths

    return _write


class MockChatServer:
    """Local chat-completions endpoint replaying scripted responses.

    ``script`` items are ``(status, body)`` where ``body`` is a reply string
    (wrapped into a chat-completion JSON) or raw ``bytes`` sent verbatim.
    Once the script is exhausted the last item repeats.
    """

    def __init__(self):
        self.script = [(200, "Yes")]
        self.requests = []
        self.lock = threading.Lock()
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(length)
                with server.lock:
                    server.requests.append({"path": self.path, "headers": dict(self.headers), "body": body})
                    idx = min(len(server.requests) - 1, len(server.script) - 1)
                    status, payload = server.script[idx]
                if isinstance(payload, str):
                    payload = json.dumps({"choices": [{"message": {"role": "assistant", "content": payload}}]}).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def chat_server():
    server = MockChatServer()
    yield server
    server.close()


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv("HETG_API_KEY", "test-key-123")
    return "test-key-123"
