import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


class MockChatServer:
    """Local stand-in for a chat-completions endpoint.

    Responses are scripted with ``push``: an int enqueues that HTTP status
    with an empty body, a string enqueues a 200 completion whose message
    content is the string. Requests received are captured in ``requests``.
    """

    def __init__(self):
        self.responses = []
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                outer.requests.append(json.loads(self.rfile.read(length)))
                item = outer.responses.pop(0) if outer.responses else 500
                if isinstance(item, int):
                    self.send_response(item)
                    self.end_headers()
                    return
                body = json.dumps(
                    {"choices": [{"message": {"role": "assistant", "content": item}}]}
                ).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}/v1"

    def push(self, *items):
        self.responses.extend(items)

    def close(self):
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture
def mock_llm():
    server = MockChatServer()
    yield server
    server.close()
