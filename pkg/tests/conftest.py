import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
TEST_DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def sarif_schema() -> dict:
    return json.loads((TEST_DATA / "sarif-2.1.0-subset.schema.json").read_text())


class ChatStub:
    """Scripted chat-completion endpoint for triage tests.

    Each queued script entry answers one POST:
      - a str: returned as choices[0].message.content
      - an int: returned as a bare HTTP status with empty body
      - ("sleep", seconds, content): delays before answering
    An exhausted script answers 500.
    """

    def __init__(self):
        self.script: list = []
        self.requests: list[dict] = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", "0"))
                body = self.rfile.read(length)
                stub.requests.append(
                    {
                        "path": self.path,
                        "headers": dict(self.headers),
                        "payload": json.loads(body) if body else None,
                    }
                )
                entry = stub.script.pop(0) if stub.script else 500
                if isinstance(entry, tuple) and entry[0] == "sleep":
                    time.sleep(entry[1])
                    entry = entry[2]
                if isinstance(entry, int):
                    self.send_response(entry)
                    self.send_header("Content-Length", "0")
                    self.end_headers()
                    return
                payload = json.dumps(
                    {"choices": [{"message": {"role": "assistant", "content": entry}}]}
                ).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}/v1/chat/completions"

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture()
def chat_stub():
    stub = ChatStub()
    yield stub
    stub.close()
