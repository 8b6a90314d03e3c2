import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest
from PIL import Image


class StubServer:
    """Minimal OpenAI-compatible endpoint.

    ``replies`` is consumed in order (the last entry repeats); an int entry
    is sent back as a bare HTTP status code.
    """

    def __init__(self, replies=("(0.5, 0.5)",)):
        self.replies = list(replies)
        self.requests = []
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                with stub._lock:
                    stub.requests.append({"path": self.path, "headers": dict(self.headers),
                                          "body": body})
                    reply = stub.replies[0] if len(stub.replies) == 1 else stub.replies.pop(0)
                if isinstance(reply, int):
                    self.send_response(reply)
                    self.end_headers()
                    return
                payload = json.dumps({"choices": [{"message": {"role": "assistant",
                                                               "content": reply}}]}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self):
        return f"http://127.0.0.1:{self.httpd.server_address[1]}/v1"

    @property
    def request_count(self):
        return len(self.requests)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def stub_server():
    servers = []

    def make(replies=("(0.5, 0.5)",)):
        s = StubServer(replies).__enter__()
        servers.append(s)
        return s

    yield make
    for s in servers:
        s.__exit__(None, None, None)


def random_image(w, h, seed=0):
    return np.random.default_rng(seed).integers(0, 256, size=(h, w, 3), dtype=np.uint8)


@pytest.fixture
def rgb_image():
    return random_image


def write_fixture_dataset(root: Path, records, size=(400, 300)):
    """Write one PNG per record plus a JSONL manifest; returns the manifest path."""
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, rec in enumerate(records):
        name = f"img_{i}.png"
        Image.fromarray(random_image(*size, seed=i)).save(root / name)
        lines.append(json.dumps({"id": rec.get("id", f"ex{i}"), "image": name,
                                 "instruction": rec.get("instruction", f"element {i}"),
                                 "bbox": rec["bbox"], "platform": rec["platform"],
                                 "element_type": rec["element_type"]}))
    manifest = root / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


SIX_CELLS = [(p, e) for p in ("mobile", "desktop", "web") for e in ("text", "icon")]


@pytest.fixture
def six_cell_manifest(tmp_path):
    """Two examples per platform x element-type cell, on 400x300 screenshots."""
    records = []
    for p, e in SIX_CELLS:
        records.append({"bbox": [40, 30, 120, 90], "platform": p, "element_type": e})
        records.append({"bbox": [250, 180, 330, 260], "platform": p, "element_type": e})
    return write_fixture_dataset(tmp_path / "ds", records)


# -- acceptance summary ----------------------------------------------------

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = dict(item.user_properties).get("detail", "")
        _CRITERIA[number] = (title, report.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[number]
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
