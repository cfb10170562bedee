import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import pytest

from hiro.corpus import Corpus, Entity, Review, Sentence, build_tfidf, ingest, tokenize

REPO_ROOT = Path(__file__).resolve().parent.parent
DATA_DIR = REPO_ROOT / "data"
GOLDEN_DIR = Path(__file__).resolve().parent / "golden"

_criterion_results: dict[int, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(n, name): tag a test as part of acceptance criterion n"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call":
        marker = item.get_closest_marker("criterion")
        if marker:
            _criterion_results.setdefault(marker.args[0], []).append(report.passed)
            item.config._criterion_names = getattr(item.config, "_criterion_names", {})
            item.config._criterion_names[marker.args[0]] = marker.args[1]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_results:
        return
    names = getattr(config, "_criterion_names", {})
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criterion_results):
        outcomes = _criterion_results[n]
        status = "PASS" if all(outcomes) else "FAIL"
        detail = f" ({sum(outcomes)}/{len(outcomes)} checks)" if not all(outcomes) else ""
        terminalreporter.write_line(f"criterion {n:2d} [{names.get(n, '')}]: {status}{detail}")


@pytest.fixture(scope="session")
def toy_corpus():
    return ingest(DATA_DIR / "toy_reviews.jsonl")


@pytest.fixture(scope="session")
def toy_vectorizer(toy_corpus):
    return build_tfidf(toy_corpus)


def make_corpus(entity_reviews: dict[str, list[list[str]]]) -> Corpus:
    """Build a corpus from {entity_id: [review sentences, ...]} literals."""
    entities, reviews, sentences = [], [], []
    for eid, review_texts in entity_reviews.items():
        rids = []
        for r, texts in enumerate(review_texts):
            rid = f"{eid}/r{r}"
            sids = []
            for i, text in enumerate(texts):
                sid = f"{eid}/r{r}/{i}"
                sentences.append(Sentence(sid, eid, rid, text, tuple(tokenize(text))))
                sids.append(sid)
            reviews.append(Review(rid, eid, tuple(sids)))
            rids.append(rid)
        entities.append(Entity(eid, eid, tuple(rids)))
    return Corpus(entities, reviews, sentences)


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else {}
        self.server.requests.append(
            {"path": self.path, "body": body, "headers": dict(self.headers)}
        )
        status, payload = self.server.responder(self.path, body, len(self.server.requests))
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


class StubServer:
    """In-process HTTP stub whose responder callable scripts each reply."""

    def __init__(self, responder):
        self.server = HTTPServer(("127.0.0.1", 0), _StubHandler)
        self.server.responder = responder
        self.server.requests = []
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    @property
    def url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}"

    @property
    def requests(self):
        return self.server.requests

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
