"""Template and remote location-description generation."""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from georeason.linearizer import NormalizedCoord, PseudoSentence
from georeason.summarizer import (
    RemoteConfig,
    SummaryContext,
    SummaryError,
    find_anchor_span,
    split_sentences,
    summarize_remote,
    summarize_template,
)


def make_ctx(sentences=(), neighbors=("Plaza", "Art Museum", "City Hall", "Depot")):
    n = len(neighbors)
    pseudo = PseudoSentence(
        anchor_id="e1",
        anchor_name="Tech Museum",
        neighbor_names=list(neighbors),
        neighbor_coords=[NormalizedCoord(0.1 * i, 0.2 * i) for i in range(n)],
        distances_km=[0.3 + 0.1 * i for i in range(n)],
    )
    return SummaryContext(
        anchor_id="e1",
        anchor_name="Tech Museum",
        linguistic_sentences=list(sentences),
        pseudo=pseudo,
    )


class TestTemplate:
    def test_neighbors_only(self):
        desc = summarize_template(make_ctx(), max_sentences=2)
        assert desc.text == "Tech Museum is near Plaza, Art Museum, and City Hall."
        assert desc.anchor_span == (0, len("Tech Museum"))

    def test_single_sentence_passthrough(self):
        ctx = make_ctx(sentences=["The Tech Museum is in San Jose."], neighbors=())
        desc = summarize_template(ctx)
        assert desc.text == "The Tech Museum is in San Jose."

    def test_golden_output(self):
        ctx = make_ctx(
            sentences=[
                "The Tech Museum opened in 1998.",
                "Nothing about the anchor here.",
                "Families crowd the Tech Museum on rainy days.",
                "A third Tech Museum sentence that gets cut.",
            ]
        )
        golden = (
            "The Tech Museum opened in 1998. "
            "Families crowd the Tech Museum on rainy days. "
            "Tech Museum is near Plaza, Art Museum, and City Hall."
        )
        for _ in range(3):
            assert summarize_template(ctx, max_sentences=2).text == golden

    def test_two_neighbors_join(self):
        desc = summarize_template(make_ctx(neighbors=("Plaza", "Depot")))
        assert desc.text.endswith("is near Plaza and Depot.")

    def test_one_neighbor_join(self):
        desc = summarize_template(make_ctx(neighbors=("Plaza",)))
        assert desc.text.endswith("is near Plaza.")

    def test_anchor_span_invariant(self):
        ctx = make_ctx(sentences=["We toured the TECH MUSEUM yesterday."])
        desc = summarize_template(ctx, max_sentences=1)
        s, e = desc.anchor_span
        assert desc.text[s:e].casefold() == "tech museum"

    def test_empty_context_rejected(self):
        with pytest.raises(ValueError):
            summarize_template(make_ctx(sentences=(), neighbors=()))

    def test_anchor_absent_raises(self):
        # sentences never name the anchor and there are no neighbors
        ctx = make_ctx(sentences=["A sentence about something else."], neighbors=())
        with pytest.raises(SummaryError):
            summarize_template(ctx)


class TestHelpers:
    def test_split_sentences(self):
        text = "One here. Two there! Three? Trailing"
        assert split_sentences(text) == ["One here.", "Two there!", "Three?", "Trailing"]

    def test_find_anchor_span_case_folded(self):
        assert find_anchor_span("go to SAN jose now", "San Jose") == (6, 14)
        assert find_anchor_span("nothing", "San Jose") is None


class _Responder(BaseHTTPRequestHandler):
    canned = {"text": "canned"}
    calls = 0

    def do_POST(self):
        type(self).calls += 1
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        assert "prompt" in body
        payload = json.dumps(type(self).canned).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def mock_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Responder)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _Responder.calls = 0
    yield f"http://127.0.0.1:{server.server_port}/summarize"
    server.shutdown()


class TestRemote:
    def test_mock_server_response_used(self, mock_server):
        _Responder.canned = {"text": "The Tech Museum sits in downtown San Jose."}
        cfg = RemoteConfig(url=mock_server, timeout_s=5.0)
        desc = summarize_remote(make_ctx(), cfg)
        assert desc.text == "The Tech Museum sits in downtown San Jose."
        s, e = desc.anchor_span
        assert desc.text[s:e] == "Tech Museum"

    def test_missing_anchor_falls_back_to_template(self, mock_server):
        _Responder.canned = {"text": "A description of somewhere else entirely."}
        cfg = RemoteConfig(url=mock_server, timeout_s=5.0)
        desc = summarize_remote(make_ctx(), cfg)
        assert desc.text == summarize_template(make_ctx()).text

    def test_unreachable_endpoint_falls_back(self, caplog):
        cfg = RemoteConfig(url="http://127.0.0.1:9/nope", timeout_s=0.2)
        with caplog.at_level("WARNING"):
            desc = summarize_remote(make_ctx(), cfg)
        assert desc.text == summarize_template(make_ctx()).text
        assert any("using template" in r.message for r in caplog.records)

    def test_cache_avoids_second_request(self, mock_server, tmp_path):
        _Responder.canned = {"text": "Tech Museum, a landmark."}
        cfg = RemoteConfig(url=mock_server, timeout_s=5.0, cache_dir=tmp_path)
        first = summarize_remote(make_ctx(), cfg)
        calls_after_first = _Responder.calls
        second = summarize_remote(make_ctx(), cfg)
        assert _Responder.calls == calls_after_first
        assert first.text == second.text

    def test_from_env(self, monkeypatch):
        monkeypatch.delenv("GEOREASON_LLM_URL", raising=False)
        assert RemoteConfig.from_env() is None
        monkeypatch.setenv("GEOREASON_LLM_URL", "http://example.test")
        monkeypatch.setenv("GEOREASON_LLM_KEY", "k3y")
        cfg = RemoteConfig.from_env()
        assert cfg.url == "http://example.test"
        assert cfg.api_key == "k3y"
