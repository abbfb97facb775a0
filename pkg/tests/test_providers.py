from __future__ import annotations

import json
import math
import threading
from pathlib import Path

import pytest

from conftest import make_client
from docbench.errors import DimensionMismatch, ProviderRefusal, TraceMiss, TransportError
from docbench.providers import (
    ChatExchange,
    EmbeddingVector,
    HashEmbeddingBackend,
    MockChatBackend,
    ModelSpec,
    ProviderClient,
    RecordedTrace,
    ReplayChatBackend,
    ReplayEmbeddingBackend,
    RetryPolicy,
    Role,
    TickClock,
    TraceWriter,
    run_cost,
)
from docbench.providers.backends import BackendReply

GEN = ModelSpec(model_id="gen-x", family="mock", role=Role.GENERATOR)
EMB = ModelSpec(model_id="emb-x", family="mock", role=Role.EMBEDDER)


class FlakyBackend:
    def __init__(self, failures: int, refusal: bool = False):
        self.failures = failures
        self.refusal = refusal
        self.calls = 0

    def complete(self, model, prompt, seed):
        self.calls += 1
        if self.calls <= self.failures:
            if self.refusal:
                raise ProviderRefusal("no")
            raise TransportError("down")
        return BackendReply(text="recovered")


class CountingBackend:
    """Tracks the maximum number of concurrent in-flight calls."""

    def __init__(self):
        self.lock = threading.Lock()
        self.in_flight = 0
        self.max_in_flight = 0
        self.barrier_calls = 0

    def complete(self, model, prompt, seed):
        with self.lock:
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
        try:
            for _ in range(2000):
                pass
            return BackendReply(text=f"reply to {prompt}")
        finally:
            with self.lock:
                self.in_flight -= 1


# --- mock determinism ---------------------------------------------------------


def test_mock_chat_deterministic():
    backend = MockChatBackend(seed=7)
    prompt = "<source_text>\nThe Tern entered service in 1998 and carries 220 passengers.\n</source_text>\n<question>\nWhat is the Tern?\n</question>"
    a = backend.complete(GEN, prompt, 7).text
    b = backend.complete(GEN, prompt, 7).text
    assert a == b
    other_prompt = prompt.replace("Tern", "Petrel")
    assert backend.complete(GEN, prompt, 8).text != a or backend.complete(GEN, other_prompt, 7).text != a


def test_mock_scripted_response_is_byte_exact(data_dir: Path):
    script = json.loads((data_dir / "mock_script.json").read_text())
    backend = MockChatBackend(seed=7, script=script)
    prompt = "List the questions for the canned corpus."
    reply = backend.complete(GEN, prompt, 7)
    assert reply.text == script["generator:eee1047194f3b490"]


def test_chat_empty_prompt_rejected(mock_client: ProviderClient):
    with pytest.raises(ValueError):
        mock_client.chat(GEN, "")


def test_chat_embedder_role_rejected(mock_client: ProviderClient):
    with pytest.raises(ValueError):
        mock_client.chat(EMB, "hello")


# --- embeddings ----------------------------------------------------------------


def test_embed_identical_texts_identical_vectors(mock_client: ProviderClient):
    out = mock_client.embed(EMB, ["same text", "same text"])
    assert out[0].vector == out[1].vector


def test_embed_single_text_dimension(mock_client: ProviderClient):
    (vec,) = mock_client.embed(EMB, ["a"])
    assert len(vec.vector) == 32
    assert math.isclose(vec.norm, 1.0, rel_tol=1e-9)


def test_embed_batch_matches_single_calls(mock_client: ProviderClient):
    texts = ["alpha beta", "gamma delta", "epsilon zeta"]
    batch = mock_client.embed(EMB, texts)
    singles = [mock_client.embed(EMB, [t])[0] for t in texts]
    for b, s in zip(batch, singles):
        dot = sum(x * y for x, y in zip(b.vector, s.vector))
        assert math.isclose(dot / (b.norm * s.norm), 1.0, rel_tol=1e-12)


def test_embed_rejects_empty_texts(mock_client: ProviderClient):
    with pytest.raises(ValueError):
        mock_client.embed(EMB, [])
    with pytest.raises(ValueError):
        mock_client.embed(EMB, ["ok", ""])


def test_embed_dimension_mismatch_detected():
    class BadEmbedder:
        def embed_batch(self, model, texts):
            return [[1.0, 0.0], [1.0, 0.0, 0.0]]

    client = make_client(embedding_backend=BadEmbedder())
    with pytest.raises(DimensionMismatch):
        client.embed(EMB, ["a", "b"])


def test_embedding_vector_norm_invariant():
    vec = EmbeddingVector.from_values("s", [3.0, 4.0])
    assert math.isclose(vec.norm, 5.0, rel_tol=1e-12)
    with pytest.raises(ValueError):
        EmbeddingVector(source_id="s", vector=(3.0, 4.0), norm=4.9)


# --- retry and errors -------------------------------------------------------------


def test_retry_recovers_after_transient_failures():
    sleeps: list[float] = []
    backend = FlakyBackend(failures=2)
    client = ProviderClient(
        chat_backend=backend,
        embedding_backend=HashEmbeddingBackend(dim=8),
        clock=TickClock(),
        sleep=sleeps.append,
        retry=RetryPolicy(attempts=3, backoffs_s=(1.0, 4.0, 16.0)),
    )
    exchange = client.chat(GEN, "hello")
    assert exchange.response_text == "recovered"
    assert backend.calls == 3
    assert sleeps == [1.0, 4.0]


def test_retry_exhaustion_raises_and_traces(tmp_path: Path):
    trace_path = tmp_path / "trace.jsonl"
    with TraceWriter(trace_path) as trace:
        client = ProviderClient(
            chat_backend=FlakyBackend(failures=10),
            embedding_backend=HashEmbeddingBackend(dim=8),
            trace=trace,
            clock=TickClock(),
            sleep=lambda _s: None,
            retry=RetryPolicy(attempts=3, backoffs_s=(0, 0, 0)),
        )
        with pytest.raises(TransportError):
            client.chat(GEN, "hello")
    lines = trace_path.read_text().splitlines()
    assert len(lines) == 1
    record = json.loads(lines[0])
    assert record["error"] is not None and record["response_text"] == ""


def test_refusal_not_retried():
    backend = FlakyBackend(failures=10, refusal=True)
    client = make_client(chat_backend=backend)
    with pytest.raises(ProviderRefusal):
        client.chat(GEN, "hello")
    assert backend.calls == 1


# --- cost accounting -----------------------------------------------------------


def _exchange(model_id: str, output_tokens: int) -> ChatExchange:
    return ChatExchange(
        model_id=model_id,
        prompt_text="p",
        response_text="r",
        input_tokens=1,
        output_tokens=output_tokens,
        latency_ms=0,
        timestamp="2025-01-01T00:00:00.000Z",
    )


def test_run_cost_zero_price():
    report = run_cost([_exchange("m", 1000)], {"m": 0.0})
    assert report.costs == {"m": 0.0}


def test_run_cost_empty():
    report = run_cost([], {})
    assert report.costs == {} and report.unpriced_output_tokens == {}


def test_run_cost_hand_arithmetic():
    exchanges = [_exchange("m", 200), _exchange("m", 300)]
    report = run_cost(exchanges, {"m": 0.002})
    assert math.isclose(report.costs["m"], 1.0, rel_tol=1e-12)


def test_run_cost_unpriced_reported():
    report = run_cost([_exchange("mystery", 50)], {})
    assert report.costs == {}
    assert report.unpriced_output_tokens == {"mystery": 50}


# --- trace and replay -------------------------------------------------------------


def test_trace_line_count_matches_calls(tmp_path: Path):
    trace_path = tmp_path / "trace.jsonl"
    with TraceWriter(trace_path) as trace:
        client = make_client(trace=trace)
        client.chat(GEN, "one")
        client.chat(GEN, "two")
        client.embed(EMB, ["a", "b"])
        assert trace.line_count == 3
    assert len(trace_path.read_text().splitlines()) == 3


def test_identical_runs_produce_byte_identical_traces(tmp_path: Path):
    def run(path: Path) -> bytes:
        with TraceWriter(path) as trace:
            client = make_client(trace=trace, seed=11)
            client.chat(GEN, "alpha")
            client.embed(EMB, ["beta"])
        return path.read_bytes()

    assert run(tmp_path / "a.jsonl") == run(tmp_path / "b.jsonl")


def test_concurrent_calls_respect_max_in_flight_and_trace_integrity(tmp_path: Path):
    backend = CountingBackend()
    model = ModelSpec(model_id="gen-c", family="mock", role=Role.GENERATOR, max_in_flight=3)
    trace_path = tmp_path / "trace.jsonl"
    with TraceWriter(trace_path) as trace:
        client = ProviderClient(
            chat_backend=backend,
            embedding_backend=HashEmbeddingBackend(dim=8),
            trace=trace,
            clock=TickClock(),
            sleep=lambda _s: None,
        )
        threads = [
            threading.Thread(target=client.chat, args=(model, f"prompt {i}")) for i in range(24)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    assert backend.max_in_flight <= 3
    lines = trace_path.read_text().splitlines()
    assert len(lines) == 24
    prompts = {json.loads(line)["prompt_text"] for line in lines}
    assert prompts == {f"prompt {i}" for i in range(24)}


def test_replay_round_trip(tmp_path: Path):
    trace_path = tmp_path / "trace.jsonl"
    with TraceWriter(trace_path) as trace:
        client = make_client(trace=trace, seed=5)
        original = client.chat(GEN, "replay me").response_text
        vectors = [v.vector for v in client.embed(EMB, ["x", "y"])]

    recorded = RecordedTrace.load(trace_path)
    replay_client = make_client(
        chat_backend=ReplayChatBackend(recorded),
        embedding_backend=ReplayEmbeddingBackend(recorded),
        seed=5,
    )
    assert replay_client.chat(GEN, "replay me").response_text == original
    assert [v.vector for v in replay_client.embed(EMB, ["x", "y"])] == vectors


def test_replay_miss_names_fingerprint(tmp_path: Path):
    trace_path = tmp_path / "trace.jsonl"
    with TraceWriter(trace_path) as trace:
        client = make_client(trace=trace)
        client.chat(GEN, "known")
    recorded = RecordedTrace.load(trace_path)
    replay_client = make_client(chat_backend=ReplayChatBackend(recorded))
    with pytest.raises(TraceMiss) as exc_info:
        replay_client.chat(GEN, "unknown prompt")
    assert exc_info.value.fingerprint in str(exc_info.value)
