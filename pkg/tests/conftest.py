from __future__ import annotations

import json
from pathlib import Path

import pytest

from docbench.providers.backends import HashEmbeddingBackend, MockChatBackend
from docbench.providers.client import ProviderClient, RetryPolicy, TickClock

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def mock_client() -> ProviderClient:
    return ProviderClient(
        chat_backend=MockChatBackend(seed=7),
        embedding_backend=HashEmbeddingBackend(dim=32, seed=7),
        clock=TickClock(),
        sleep=lambda _s: None,
        retry=RetryPolicy(attempts=3, backoffs_s=(0.0, 0.0, 0.0)),
        default_seed=7,
    )


def make_client(chat_backend=None, embedding_backend=None, trace=None, seed: int = 7) -> ProviderClient:
    return ProviderClient(
        chat_backend=chat_backend or MockChatBackend(seed=seed),
        embedding_backend=embedding_backend or HashEmbeddingBackend(dim=32, seed=seed),
        trace=trace,
        clock=TickClock(),
        sleep=lambda _s: None,
        retry=RetryPolicy(attempts=3, backoffs_s=(0.0, 0.0, 0.0)),
        default_seed=seed,
    )


@pytest.fixture
def accuracy_table() -> dict:
    return json.loads((DATA_DIR / "replication_accuracy_pairs.json").read_text())
