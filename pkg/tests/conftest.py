"""Shared fixtures: offline guard, providers, and bundled fixture loaders.

The whole suite runs with outbound sockets disabled, so anything that would
touch the network fails loudly; remote-provider behavior is exercised through
injected transport stubs.
"""
from __future__ import annotations

import json
import os
import socket

import numpy as np
import pytest
from hypothesis import settings

from layman_eval.embedkit import EmbeddingProvider, LocalHashProvider

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")

settings.register_profile("suite", max_examples=50, deadline=None)
settings.load_profile("suite")


@pytest.fixture(scope="session", autouse=True)
def no_network():
    """Fail any test that tries to open a network connection."""

    def blocked(*args, **kwargs):
        raise RuntimeError("network access is disabled in the test suite")

    original_connect = socket.socket.connect
    original_create = socket.create_connection
    socket.socket.connect = blocked
    socket.create_connection = blocked
    try:
        yield
    finally:
        socket.socket.connect = original_connect
        socket.create_connection = original_create


@pytest.fixture()
def local_provider():
    return LocalHashProvider(dim=256)


def load_fixture(name: str):
    path = os.path.join(DATA_DIR, name)
    if name.endswith(".jsonl"):
        with open(path, "r", encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def fixture_path(name: str) -> str:
    return os.path.join(DATA_DIR, name)


class CountingProvider(EmbeddingProvider):
    """Local embeddings with fetch-call accounting, for batching tests."""

    def __init__(self, dim: int = 64, max_batch: int = 50):
        self.dim = dim
        self.max_batch = max_batch
        self.provider_id = f"counting-{dim}"
        self._inner = LocalHashProvider(dim=dim)
        self.calls = 0
        self.batch_sizes: list[int] = []

    def fetch(self, texts):
        self.calls += 1
        self.batch_sizes.append(len(texts))
        return self._inner.fetch(texts)


class GroupProvider(EmbeddingProvider):
    """Embeds known sentences as group-plus-identity vectors.

    Sentences in the same group score ~0.9025 against each other, identical
    sentences score 1.0, and different groups score 0.0. Unknown sentences
    are an error so fixture gaps surface immediately.
    """

    ALPHA = 0.95

    def __init__(self, labels: dict[str, str]):
        # labels: normalized sentence -> group name
        self.labels = {" ".join(k.split()): v for k, v in labels.items()}
        groups = sorted(set(self.labels.values()))
        sentences = sorted(self.labels)
        self._group_slot = {g: i for i, g in enumerate(groups)}
        self._uid_slot = {s: len(groups) + i for i, s in enumerate(sentences)}
        self.dim = len(groups) + len(sentences)
        self.max_batch = 1024
        self.provider_id = "fixture-groups"
        self._beta = float(np.sqrt(1.0 - self.ALPHA**2))

    def fetch(self, texts):
        out = []
        for text in texts:
            key = " ".join(text.split())
            if key not in self.labels:
                raise KeyError(f"no fixture label for sentence: {text!r}")
            values = np.zeros(self.dim)
            values[self._group_slot[self.labels[key]]] = self.ALPHA
            values[self._uid_slot[key]] = self._beta
            out.append(values.tolist())
        return out


class ScriptedProvider(EmbeddingProvider):
    """Returns hand-picked vectors per sentence."""

    def __init__(self, vectors: dict[str, list[float]], provider_id: str = "scripted"):
        self.vectors = {" ".join(k.split()): v for k, v in vectors.items()}
        dims = {len(v) for v in self.vectors.values()}
        if len(dims) != 1:
            raise ValueError("all scripted vectors must share a dimension")
        self.dim = dims.pop()
        self.max_batch = 1024
        self.provider_id = provider_id

    def fetch(self, texts):
        return [list(self.vectors[" ".join(t.split())]) for t in texts]


@pytest.fixture()
def diagnostic_sets():
    return load_fixture("diagnostic_sets.json")


@pytest.fixture()
def diagnostic_provider(diagnostic_sets):
    labels: dict[str, str] = {}
    for subset in ("ds_se", "ss_de"):
        for pair in diagnostic_sets[subset]:
            labels[pair["candidate"]] = pair["candidate_group"]
            labels[pair["candidate_layman"]] = pair["candidate_group"]
            labels[pair["reference"]] = pair["reference_group"]
            labels[pair["reference_layman"]] = pair["reference_group"]
    return GroupProvider(labels)


@pytest.fixture()
def mock_chat():
    from layman_eval.datapipe import MockGlossaryProvider

    return MockGlossaryProvider.from_files(
        fixture_path("glossary.json"), fixture_path("fixes.json")
    )
