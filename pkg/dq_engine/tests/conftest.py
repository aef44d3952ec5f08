import json

import pytest

from dq_engine.serializers import CorpusDocSerializer, load
from dq_engine.services.search_engine import ToolRegistry
from dq_engine.services.wiki_service import OfflineCorpusBackend
from dq_engine.tests.helpers import fixture_path


@pytest.fixture
def corpus_docs():
    with fixture_path('corpus_two_hop.jsonl').open(encoding='utf-8') as f:
        return [load(CorpusDocSerializer, json.loads(line)) for line in f if line.strip()]


@pytest.fixture
def wiki_backend():
    return OfflineCorpusBackend.from_jsonl(fixture_path('corpus_two_hop.jsonl'))


@pytest.fixture
def wiki_registry(wiki_backend):
    return ToolRegistry.for_wiki(wiki_backend)
