"""Shared test helpers: fixture paths and scripted engines"""
import json
from pathlib import Path

from dq_engine.models import Budget, EpisodeLimits
from dq_engine.services.policy_service import ScriptedPolicy
from dq_engine.services.search_engine import SearchEngine

FIXTURES = Path(__file__).resolve().parent / 'fixtures'


def fixture_path(name):
    return FIXTURES / name


def read_fixture_json(name):
    with fixture_path(name).open(encoding='utf-8') as f:
        return json.load(f)


def scripted_engine(lines, registry, toolset='wiki', budget=None, limits=None):
    policy = ScriptedPolicy.from_lines(lines, toolset)
    return SearchEngine(policy, registry, budget or Budget(), limits or EpisodeLimits())


class RecordingPolicy:
    """Wraps a policy and keeps every PolicyContext it was asked with"""

    def __init__(self, policy):
        self.policy = policy
        self.contexts = []

    def next_action(self, ctx):
        self.contexts.append(ctx)
        return self.policy.next_action(ctx)
