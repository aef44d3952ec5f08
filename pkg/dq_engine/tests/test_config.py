"""
Tests for configuration loading and precedence
"""
import json

import pytest

from dq_engine.config import BackendConfig, DQConfig, env_overrides, load_config
from dq_engine.exceptions import ConfigError
from dq_engine.models import Budget, EpisodeLimits


@pytest.fixture
def toml_file(tmp_path):
    path = tmp_path / 'dq.toml'
    path.write_text(
        'toolset = "chitchat"\n'
        'workers = 2\n'
        '\n'
        '[budget]\n'
        'max_retriever_calls = 6\n'
        '\n'
        '[wiki]\n'
        'page_chars = 800\n',
        encoding='utf-8',
    )
    return path


def test_defaults():
    config = load_config(environ={})
    assert config.toolset == 'wiki'
    assert config.workers == 8
    assert config.budget.to_budget() == Budget()
    assert config.limits.to_limits() == EpisodeLimits()
    assert config.scorer.to_scorer_config().top_k == 50000


def test_toml_then_env_then_cli(toml_file):
    config = load_config(toml_file, environ={})
    assert (config.toolset, config.workers, config.budget.max_retriever_calls) == ('chitchat', 2, 6)

    environ = {'DQ_BUDGET_MAX_RETRIEVER_CALLS': '7', 'DQ_WORKERS': '3'}
    config = load_config(toml_file, environ=environ)
    assert (config.workers, config.budget.max_retriever_calls) == (3, 7)
    assert config.wiki.page_chars == 800

    config = load_config(toml_file, cli_overrides={'budget.max_retriever_calls': 8, 'workers': None},
                         environ=environ)
    assert (config.workers, config.budget.max_retriever_calls) == (3, 8)


def test_unknown_and_invalid_keys(tmp_path):
    path = tmp_path / 'bad.toml'
    path.write_text('[budget]\nmax_calls = 3\n', encoding='utf-8')
    with pytest.raises(ConfigError) as excinfo:
        load_config(path, environ={})
    assert "budget.max_calls" in str(excinfo.value)

    path.write_text('[budget]\nmax_entries_per_call = 9\n', encoding='utf-8')
    with pytest.raises(ConfigError):
        load_config(path, environ={})

    with pytest.raises(ConfigError):
        load_config(environ={}, cli_overrides={'toolset': 'web'})


def test_missing_or_malformed_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / 'absent.toml', environ={})

    path = tmp_path / 'broken.toml'
    path.write_text('[budget\n', encoding='utf-8')
    with pytest.raises(ConfigError):
        load_config(path, environ={})


def test_env_overrides_only_known_keys():
    environ = {
        'DQ_CONFIG_FILE': '/tmp/x.toml',
        'DQ_BACKEND_TOKEN': 'secret',
        'DQ_BACKEND_URL': 'https://llm.test/v1/chat/completions',
        'DQ_BACKEND_PARAMS': '{"temperature": 0.2}',
        'DQ_NOT_A_SECTION': '1',
        'HOME': '/root',
    }
    assert env_overrides(environ) == {
        'backend': {'url': 'https://llm.test/v1/chat/completions', 'params': {'temperature': 0.2}},
    }

    with pytest.raises(ConfigError):
        env_overrides({'DQ_BACKEND_PARAMS': 'not json'})


def test_token_comes_only_from_named_variable(monkeypatch):
    monkeypatch.setenv('DQ_TEST_TOKEN', 'secret-token')
    backend = BackendConfig(token_env='DQ_TEST_TOKEN')
    assert backend.token() == 'secret-token'

    config = load_config(environ={'DQ_BACKEND_TOKEN_ENV': 'DQ_TEST_TOKEN'})
    assert config.backend.token() == 'secret-token'
    assert 'secret-token' not in json.dumps(config.to_dict())

    with pytest.raises(ConfigError):
        DQConfig.from_dict({'backend': {'token': 'inline-secret'}})


def test_to_dict_from_dict_fixpoint(toml_file):
    config = load_config(toml_file, environ={'DQ_BACKEND_PARAMS': '{"top_p": 0.9}'})
    assert DQConfig.from_dict(config.to_dict()) == config
    assert DQConfig.from_dict(config.to_dict()).to_dict() == config.to_dict()
