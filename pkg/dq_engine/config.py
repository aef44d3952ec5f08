"""
Engine configuration.

Precedence, highest first:

    CLI flag            --workers 8
    environment         DQ_WORKERS=8, DQ_BUDGET_MAX_RETRIEVER_CALLS=6
    TOML config file    [budget] max_retriever_calls = 6
    defaults            the field defaults below

The backend token is only ever read from the environment variable named by
backend.token_env.
"""
import json
import logging
import os
import sys
from pathlib import Path
from typing import Literal, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from django.conf import settings
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from dq_engine.exceptions import ConfigError
from dq_engine.models import Budget, EpisodeLimits, ScorerConfig

logger = logging.getLogger(__name__)


class ConfigSection(BaseModel):
    model_config = ConfigDict(extra='forbid')


class BackendConfig(ConfigSection):
    url: Optional[str] = None
    token_env: str = 'DQ_BACKEND_TOKEN'
    model: str = 'dq-policy'
    max_in_flight: int = Field(default=4, ge=1)
    timeout: float = Field(default=60.0, gt=0)
    # Passed through to the chat-completion request untouched (temperature, top_p, ...)
    params: dict = Field(default_factory=dict)

    def token(self):
        return os.environ.get(self.token_env) or None


class PolicyConfig(ConfigSection):
    retries: int = Field(default=2, ge=0)


class BudgetConfig(ConfigSection):
    max_retriever_calls: int = Field(default=10, ge=0)
    max_entries_per_call: int = Field(default=5, ge=1, le=5)

    def to_budget(self):
        return Budget(max_retriever_calls=self.max_retriever_calls,
                      max_entries_per_call=self.max_entries_per_call)


class LimitsConfig(ConfigSection):
    max_depth: int = Field(default=4, ge=1)
    max_steps: int = Field(default=25, ge=1)

    def to_limits(self):
        return EpisodeLimits(max_depth=self.max_depth, max_steps=self.max_steps)


class WikiConfig(ConfigSection):
    backend: Literal['offline', 'mediawiki'] = 'offline'
    api_url: str = 'https://en.wikipedia.org/w/api.php'
    user_agent: str = 'dq-engine/1.0 (question answering research; set DQ_WIKI_USER_AGENT)'
    min_interval: float = Field(default=0.1, ge=0)
    page_chars: int = Field(default=1200, ge=1)
    timeout: float = Field(default=10.0, gt=0)
    attempts: int = Field(default=3, ge=1)
    backoff: float = Field(default=0.5, ge=0)


class ScorerSection(ConfigSection):
    kind: Literal['heuristic', 'http'] = 'heuristic'
    epsilon1: float = Field(default=0.5, ge=0, le=1)
    epsilon2: float = Field(default=0.5, ge=0, le=1)
    top_k: int = Field(default=50000, ge=1)
    gec_url: Optional[str] = None
    intent_url: Optional[str] = None

    def to_scorer_config(self):
        return ScorerConfig(epsilon1=self.epsilon1, epsilon2=self.epsilon2, top_k=self.top_k)


class AggregationConfig(ConfigSection):
    backend: Literal['heuristic', 'llm'] = 'heuristic'
    classifier: Literal['heuristic', 'llm'] = 'heuristic'
    jaccard_threshold: float = Field(default=0.3, ge=0, le=1)
    # Use the heuristic clustering when the LLM output is not a valid partition
    fallback: bool = True


class PathsConfig(ConfigSection):
    base: Optional[str] = None
    corpus: Optional[str] = None
    output: Optional[str] = None


class DQConfig(ConfigSection):
    toolset: Literal['chitchat', 'wiki'] = 'wiki'
    workers: int = Field(default=8, ge=1)
    log_level: Literal['DEBUG', 'INFO', 'WARNING', 'ERROR'] = 'INFO'
    log_format: Literal['verbose', 'json'] = 'verbose'
    backend: BackendConfig = Field(default_factory=BackendConfig)
    policy: PolicyConfig = Field(default_factory=PolicyConfig)
    budget: BudgetConfig = Field(default_factory=BudgetConfig)
    limits: LimitsConfig = Field(default_factory=LimitsConfig)
    wiki: WikiConfig = Field(default_factory=WikiConfig)
    scorer: ScorerSection = Field(default_factory=ScorerSection)
    aggregation: AggregationConfig = Field(default_factory=AggregationConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    def to_dict(self):
        return self.model_dump(mode='json')

    @classmethod
    def from_dict(cls, data):
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(_describe(e))


SECTIONS = ('backend', 'policy', 'budget', 'limits', 'wiki', 'scorer', 'aggregation', 'paths')
TOP_LEVEL_KEYS = ('toolset', 'workers', 'log_level', 'log_format')


def _describe(error):
    first = error.errors()[0]
    dotted = '.'.join(str(part) for part in first['loc'])
    if first['type'] == 'extra_forbidden':
        return f"unknown config key '{dotted}'"
    return f"invalid value for '{dotted}': {first['msg']}"


def _deep_merge(base, override):
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def set_dotted(data, dotted_key, value):
    parts = dotted_key.split('.')
    target = data
    for part in parts[:-1]:
        target = target.setdefault(part, {})
    target[parts[-1]] = value
    return data


def read_config_file(path):
    path = Path(path)
    try:
        with path.open('rb') as f:
            return tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML in {path}: {e}")


def env_overrides(environ=None, prefix=None):
    """
    Nested dict of config values taken from DQ_<SECTION>_<KEY> variables.

    Only variables naming a known key are used; anything else with the
    prefix (DQ_CONFIG_FILE, the token variable) is left alone.
    """
    environ = os.environ if environ is None else environ
    prefix = prefix or getattr(settings, 'DQ_ENV_PREFIX', 'DQ_')
    overrides = {}

    for name, raw in environ.items():
        if not name.startswith(prefix):
            continue
        key = name[len(prefix):].lower()
        if key in TOP_LEVEL_KEYS:
            overrides[key] = raw
            continue
        for section in SECTIONS:
            if not key.startswith(section + '_'):
                continue
            field_name = key[len(section) + 1:]
            section_model = DQConfig.model_fields[section].annotation
            if field_name not in section_model.model_fields:
                continue
            value = raw
            if section_model.model_fields[field_name].annotation is dict:
                try:
                    value = json.loads(raw)
                except json.JSONDecodeError:
                    raise ConfigError(f"{name} must hold a JSON object")
            overrides.setdefault(section, {})[field_name] = value
    return overrides


def load_config(path=None, cli_overrides=None, environ=None):
    """
    Build the effective DQConfig.

    cli_overrides maps dotted keys ('budget.max_retriever_calls') to values;
    None values mean "flag not given" and are skipped.
    """
    data = {}
    path = path or getattr(settings, 'DQ_CONFIG_FILE', '')
    if path:
        data = read_config_file(path)
        logger.debug(f"Loaded config file {path}")

    data = _deep_merge(data, env_overrides(environ))

    for dotted_key, value in (cli_overrides or {}).items():
        if value is not None:
            set_dotted(data, dotted_key, value)

    return DQConfig.from_dict(data)
