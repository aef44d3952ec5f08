from pathlib import Path

from django.core.management.base import CommandError

from dq_engine.management.base import RUNTIME_FAILURE, DQBaseCommand
from dq_engine.models import Termination
from dq_engine.serializers import TrajectorySerializer
from dq_engine.services.policy_service import build_policy
from dq_engine.services.search_engine import SearchEngine, ToolRegistry
from dq_engine.utils.jsonl import dumps_line


def read_script(path):
    """One action per line; blank lines are skipped"""
    with Path(path).open(encoding='utf-8') as f:
        return [line.rstrip('\n') for line in f if line.strip()]


def add_engine_arguments(parser):
    parser.add_argument('--toolset', choices=['chitchat', 'wiki'], default=None)
    parser.add_argument('--backend', choices=['offline', 'mediawiki'], default=None,
                        help='Wiki backend: frozen corpus or a live MediaWiki API')
    parser.add_argument('--corpus', default=None, help='Corpus JSONL for the offline wiki backend')
    parser.add_argument('--base', default=None, help='QA base directory for the ChitChat toolset')
    parser.add_argument('--max-retriever-calls', type=int, default=None)
    parser.add_argument('--max-entries-per-call', type=int, default=None)
    parser.add_argument('--max-depth', type=int, default=None)
    parser.add_argument('--max-steps', type=int, default=None)


def engine_overrides(options):
    return {
        'toolset': options['toolset'],
        'wiki.backend': options['backend'],
        'paths.corpus': options['corpus'],
        'paths.base': options['base'],
        'budget.max_retriever_calls': options['max_retriever_calls'],
        'budget.max_entries_per_call': options['max_entries_per_call'],
        'limits.max_depth': options['max_depth'],
        'limits.max_steps': options['max_steps'],
    }


class Command(DQBaseCommand):
    help = 'Run one Decompose-and-Query episode and print the final answer'

    def add_command_arguments(self, parser):
        parser.add_argument('--question', required=True)
        add_engine_arguments(parser)
        parser.add_argument('--script', default=None,
                            help='Scripted policy: file with one action per line (default: chat backend)')
        parser.add_argument('--out', default=None, help='Append the trajectory to this JSONL file')

    def config_overrides(self, options):
        overrides = engine_overrides(options)
        overrides['paths.output'] = options['out']
        return overrides

    def run(self, config, **options):
        registry = ToolRegistry.from_config(config)
        script = read_script(options['script']) if options['script'] else None
        policy = build_policy(config, script_lines=script)

        engine = SearchEngine(policy, registry, config.budget.to_budget(), config.limits.to_limits())
        result = engine.run(options['question'])

        if config.paths.output:
            output = Path(config.paths.output)
            output.parent.mkdir(parents=True, exist_ok=True)
            with output.open('a', encoding='utf-8', newline='\n') as f:
                f.write(dumps_line(TrajectorySerializer(result.trajectory).data) + '\n')

        self.stdout.write(result.prediction)
        if result.termination != Termination.FINISHED:
            raise CommandError(
                f"episode ended {result.termination.value} after {result.budget.calls_used} retriever calls",
                returncode=RUNTIME_FAILURE,
            )
