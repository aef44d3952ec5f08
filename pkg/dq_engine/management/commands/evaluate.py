from pathlib import Path

from dq_engine.exceptions import ConfigError
from dq_engine.management.base import DQBaseCommand
from dq_engine.management.commands.run_episode import add_engine_arguments, engine_overrides
from dq_engine.models import Toolset
from dq_engine.serializers import EvalItemResultSerializer, EvalReportSerializer, TrajectorySerializer
from dq_engine.services.eval_service import load_hotpot, read_scripts, run_eval
from dq_engine.services.policy_service import ChatCompletionClient, build_policy
from dq_engine.services.search_engine import SearchEngine, ToolRegistry
from dq_engine.services.wiki_service import build_wiki_backend
from dq_engine.utils.jsonl import write_json, write_jsonl


class Command(DQBaseCommand):
    help = 'Evaluate the engine on a HotPotQA-format dataset (EM, F1, retrieval recall)'

    def add_command_arguments(self, parser):
        parser.add_argument('--dataset', required=True, help='HotPotQA JSON list or JSONL')
        add_engine_arguments(parser)
        parser.add_argument('--workers', type=int, default=None, help='Items evaluated concurrently')
        parser.add_argument('--scripts', default=None,
                            help='Scripted policies: JSONL of {"id", "actions"} (default: chat backend)')
        parser.add_argument('--baseline', action='store_true',
                            help='Also score a single retrieval with the initial question')
        parser.add_argument('--out', required=True, help='Report JSON')
        parser.add_argument('--items-out', default=None,
                            help='Per-item JSONL (default: <out stem>.items.jsonl next to the report)')
        parser.add_argument('--trajectories', default=None, help='Write every trajectory to this JSONL file')

    def config_overrides(self, options):
        overrides = engine_overrides(options)
        overrides['workers'] = options['workers']
        overrides['paths.output'] = options['out']
        return overrides

    def run(self, config, **options):
        items = load_hotpot(options['dataset'])
        budget = config.budget.to_budget()
        limits = config.limits.to_limits()

        backend = None
        if config.toolset == Toolset.WIKI:
            backend = build_wiki_backend(config)
            registry = ToolRegistry.for_wiki(backend)
        else:
            registry = ToolRegistry.from_config(config)

        if options['scripts']:
            scripts = read_scripts(options['scripts'])

            def policy_for(item):
                # Items without a script fail as a policy failure
                return build_policy(config, script_lines=scripts.get(item.id, []))
        else:
            client = ChatCompletionClient.from_config(config.backend)

            def policy_for(item):
                return build_policy(config, client=client)

        def engine_factory(item):
            return SearchEngine(policy_for(item), registry, budget, limits)

        baseline = None
        if options['baseline']:
            if backend is None:
                raise ConfigError("--baseline needs the wiki toolset")
            baseline = (backend.search_titles, budget.max_retriever_calls * budget.max_entries_per_call)

        report, rows, results = run_eval(items, engine_factory, workers=config.workers, baseline=baseline)

        out = Path(config.paths.output)
        write_json(out, EvalReportSerializer(report).data)
        items_out = Path(options['items_out'] or out.with_name(f"{out.stem}.items.jsonl"))
        write_jsonl(items_out, (EvalItemResultSerializer(row).data for row in rows))
        if options['trajectories']:
            write_jsonl(options['trajectories'],
                        (TrajectorySerializer(result.trajectory).data for result in results if result is not None))

        self.stdout.write(
            f"EM {report['em']:.4f}  F1 {report['f1']:.4f}  recall {report['recall']}  "
            f"avg contexts {report['avg_contexts']:.2f}  n {report['n_items']}"
        )
