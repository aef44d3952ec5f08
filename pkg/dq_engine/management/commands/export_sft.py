from dq_engine.management.base import DQBaseCommand
from dq_engine.models import ExportMode
from dq_engine.services.sft_export_service import export_file


class Command(DQBaseCommand):
    help = 'Convert recorded trajectories into supervised fine-tuning examples'

    def add_command_arguments(self, parser):
        parser.add_argument('--traj', required=True, help='Trajectory JSONL written by run or eval')
        parser.add_argument('--mode', choices=ExportMode.values, default=ExportMode.PER_ROUND.value,
                            help='per-round: one example per assistant turn; single-sequence: one per trajectory')
        parser.add_argument('--toolset', choices=['chitchat', 'wiki'], default=None,
                            help='Toolset the trajectories were recorded with (inferred from their tool calls)')
        parser.add_argument('--include-exhausted', action='store_true',
                            help='Keep rolled-back branches as untrained context')
        parser.add_argument('--out', required=True, help='SFT JSONL')

    def run(self, config, **options):
        count = export_file(
            options['traj'],
            options['out'],
            options['mode'],
            toolset=options['toolset'],
            caps=config.budget.to_budget(),
            include_exhausted=options['include_exhausted'],
        )
        self.stdout.write(f"Wrote {count} examples to {options['out']}")
