"""
Command-line entrypoint: `python -m dq_engine <subcommand> [flags]`.

Each subcommand is a management command (`manage.py <command>` works too).
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
import os
import sys

import django
from django.core.management import call_command
from django.core.management.base import CommandError

SUBCOMMANDS = {
    'build-base': 'build_base',
    'aggregate': 'aggregate',
    'run': 'run_episode',
    'eval': 'evaluate',
    'export-sft': 'export_sft',
}

USAGE = """usage: dq <subcommand> [flags]

subcommands:
  build-base   build the reliable QA base from raw question-answer pairs
  aggregate    aggregate candidate answers (majority vote or viewpoints)
  run          run one episode and print the final answer
  eval         evaluate on a HotPotQA-format dataset
  export-sft   convert trajectories into fine-tuning examples

Run `dq <subcommand> --help` for the flags of a subcommand."""


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)

    if not argv:
        sys.stderr.write(USAGE + '\n')
        return 1
    if argv[0] in ('-h', '--help'):
        sys.stdout.write(USAGE + '\n')
        return 0
    command = SUBCOMMANDS.get(argv[0])
    if command is None:
        sys.stderr.write(f"Error: unknown subcommand '{argv[0]}'\n\n{USAGE}\n")
        return 1

    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'dq_project.settings')
    django.setup()
    try:
        call_command(command, *argv[1:])
    except SystemExit as e:
        # argparse --help
        return e.code if isinstance(e.code, int) else 0
    except CommandError as e:
        message = str(e)
        if not message.startswith('Error:'):
            message = f"Error: {message}"
        sys.stderr.write(message + '\n')
        return e.returncode
    return 0
