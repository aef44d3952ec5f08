"""
End-to-end tests through the dq command-line entrypoint
"""
import json
import logging
import sys

import pytest

from dq_engine.cli import main
from dq_engine.models import QARecord, QuestionType
from dq_engine.services.qa_base_service import QABaseStore
from dq_engine.tests.helpers import fixture_path, read_fixture_json

CORPUS = str(fixture_path('corpus_two_hop.jsonl'))
ORACLE = ["[ArticleRetriever] Zorblax Rising", "[Decompose] Who helmed Quintara Dawn?",
          "[PageRetriever] Quintara Dawn", "[Finish] Velma Okonkwo", "[Finish] Velma Okonkwo"]


@pytest.fixture(autouse=True)
def detach_log_handlers(capsys):
    """Commands bind log handlers to the captured stderr; point them back before capture closes"""
    yield
    for name in ('dq_engine', 'django'):
        for handler in logging.getLogger(name).handlers:
            if isinstance(handler, logging.StreamHandler):
                handler.setStream(sys.__stderr__)


def _script(tmp_path, lines, name='script.txt'):
    path = tmp_path / name
    path.write_text(''.join(f"{line}\n" for line in lines), encoding='utf-8')
    return str(path)


def _read_jsonl(path):
    return [json.loads(line) for line in path.read_text(encoding='utf-8').splitlines() if line.strip()]


def test_usage_errors(capsys):
    assert main([]) == 1
    assert "usage: dq" in capsys.readouterr().err

    assert main(['frobnicate']) == 1
    assert "unknown subcommand" in capsys.readouterr().err

    assert main(['--help']) == 0
    assert "export-sft" in capsys.readouterr().out


def test_bad_flags_exit_with_usage_code(capsys):
    assert main(['run', '--question', 'q?', '--bogus']) == 1
    assert capsys.readouterr().err.startswith("Error:")

    assert main(['export-sft', '--traj', 'x.jsonl']) == 1


def test_subcommand_help(capsys):
    assert main(['run', '--help']) == 0
    assert "--max-retriever-calls" in capsys.readouterr().out


def test_run_wiki_episode(tmp_path, capsys):
    out = tmp_path / 'episodes.jsonl'
    code = main(['run', '--corpus', CORPUS, '--question', "Who directed the sequel to Zorblax Rising?",
                 '--script', _script(tmp_path, ORACLE), '--out', str(out), '--log-level', 'WARNING'])

    assert code == 0
    assert capsys.readouterr().out.strip() == "Velma Okonkwo"
    [record] = _read_jsonl(out)
    assert record['final_answer'] == "Velma Okonkwo"
    assert len(record['nodes']) == 2


def test_run_with_config_file(tmp_path, capsys):
    config = tmp_path / 'dq.toml'
    config.write_text('[budget]\nmax_retriever_calls = 1\n', encoding='utf-8')
    out = tmp_path / 'episodes.jsonl'

    code = main(['run', '--config', str(config), '--corpus', CORPUS,
                 '--question', "Who directed the sequel to Zorblax Rising?",
                 '--script', _script(tmp_path, ORACLE), '--out', str(out)])

    # One call is spent on Zorblax Rising; the forced finish takes the next Finish line
    assert code == 2
    assert "budget_exhausted" in capsys.readouterr().err
    [record] = _read_jsonl(out)
    assert record['budget'] == {'max_retriever_calls': 1, 'max_entries_per_call': 5}


def test_run_failure_exits_two(tmp_path, capsys):
    code = main(['run', '--corpus', CORPUS, '--question', "q?", '--script', _script(tmp_path, [])])
    assert code == 2
    assert "policy_failure" in capsys.readouterr().err


def test_runtime_errors_exit_two(tmp_path, capsys):
    assert main(['run', '--toolset', 'chitchat', '--question', "q?"]) == 2
    assert "QA base" in capsys.readouterr().err

    assert main(['run', '--toolset', 'chitchat', '--base', str(tmp_path / 'none'), '--question', "q?"]) == 2


def test_build_run_export_pipeline(tmp_path, capsys):
    base = tmp_path / 'base'
    assert main(['build-base', '--input', str(fixture_path('raw_qa.jsonl')), '--out', str(base)]) == 0
    assert "Wrote 3 QA records" in capsys.readouterr().out

    episodes = tmp_path / 'episodes.jsonl'
    code = main(['run', '--toolset', 'chitchat', '--base', str(base), '--question', "what is the Qixi Festival?",
                 '--script', _script(tmp_path, ["[Finish] unused"]), '--out', str(episodes)])
    assert code == 0
    assert capsys.readouterr().out.startswith("A Chinese festival")

    sft = tmp_path / 'sft.jsonl'
    code = main(['export-sft', '--traj', str(episodes), '--mode', 'single-sequence',
                 '--out', str(sft)])
    assert code == 0
    [example] = _read_jsonl(sft)
    assert [turn['role'] for turn in example['turns']] == ['system', 'user', 'assistant']
    assert example['turns'][-1]['train_on'] is True
    assert example['turns'][-1]['content'].startswith("[Finish] A Chinese festival")


def test_eval_with_baseline(tmp_path, capsys):
    report_path = tmp_path / 'report.json'
    trajectories = tmp_path / 'trajectories.jsonl'
    code = main(['eval', '--dataset', str(fixture_path('hotpot_two_hop.json')), '--corpus', CORPUS,
                 '--scripts', str(fixture_path('oracle_scripts.jsonl')), '--workers', '2', '--baseline',
                 '--out', str(report_path), '--trajectories', str(trajectories)])
    assert code == 0
    assert capsys.readouterr().out.startswith("EM 1.0000")

    report = json.loads(report_path.read_text(encoding='utf-8'))
    assert (report['em'], report['recall'], report['avg_contexts'], report['n']) == (1.0, 1.0, 2.0, 10)
    assert report['baseline']['recall'] == pytest.approx(0.5)
    assert report['terminations']['finished'] == 10

    items = _read_jsonl(tmp_path / 'report.items.jsonl')
    assert [item['id'] for item in items][:2] == ["zr-director", "zr-composer"]
    assert len(_read_jsonl(trajectories)) == 10


def test_eval_baseline_needs_wiki(tmp_path, capsys):
    QABaseStore.save([QARecord("What is Qixi?", "A festival.", QuestionType.OBJECTIVE, 1, 1.0, 1.0)], tmp_path)
    code = main(['eval', '--dataset', str(fixture_path('hotpot_two_hop.json')), '--toolset', 'chitchat',
                 '--base', str(tmp_path), '--scripts', str(fixture_path('oracle_scripts.jsonl')),
                 '--baseline', '--out', str(tmp_path / 'r.json')])
    assert "--baseline" in capsys.readouterr().err
    assert code == 2


def test_aggregate_command(tmp_path, capsys):
    data = {**read_fixture_json('qixi_answers.json'), 'question_type': 'subjective'}
    source = tmp_path / 'answers.jsonl'
    source.write_text(
        json.dumps(data) + '\n' + json.dumps({'question': "Capital of France?", 'answers': ["Paris", "paris"]}) + '\n',
        encoding='utf-8',
    )
    out = tmp_path / 'aggregated.jsonl'
    assert main(['aggregate', '--input', str(source), '--out', str(out)]) == 0

    subjective, objective = _read_jsonl(out)
    assert subjective['question_type'] == 'subjective'
    covered = sorted(answer_id for viewpoint in subjective['viewpoints'] for answer_id in viewpoint['answer_ids'])
    assert len(covered) == 10 and len(set(covered)) == 10
    assert objective == {
        'question': "Capital of France?",
        'question_type': 'objective',
        'aggregated_answer': "Paris",
        'viewpoints': None,
        'schema_version': 1,
    }


def test_json_log_format(tmp_path, capsys):
    main(['run', '--corpus', CORPUS, '--question', "q?", '--script', _script(tmp_path, ["[Finish] x"]),
          '--log', 'json'])
    lines = [line for line in capsys.readouterr().err.splitlines() if line.startswith('{')]
    assert lines
    assert all(json.loads(line)['logger'].startswith('dq_engine') for line in lines)
