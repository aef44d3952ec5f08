"""
Batch evaluation over HotPotQA-format datasets.

Each item runs one question-only episode; the harness scores the prediction
(EM/F1), the retrieval recall over gold supporting titles and the number of
contexts retrieved. The optional baseline retrieves with the initial question
alone, up to the full episode allowance of entries in one query.
"""
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path

import pandas as pd

from dq_engine.exceptions import SchemaError
from dq_engine.models import EvalResult, ObservationKind, Termination
from dq_engine.serializers import HotpotItemSerializer, ScriptedPolicyInputSerializer, load
from dq_engine.utils.jsonl import iter_jsonl
from dq_engine.utils.metrics import exact_match, f1_score, retrieval_recall

logger = logging.getLogger(__name__)

PROGRESS_EVERY = 10


# Datasets

def load_hotpot(path):
    """EvalItems from a HotPotQA JSON list or a JSONL file of the same records"""
    path = Path(path)
    with path.open(encoding='utf-8') as f:
        head = f.read(1024).lstrip()

    if head.startswith('['):
        try:
            with path.open(encoding='utf-8') as f:
                records = list(enumerate(json.load(f), start=1))
        except json.JSONDecodeError as e:
            raise SchemaError(f"invalid JSON in {path.name}: {e.msg}")
        # Positions in a JSON list are reported as record numbers
        items = [load(HotpotItemSerializer, obj, line=number) for number, obj in records]
    else:
        items = [load(HotpotItemSerializer, obj, line=number) for number, obj in iter_jsonl(path)]

    seen = set()
    for item in items:
        if item.id in seen:
            raise SchemaError(f"duplicate item id {item.id!r} in {path.name}")
        seen.add(item.id)
    logger.info(f"Loaded {len(items)} evaluation items from {path}")
    return items


def read_scripts(path):
    """{item id: [action lines]} from a JSONL file of {"id", "actions"} records"""
    scripts = {}
    for line_number, obj in iter_jsonl(path):
        record = load(ScriptedPolicyInputSerializer, obj, line=line_number)
        scripts[record['id']] = list(record['actions'])
    return scripts


# Scoring

def retrieved_titles(traj):
    """Titles of every entry returned during the episode, abandoned branches included"""
    titles = []
    for node in traj.node_list:
        for step in node.steps:
            if step.observation.kind == ObservationKind.ENTRIES:
                titles.extend(step.observation.titles)
    return titles


def _recall(titles, item):
    if not item.gold_support_titles:
        return None
    return retrieval_recall(titles, item.gold_support_titles)


def evaluate_item(item, engine_factory):
    """Score one item; failures are folded into a zero-score row"""
    try:
        engine = engine_factory(item)
        result = engine.run(item.question)
    except Exception as e:
        logger.exception(f"Item {item.id} failed")
        return {
            'id': item.id,
            'prediction': '',
            'gold': item.gold_answer,
            'em': 0.0,
            'f1': 0.0,
            'recall': 0.0 if item.gold_support_titles else None,
            'contexts': 0,
            'termination': Termination.POLICY_FAILURE.value,
            'error': str(e),
        }, None

    prediction = result.prediction
    return {
        'id': item.id,
        'prediction': prediction,
        'gold': item.gold_answer,
        'em': float(exact_match(prediction, item.gold_answer)),
        'f1': f1_score(prediction, item.gold_answer),
        'recall': _recall(retrieved_titles(result.trajectory), item),
        'contexts': result.budget.entries_returned,
        'termination': result.termination.value,
        'error': None,
    }, result


def _mean(values):
    values = [float(v) for v in values]
    return math.fsum(values) / len(values) if values else 0.0


def summarize(rows):
    """EvalResult over per-item rows; recall averages items that have gold titles"""
    frame = pd.DataFrame(rows, columns=['id', 'em', 'f1', 'recall', 'contexts', 'termination'])
    if frame.empty:
        return EvalResult(em=0.0, f1=0.0, recall=None, avg_contexts=0.0, n_items=0)
    recalls = frame['recall'].dropna()
    return EvalResult(
        em=_mean(frame['em']),
        f1=_mean(frame['f1']),
        recall=_mean(recalls) if len(recalls) else None,
        avg_contexts=_mean(frame['contexts']),
        n_items=len(frame),
    )


def termination_counts(rows):
    counts = {termination.value: 0 for termination in Termination}
    if rows:
        for termination, count in pd.Series([row['termination'] for row in rows]).value_counts().items():
            counts[termination] = int(count)
    return counts


def run_baseline(items, search_titles, limit):
    """
    Recall of one retrieval with the initial question, up to `limit` titles.
    search_titles(question, limit) -> ranked titles.
    """
    recalls, contexts = [], []
    for item in items:
        titles = search_titles(item.question, limit)
        contexts.append(len(titles))
        if item.gold_support_titles:
            recalls.append(retrieval_recall(titles, item.gold_support_titles))
    return {
        'recall': _mean(recalls) if recalls else None,
        'avg_contexts': _mean(contexts),
        'n': len(items),
    }


def run_eval(items, engine_factory, workers=8, baseline=None):
    """
    Evaluate every item concurrently (engine_factory(item) -> SearchEngine).

    Returns (report, rows, results): the report dict, per-item rows in dataset
    order and the EpisodeResults (None for failed items). baseline, when
    given, is a (search_titles, limit) pair.
    """
    rows = [None] * len(items)
    results = [None] * len(items)
    logger.info(f"Evaluating {len(items)} items with {workers} workers")

    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        futures = {executor.submit(evaluate_item, item, engine_factory): i for i, item in enumerate(items)}
        for done, future in enumerate(as_completed(futures), start=1):
            i = futures[future]
            rows[i], results[i] = future.result()
            if done % PROGRESS_EVERY == 0:
                logger.info(f"Completed {done}/{len(items)} items")

    summary = summarize(rows)
    report = {
        'em': summary.em,
        'f1': summary.f1,
        'recall': summary.recall,
        'avg_contexts': summary.avg_contexts,
        'n_items': summary.n_items,
        'terminations': termination_counts(rows),
        'baseline': run_baseline(items, *baseline) if baseline else None,
    }
    logger.info(f"EM {summary.em:.3f} F1 {summary.f1:.3f} recall {summary.recall} "
                f"avg contexts {summary.avg_contexts:.1f} over {summary.n_items} items")
    return report, rows, results
