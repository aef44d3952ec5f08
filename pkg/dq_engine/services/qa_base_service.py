"""
Reliable QA base: construction pipeline, on-disk store and the two ChitChat tools.

Construction keeps questions whose grammar score exceeds epsilon1 and whose
intent score exceeds epsilon2, selects the most frequent ones, aggregates the
answers per question and writes:

    <dir>/qa_base.jsonl           QARecord per line, most frequent first
    <dir>/qa_base.postings.json   BM25 postings over the record questions

The postings sidecar can always be rebuilt from the JSONL file.
"""
import json
import logging
import re
from collections import Counter
from pathlib import Path

from dq_engine.exceptions import NetworkError, SchemaError, ScorerUnavailable, StoreUnavailable
from dq_engine.models import Entry, Observation, QARecord, QuestionStub
from dq_engine.serializers import QARecordSerializer, RawQAPairSerializer, load
from dq_engine.services.aggregation_service import AggregationService
from dq_engine.utils.bm25 import BM25Index
from dq_engine.utils.http import build_session, retry_on_failure
from dq_engine.utils.jsonl import iter_jsonl, write_jsonl
from dq_engine.utils.text import canonicalize, one_line, tokenize

logger = logging.getLogger(__name__)

STORE_FILENAME = 'qa_base.jsonl'
POSTINGS_FILENAME = 'qa_base.postings.json'
MAX_RETRIEVE_LIMIT = 5

INTERROGATIVES = frozenset({
    'what', 'who', 'whom', 'whose', 'when', 'where', 'why', 'how', 'which',
    'is', 'are', 'was', 'were', 'do', 'does', 'did', 'can', 'could', 'should', 'would', 'will',
})
QUESTION_MARKERS_ZH = ('吗', '什么', '怎么', '为什么', '哪', '谁', '多少', '如何', '是否')

_REPEATED_PUNCT_RE = re.compile(r'([!?.,])\1')


# Scorers

class HeuristicGECScorer:
    """
    Grammar-quality score in [0, 1] from surface features: text with no word
    characters scores 0; repeated punctuation, shouting, doubled words and very
    short text each cost points.
    """

    def __call__(self, text):
        text = one_line(text)
        tokens = tokenize(text)
        if not tokens:
            return 0.0
        score = 1.0
        if len(tokens) < 2:
            score -= 0.4
        if _REPEATED_PUNCT_RE.search(text):
            score -= 0.2
        letters = [ch for ch in text if ch.isalpha()]
        if len(letters) > 3 and all(ch.isupper() for ch in letters):
            score -= 0.2
        if any(a == b for a, b in zip(tokens, tokens[1:])):
            score -= 0.2
        return max(0.0, round(score, 6))


class HeuristicIntentScorer:
    """How clearly the text asks something: interrogative form scores high"""

    def __call__(self, text):
        text = one_line(text)
        tokens = tokenize(text)
        if not tokens:
            return 0.0
        if text.endswith(('?', '？')) or tokens[0] in INTERROGATIVES:
            return 0.9
        if any(marker in text for marker in QUESTION_MARKERS_ZH):
            return 0.8
        return 0.3 if len(tokens) >= 3 else 0.1


class HttpScorer:
    """Remote model scorer: POST {"text": q} -> {"score": float in [0, 1]}"""

    def __init__(self, url, session=None, timeout=10.0, attempts=3, backoff=0.5):
        self.url = url
        self.session = session or build_session()
        self.timeout = timeout
        self._post = retry_on_failure(max_attempts=attempts, backoff=backoff)(self._request)

    def _request(self, text):
        response = self.session.post(self.url, json={'text': text}, timeout=self.timeout)
        response.raise_for_status()
        return response

    def __call__(self, text):
        try:
            score = float(self._post(text).json()['score'])
        except NetworkError as e:
            raise ScorerUnavailable(f"scorer at {self.url} unavailable: {e}")
        except (ValueError, KeyError, TypeError):
            raise ScorerUnavailable(f"scorer at {self.url} returned no numeric score")
        if not 0.0 <= score <= 1.0:
            raise ScorerUnavailable(f"scorer at {self.url} returned {score} outside [0, 1]")
        return score


def build_scorers(scorer_config, session=None):
    """(gec, intent) scorers selected by config.scorer.kind"""
    if scorer_config.kind == 'http':
        if not scorer_config.gec_url or not scorer_config.intent_url:
            raise ScorerUnavailable("scorer.gec_url and scorer.intent_url are required for http scorers")
        return HttpScorer(scorer_config.gec_url, session), HttpScorer(scorer_config.intent_url, session)
    return HeuristicGECScorer(), HeuristicIntentScorer()


class _ScoreCache:
    def __init__(self, scorer):
        self.scorer = scorer
        self.scores = {}

    def __call__(self, text):
        if text not in self.scores:
            self.scores[text] = self.scorer(text)
        return self.scores[text]


# Construction

def filter_reliable(pairs, gec, intent, cfg):
    """Questions with gec(q) > epsilon1 and intent(q) > epsilon2"""
    gec, intent = _ScoreCache(gec), _ScoreCache(intent)
    return {
        pair.question for pair in pairs
        if gec(pair.question) > cfg.epsilon1 and intent(pair.question) > cfg.epsilon2
    }


def select_top_frequency(questions, k):
    """
    The k most frequent distinct questions after canonicalization, ties by
    canonical text. Fewer than k distinct questions returns them all.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    counts = Counter(canonicalize(question) for question in questions)
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return [QuestionStub(question=question, frequency=count) for question, count in ranked[:k]]


class QABaseBuilder:
    """Runs the full construction over raw question-answer pairs"""

    def __init__(self, gec, intent, cfg, aggregation=None):
        self.gec = _ScoreCache(gec)
        self.intent = _ScoreCache(intent)
        self.cfg = cfg
        self.aggregation = aggregation or AggregationService()

    def build(self, pairs):
        pairs = list(pairs)
        reliable = filter_reliable(pairs, self.gec, self.intent, self.cfg)
        kept = [pair for pair in pairs if pair.question in reliable]
        logger.info(f"Reliability filter kept {len(kept)} of {len(pairs)} raw pairs")

        stubs = select_top_frequency([pair.question for pair in kept], self.cfg.top_k)

        by_canonical = {}
        for pair in kept:
            by_canonical.setdefault(canonicalize(pair.question), []).append(pair)

        records = []
        for stub in stubs:
            group = by_canonical[stub.question]
            question = one_line(group[0].question)
            question_type, answer, _ = self.aggregation.aggregate(question, [pair.answer for pair in group])
            records.append(QARecord(
                question=question,
                aggregated_answer=answer,
                question_type=question_type,
                frequency=len(group),
                gec_score=self.gec(group[0].question),
                intent_score=self.intent(group[0].question),
            ))
        logger.info(f"Built {len(records)} QA records")
        return records


def read_raw_pairs(path):
    return [load(RawQAPairSerializer, obj, line=line_number) for line_number, obj in iter_jsonl(path)]


# Store

class QABaseStore:
    """Immutable after loading; safe for concurrent readers"""

    def __init__(self, records, index=None):
        self.records = list(records)
        self.index = index or BM25Index.build([r.question for r in self.records], [r.question for r in self.records])
        self._by_canonical = {canonicalize(r.question): r for r in self.records}
        self._by_question = {r.question: r for r in self.records}

    @staticmethod
    def save(records, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_jsonl(directory / STORE_FILENAME, (QARecordSerializer(record).data for record in records))
        index = BM25Index.build([r.question for r in records], [r.question for r in records])
        with (directory / POSTINGS_FILENAME).open('w', encoding='utf-8', newline='\n') as f:
            json.dump(index.to_dict(), f, ensure_ascii=False, sort_keys=True)
            f.write('\n')
        logger.info(f"Saved QA base with {len(records)} records to {directory}")
        return directory

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        store_path = directory / STORE_FILENAME
        if not store_path.is_file():
            raise StoreUnavailable(f"QA base not found at {store_path}")
        try:
            records = [load(QARecordSerializer, obj, line=line_number) for line_number, obj in iter_jsonl(store_path)]
        except (SchemaError, UnicodeDecodeError) as e:
            raise StoreUnavailable(f"QA base at {store_path} is corrupt: {e}")

        keys = [record.question for record in records]
        index = None
        postings_path = directory / POSTINGS_FILENAME
        try:
            with postings_path.open(encoding='utf-8') as f:
                index = BM25Index.from_dict(keys, json.load(f))
        except FileNotFoundError:
            logger.warning(f"Postings sidecar missing at {postings_path}; rebuilding the index")
        except (ValueError, KeyError, TypeError) as e:
            logger.warning(f"Postings sidecar at {postings_path} unreadable ({e}); rebuilding the index")
        return cls(records, index=index)

    def __len__(self):
        return len(self.records)

    def question_retrieve(self, query, limit=MAX_RETRIEVE_LIMIT):
        """Stored questions ranked by BM25 against the query; Empty when nothing scores"""
        if limit < 1:
            raise ValueError("limit must be at least 1")
        hits = self.index.search(query, min(limit, MAX_RETRIEVE_LIMIT))
        entries = []
        for question, _ in hits:
            record = self._by_question[question]
            entries.append(Entry(question, f"{record.question_type.label} question, asked {record.frequency} times"))
        return Observation.from_entries(entries)

    def answer_retrieve(self, question):
        """Stored answer for an exact canonical match; no fuzzy fallback"""
        record = self._by_canonical.get(canonicalize(question))
        if record is None:
            return Observation.empty()
        return Observation.answer_of(record.aggregated_answer)
