"""
Tests for answer aggregation: classification, majority vote and viewpoints
"""
import itertools
from collections import Counter

import pytest
from django.test import SimpleTestCase

from dq_engine.exceptions import BackendError, ClassifierUnavailable, PartitionViolation
from dq_engine.models import AnswerSet, QuestionType, Viewpoint
from dq_engine.services.aggregation_service import (
    AggregationService, HeuristicViewpointClusterer, KeywordQuestionClassifier, LLMQuestionClassifier,
    LLMViewpointClusterer, classify_question, cluster_viewpoints, majority_vote, parse_viewpoints,
    render_viewpoints, validate_partition,
)
from dq_engine.tests.helpers import fixture_path, read_fixture_json

QIXI_PARTITION = [
    ("Answer 1", "Answer 2", "Answer 3"),
    ("Answer 4", "Answer 7", "Answer 10"),
    ("Answer 5", "Answer 9"),
    ("Answer 6",),
    ("Answer 8",),
]


class CannedClient:
    def __init__(self, *replies):
        self.replies = list(replies)
        self.calls = []

    def complete(self, messages):
        self.calls.append(messages)
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply


def qixi_answers():
    data = read_fixture_json('qixi_answers.json')
    return AnswerSet.from_texts(data['question'], data['answers'])


class ClassifierTests(SimpleTestCase):
    def test_keyword_classifier(self):
        classifier = KeywordQuestionClassifier()
        self.assertEqual(classifier.classify("What is the capital of France?"), QuestionType.OBJECTIVE)
        self.assertEqual(classifier.classify("Is the Qixi Festival worth celebrating?"), QuestionType.SUBJECTIVE)
        self.assertEqual(classifier.classify("What do you think of Qixi?"), QuestionType.SUBJECTIVE)
        self.assertEqual(classifier.classify("你觉得七夕节怎么样"), QuestionType.SUBJECTIVE)
        self.assertEqual(classifier.classify(""), QuestionType.OBJECTIVE)

    def test_llm_classifier(self):
        classifier = LLMQuestionClassifier(CannedClient("Subjective."))
        self.assertEqual(classify_question("Is Qixi fun?", classifier), QuestionType.SUBJECTIVE)

    def test_llm_classifier_unusable_reply(self):
        with self.assertRaises(ClassifierUnavailable):
            LLMQuestionClassifier(CannedClient("Could be either")).classify("q")
        with self.assertRaises(ClassifierUnavailable):
            LLMQuestionClassifier(CannedClient(BackendError(500, "down"))).classify("q")


def test_majority_vote_prefers_frequent_canonical_form():
    answers = AnswerSet.from_texts("q", ["Paris", "London", "paris ", "London", "PARIS"])
    assert majority_vote(answers) == "Paris"


def test_majority_vote_tie_goes_to_lowest_id():
    answers = AnswerSet.from_texts("q", ["London", "Paris", "Paris", "London"])
    assert majority_vote(answers) == "London"


@pytest.mark.parametrize('size', range(1, 9))
def test_majority_vote_matches_enumeration(size):
    for combo in itertools.product("abc", repeat=size):
        answers = AnswerSet.from_texts("q", combo)
        counts = Counter(combo)
        best = max(counts.values())
        expected = next(symbol for symbol in combo if counts[symbol] == best)
        assert majority_vote(answers) == expected


def test_parse_viewpoints_reads_fixture_partition():
    text = fixture_path('qixi_viewpoints.txt').read_text(encoding='utf-8')
    viewpoints = parse_viewpoints(text, qixi_answers())
    assert [viewpoint.member_ids for viewpoint in viewpoints] == QIXI_PARTITION
    assert viewpoints[3].summary == (
        "The Qixi Festival is the most romantic traditional Chinese festival, primarily for young girls, "
        "with activities centered around begging for skills."
    )


def test_parse_viewpoints_chinese_rendering():
    text = fixture_path('qixi_viewpoints_zh.txt').read_text(encoding='utf-8')
    viewpoints = parse_viewpoints(text, qixi_answers())
    assert [viewpoint.member_ids for viewpoint in viewpoints] == QIXI_PARTITION


def test_parse_viewpoints_sorts_by_lowest_member():
    answers = AnswerSet.from_texts("q", ["a", "b", "c"])
    text = "Viewpoint: late\nAnswer IDs: Answer 3, Answer 2\nViewpoint: early\nAnswer ID: Answer 1"
    viewpoints = parse_viewpoints(text, answers)
    assert [(v.summary, v.member_ids) for v in viewpoints] == [
        ("early", ("Answer 1",)),
        ("late", ("Answer 2", "Answer 3")),
    ]


@pytest.mark.parametrize('text', [
    "Viewpoint: one\nAnswer IDs: Answer 1, Answer 2",
    "Viewpoint: one\nAnswer IDs: Answer 1, Answer 2, Answer 3\nViewpoint: two\nAnswer ID: Answer 3",
    "Viewpoint: one\nAnswer IDs: Answer 1, Answer 2, Answer 3, Answer 4",
    "Answer IDs: Answer 1, Answer 2, Answer 3",
    "Viewpoint: dangling",
    "nothing useful",
])
def test_parse_viewpoints_rejects_invalid_partitions(text):
    with pytest.raises(PartitionViolation):
        parse_viewpoints(text, AnswerSet.from_texts("q", ["a", "b", "c"]))


def test_render_viewpoints_round_trips_through_parser():
    answers = qixi_answers()
    viewpoints = parse_viewpoints(fixture_path('qixi_viewpoints.txt').read_text(encoding='utf-8'), answers)
    assert parse_viewpoints(render_viewpoints(viewpoints), answers) == viewpoints
    assert "Answer ID: Answer 6" in render_viewpoints(viewpoints)


def test_heuristic_clusterer_output_is_partition():
    answers = qixi_answers()
    viewpoints = cluster_viewpoints(answers, HeuristicViewpointClusterer())
    validate_partition(viewpoints, answers)
    members = [member for viewpoint in viewpoints for member in viewpoint.member_ids]
    assert sorted(members, key=lambda m: int(m.split()[1])) == answers.ids


def test_heuristic_clusterer_groups_similar_answers():
    answers = AnswerSet.from_texts("q", [
        "too commercial and expensive",
        "a lonely day",
        "far too commercial and expensive now",
    ])
    viewpoints = HeuristicViewpointClusterer(threshold=0.3).cluster(answers)
    assert [v.member_ids for v in viewpoints] == [("Answer 1", "Answer 3"), ("Answer 2",)]
    assert viewpoints[0].summary == "far too commercial and expensive now"


def test_llm_clusterer_falls_back_on_invalid_output():
    answers = AnswerSet.from_texts("q", ["a b", "c d"])
    clusterer = LLMViewpointClusterer(CannedClient("Viewpoint: only one\nAnswer ID: Answer 1"),
                                      fallback=HeuristicViewpointClusterer())
    viewpoints = clusterer.cluster(answers)
    assert [v.member_ids for v in viewpoints] == [("Answer 1",), ("Answer 2",)]


def test_llm_clusterer_without_fallback_raises():
    answers = AnswerSet.from_texts("q", ["a b", "c d"])
    clusterer = LLMViewpointClusterer(CannedClient("Viewpoint: only one\nAnswer ID: Answer 1"))
    with pytest.raises(PartitionViolation):
        clusterer.cluster(answers)


def test_llm_clusterer_uses_parsed_reply():
    answers = qixi_answers()
    reply = fixture_path('qixi_viewpoints.txt').read_text(encoding='utf-8')
    client = CannedClient(reply)
    viewpoints = LLMViewpointClusterer(client).cluster(answers)
    assert [v.member_ids for v in viewpoints] == QIXI_PARTITION
    prompt = client.calls[0][1]['content']
    assert "Answer 10: The Qixi Festival is a traditional Chinese festival with many customary activities" in prompt


def test_aggregation_service_objective_and_subjective():
    service = AggregationService()
    question_type, answer, viewpoints = service.aggregate("What is the capital of France?", ["Paris", "paris", "Lyon"])
    assert (question_type, answer, viewpoints) == (QuestionType.OBJECTIVE, "Paris", None)

    question_type, answer, viewpoints = service.aggregate("Is Qixi worth it?", ["yes it is", "no"])
    assert question_type == QuestionType.SUBJECTIVE
    assert all(isinstance(viewpoint, Viewpoint) for viewpoint in viewpoints)
    assert answer == render_viewpoints(viewpoints)


def test_aggregation_service_honours_given_question_type():
    data = read_fixture_json('qixi_answers.json')
    service = AggregationService()

    assert service.aggregate(data['question'], data['answers'])[0] == QuestionType.OBJECTIVE
    question_type, answer, viewpoints = service.aggregate(data['question'], data['answers'], 'subjective')
    assert question_type == QuestionType.SUBJECTIVE
    assert answer == render_viewpoints(viewpoints)
