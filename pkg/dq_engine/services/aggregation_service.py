"""
Answer aggregation: one answer per question from many candidate answers.

Objective questions take the majority answer. Subjective questions are grouped
into viewpoints, each a summary plus the ids of the answers sharing it:

    Viewpoint: <summary>
    Answer IDs: Answer 1, Answer 2, Answer 3

The parser also accepts the Chinese rendering (观点：/答案ID：答案1、答案2).
"""
import logging
import re
from collections import Counter

from dq_engine.exceptions import BackendError, ClassifierUnavailable, PartitionViolation
from dq_engine.models import AnswerSet, QuestionType, Viewpoint, answer_label
from dq_engine.utils.text import canonicalize, one_line, tokenize

logger = logging.getLogger(__name__)

DEFAULT_JACCARD_THRESHOLD = 0.3

# Keyword rules of the heuristic classifier: any hit makes a question Subjective
SUBJECTIVE_MARKERS = frozenset({
    'good', 'bad', 'best', 'worst', 'better', 'worse', 'should', 'opinion', 'think', 'feel',
    'favorite', 'favourite', 'recommend', 'prefer', 'worth', 'hate',
    'beautiful', 'ugly', 'nice', 'fun', 'interesting', 'boring', 'overrated', 'underrated',
})
SUBJECTIVE_PHRASES = ('what do you', 'do you', 'is it ok', 'how do people', 'your view')
SUBJECTIVE_MARKERS_ZH = ('觉得', '认为', '怎么看', '好吗', '推荐', '值得', '应该', '喜欢', '最好', '看法', '意义', '干什么')


class KeywordQuestionClassifier:
    """Deterministic default; empty questions are Objective"""

    def classify(self, question):
        canonical = canonicalize(question)
        if not canonical:
            return QuestionType.OBJECTIVE
        if SUBJECTIVE_MARKERS.intersection(tokenize(canonical)):
            return QuestionType.SUBJECTIVE
        if any(canonical.startswith(phrase) or f" {phrase} " in f" {canonical} " for phrase in SUBJECTIVE_PHRASES):
            return QuestionType.SUBJECTIVE
        if any(marker in canonical for marker in SUBJECTIVE_MARKERS_ZH):
            return QuestionType.SUBJECTIVE
        return QuestionType.OBJECTIVE


class LLMQuestionClassifier:
    """Asks the chat backend for a one-word label"""

    PROMPT = ("Classify the question as Objective (a factual question with one precise answer) or "
              "Subjective (asks for opinions or perspectives). Reply with one word: Objective or Subjective.")

    def __init__(self, client):
        self.client = client

    def classify(self, question):
        messages = [
            {'role': 'system', 'content': self.PROMPT},
            {'role': 'user', 'content': f"Question: {question}"},
        ]
        try:
            reply = self.client.complete(messages)
        except BackendError as e:
            raise ClassifierUnavailable(str(e))
        words = set(tokenize(reply))
        if 'subjective' in words and 'objective' not in words:
            return QuestionType.SUBJECTIVE
        if 'objective' in words and 'subjective' not in words:
            return QuestionType.OBJECTIVE
        raise ClassifierUnavailable(f"unrecognised classifier reply: {reply[:80]!r}")


def classify_question(question, classifier=None):
    return (classifier or KeywordQuestionClassifier()).classify(question)


def majority_vote(answers):
    """
    Most frequent answer by canonical form; ties go to the lowest answer id.
    Returns the original text of the winner's first occurrence.
    """
    canonical = [canonicalize(text) for _, text in answers.candidates]
    counts = Counter(canonical)
    best = max(counts.values())
    for (_, text), form in zip(answers.candidates, canonical):
        if counts[form] == best:
            return text


# Viewpoint grammar

_VIEWPOINT_RE = re.compile(r'^\s*(?:viewpoint|观点)\s*\d*\s*[:：]\s*(.*)$', re.IGNORECASE)
_IDS_RE = re.compile(r'^\s*(?:answer\s*ids?|答案\s*id|答案编号)\s*[:：]\s*(.*)$', re.IGNORECASE)
_LABEL_RE = re.compile(r'(?:answer|答案)\s*(\d+)', re.IGNORECASE)


def validate_partition(viewpoints, answers):
    expected = answers.ids
    seen = []
    for viewpoint in viewpoints:
        for member in viewpoint.member_ids:
            if member not in expected:
                raise PartitionViolation(f"unknown answer id {member!r}")
            if member in seen:
                raise PartitionViolation(f"{member} appears in more than one viewpoint")
            seen.append(member)
    missing = [answer_id for answer_id in expected if answer_id not in seen]
    if missing:
        raise PartitionViolation(f"viewpoints omit {', '.join(missing)}")
    return viewpoints


def sort_viewpoints(viewpoints, answers):
    position = {answer_id: i for i, answer_id in enumerate(answers.ids)}
    ordered = []
    for viewpoint in viewpoints:
        members = tuple(sorted(viewpoint.member_ids, key=lambda m: position.get(m, len(position))))
        ordered.append(Viewpoint(summary=viewpoint.summary, member_ids=members))
    return sorted(ordered, key=lambda v: position.get(v.member_ids[0], len(position)))


def parse_viewpoints(text, answers):
    """Parse LLM output in the viewpoint grammar and check it partitions the answer ids"""
    viewpoints = []
    summary_lines = None

    for line in (text or '').splitlines():
        viewpoint_match = _VIEWPOINT_RE.match(line)
        ids_match = _IDS_RE.match(line)
        if viewpoint_match:
            if summary_lines is not None:
                raise PartitionViolation("viewpoint without an answer id line")
            summary_lines = [viewpoint_match.group(1)]
        elif ids_match:
            if summary_lines is None:
                raise PartitionViolation("answer id line without a viewpoint")
            labels = [answer_label(int(n)) for n in _LABEL_RE.findall(ids_match.group(1))]
            if not labels:
                raise PartitionViolation("viewpoint lists no answer ids")
            viewpoints.append(Viewpoint(summary=one_line(' '.join(summary_lines)), member_ids=tuple(labels)))
            summary_lines = None
        elif summary_lines is not None and line.strip():
            summary_lines.append(line)

    if summary_lines is not None:
        raise PartitionViolation("viewpoint without an answer id line")
    if not viewpoints:
        raise PartitionViolation("no viewpoints found")
    return sort_viewpoints(validate_partition(viewpoints, answers), answers)


def render_viewpoints(viewpoints):
    """Viewpoint grammar text; singletons use the 'Answer ID:' form"""
    blocks = []
    for viewpoint in viewpoints:
        label = 'Answer ID' if len(viewpoint.member_ids) == 1 else 'Answer IDs'
        blocks.append(f"Viewpoint: {viewpoint.summary}\n{label}: {', '.join(viewpoint.member_ids)}")
    return '\n'.join(blocks)


def render_answer_set(answers):
    lines = [f"Question: {answers.question}", ""]
    for answer_id, text in answers.candidates:
        lines += [f"{answer_id}: {one_line(text)}", ""]
    return '\n'.join(lines).rstrip()


def jaccard(a, b):
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


class HeuristicViewpointClusterer:
    """Single-link clustering on token Jaccard similarity; summary is the longest member"""

    def __init__(self, threshold=DEFAULT_JACCARD_THRESHOLD):
        self.threshold = threshold

    def cluster(self, answers):
        ids = answers.ids
        token_sets = [set(tokenize(text)) for _, text in answers.candidates]
        parent = list(range(len(ids)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                if jaccard(token_sets[i], token_sets[j]) >= self.threshold:
                    root_i, root_j = find(i), find(j)
                    if root_i != root_j:
                        parent[max(root_i, root_j)] = min(root_i, root_j)

        groups = {}
        for i in range(len(ids)):
            groups.setdefault(find(i), []).append(i)

        viewpoints = []
        for members in groups.values():
            # Longest text wins; ties keep the lowest id
            longest = max(members, key=lambda i: (len(answers.candidates[i][1]), -i))
            viewpoints.append(Viewpoint(summary=one_line(answers.candidates[longest][1]),
                                        member_ids=tuple(ids[i] for i in members)))
        return sort_viewpoints(viewpoints, answers)


class LLMViewpointClusterer:
    """Asks the chat backend for viewpoints; falls back to a heuristic clusterer on invalid output"""

    PROMPT = ("Group the answers below by the viewpoint they express. For every group write\n"
              "Viewpoint: <one-sentence summary>\n"
              "Answer IDs: Answer i, Answer j, ...\n"
              "Every answer must appear in exactly one group.")

    def __init__(self, client, fallback=None):
        self.client = client
        self.fallback = fallback

    def cluster(self, answers):
        messages = [
            {'role': 'system', 'content': self.PROMPT},
            {'role': 'user', 'content': render_answer_set(answers)},
        ]
        try:
            return parse_viewpoints(self.client.complete(messages), answers)
        except (PartitionViolation, BackendError) as e:
            if self.fallback is None:
                raise
            logger.warning(f"Viewpoint clustering fell back to heuristic for {answers.question!r}: {e}")
            return self.fallback.cluster(answers)


def cluster_viewpoints(answers, backend=None):
    viewpoints = (backend or HeuristicViewpointClusterer()).cluster(answers)
    return validate_partition(viewpoints, answers)


class AggregationService:
    """Aggregated answer for one question: majority vote or rendered viewpoints"""

    def __init__(self, classifier=None, clusterer=None):
        self.classifier = classifier or KeywordQuestionClassifier()
        self.clusterer = clusterer or HeuristicViewpointClusterer()

    def aggregate(self, question, texts, question_type=None):
        """
        Returns (question_type, aggregated_answer, viewpoints or None).
        A given question_type skips classification.
        """
        answers = AnswerSet.from_texts(question, texts)
        if question_type is None:
            question_type = classify_question(question, self.classifier)
        question_type = QuestionType(question_type)
        if question_type == QuestionType.OBJECTIVE:
            return question_type, majority_vote(answers), None
        viewpoints = cluster_viewpoints(answers, self.clusterer)
        return question_type, render_viewpoints(viewpoints), viewpoints

    @classmethod
    def from_config(cls, config, client=None):
        aggregation = config.aggregation
        heuristic = HeuristicViewpointClusterer(aggregation.jaccard_threshold)
        classifier = LLMQuestionClassifier(client) if aggregation.classifier == 'llm' else KeywordQuestionClassifier()
        if aggregation.backend == 'llm':
            clusterer = LLMViewpointClusterer(client, fallback=heuristic if aggregation.fallback else None)
        else:
            clusterer = heuristic
        return cls(classifier=classifier, clusterer=clusterer)
