"""
Answer and retrieval metrics with HotPotQA/SQuAD scorer semantics
"""
import re
import string
from collections import Counter

from dq_engine.exceptions import EmptyGold

_ARTICLES_RE = re.compile(r'\b(a|an|the)\b', re.UNICODE)
_PUNCTUATION = frozenset(string.punctuation)
_SPECIAL_ANSWERS = ('yes', 'no', 'noanswer')


def normalize_answer(text):
    """Lower text and remove punctuation, articles and extra whitespace"""
    text = (text or '').lower()
    text = ''.join(ch for ch in text if ch not in _PUNCTUATION)
    text = _ARTICLES_RE.sub(' ', text)
    return ' '.join(text.split())


def exact_match(prediction, gold):
    return int(normalize_answer(prediction) == normalize_answer(gold))


def f1_score(prediction, gold):
    """
    Token-level F1 over normalized tokens.

    Both sides empty scores 1, exactly one empty scores 0. A yes/no/noanswer
    answer on either side only scores when both are identical.
    """
    normalized_prediction = normalize_answer(prediction)
    normalized_gold = normalize_answer(gold)

    if normalized_prediction in _SPECIAL_ANSWERS or normalized_gold in _SPECIAL_ANSWERS:
        if normalized_prediction != normalized_gold:
            return 0.0

    prediction_tokens = normalized_prediction.split()
    gold_tokens = normalized_gold.split()
    if not prediction_tokens or not gold_tokens:
        return float(prediction_tokens == gold_tokens)

    common = Counter(prediction_tokens) & Counter(gold_tokens)
    num_same = sum(common.values())
    if num_same == 0:
        return 0.0
    precision = num_same / len(prediction_tokens)
    recall = num_same / len(gold_tokens)
    return (2 * precision * recall) / (precision + recall)


def retrieval_recall(retrieved_titles, gold_support_titles):
    """Share of gold titles present among the retrieved ones"""
    gold = set(gold_support_titles)
    if not gold:
        raise EmptyGold("recall needs at least one gold supporting title")
    return len(set(retrieved_titles) & gold) / len(gold)
