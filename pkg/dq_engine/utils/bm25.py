"""
Okapi BM25 index over canonicalized unigrams.

score(D, Q) = sum over distinct query tokens t of
    idf(t) * tf(t, D) * (k1 + 1) / (tf(t, D) + k1 * (1 - b + b * |D| / avgdl))
idf(t) = ln((N - n(t) + 0.5) / (n(t) + 0.5) + 1)

The +1 inside the log keeps idf positive, so a document scores above zero
exactly when it shares at least one token with the query.
"""
import logging
import math
from collections import Counter

import numpy as np

from dq_engine.utils.text import canonicalize, tokenize

logger = logging.getLogger(__name__)

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75


class BM25Index:
    """Inverted index of documents keyed by their position in `keys`"""

    def __init__(self, keys, postings, doc_lengths, k1=DEFAULT_K1, b=DEFAULT_B):
        self.keys = list(keys)
        # token -> {doc index: term frequency}
        self.postings = postings
        self.doc_lengths = np.asarray(doc_lengths, dtype=float)
        self.k1 = k1
        self.b = b
        self.n_docs = len(self.keys)
        self.avgdl = float(self.doc_lengths.mean()) if self.n_docs else 0.0
        self._canonical_keys = [canonicalize(key) for key in self.keys]

    @classmethod
    def build(cls, keys, texts, k1=DEFAULT_K1, b=DEFAULT_B):
        postings = {}
        doc_lengths = []
        for doc_index, text in enumerate(texts):
            tokens = tokenize(text)
            doc_lengths.append(len(tokens))
            for token, tf in Counter(tokens).items():
                postings.setdefault(token, {})[doc_index] = tf
        logger.debug(f"BM25 index built over {len(doc_lengths)} documents, {len(postings)} terms")
        return cls(keys, postings, doc_lengths, k1=k1, b=b)

    def idf(self, token):
        n = len(self.postings.get(token, ()))
        return math.log((self.n_docs - n + 0.5) / (n + 0.5) + 1.0)

    def scores(self, query):
        """Score vector aligned with self.keys"""
        scores = np.zeros(self.n_docs, dtype=float)
        if not self.n_docs:
            return scores
        norm = self.k1 * (1 - self.b + self.b * self.doc_lengths / (self.avgdl or 1.0))
        for token in sorted(set(tokenize(query))):
            doc_tfs = self.postings.get(token)
            if not doc_tfs:
                continue
            idx = np.fromiter(doc_tfs.keys(), dtype=int, count=len(doc_tfs))
            tf = np.fromiter(doc_tfs.values(), dtype=float, count=len(doc_tfs))
            scores[idx] += self.idf(token) * tf * (self.k1 + 1) / (tf + norm[idx])
        return scores

    def search(self, query, limit):
        """
        Top `limit` (key, score) pairs with score > 0, descending;
        ties ordered by canonical key text.
        """
        scores = self.scores(query)
        hits = [i for i in np.flatnonzero(scores > 0)]
        hits.sort(key=lambda i: (-scores[i], self._canonical_keys[i], i))
        return [(self.keys[i], float(scores[i])) for i in hits[:limit]]

    # Sidecar persistence

    def to_dict(self):
        return {
            'k1': self.k1,
            'b': self.b,
            'n_docs': self.n_docs,
            'doc_lengths': [int(length) for length in self.doc_lengths],
            'postings': {token: {str(i): tf for i, tf in sorted(docs.items())}
                         for token, docs in sorted(self.postings.items())},
        }

    @classmethod
    def from_dict(cls, keys, data):
        postings = {token: {int(i): int(tf) for i, tf in docs.items()}
                    for token, docs in data['postings'].items()}
        if data['n_docs'] != len(keys) or len(data['doc_lengths']) != len(keys):
            raise ValueError("Postings sidecar does not match the record count")
        return cls(keys, postings, data['doc_lengths'], k1=data['k1'], b=data['b'])
