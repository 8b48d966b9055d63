"""Okapi BM25 over small in-memory corpora.

Scores use idf(t) = ln((N - n_t + 0.5) / (n_t + 0.5) + 1), which stays positive
even for terms present in every document.
"""

import math
import re
from collections import Counter

_TOKEN = re.compile(r"\w+")


def tokenize(text):
    return _TOKEN.findall(text.lower())


class BM25:
    def __init__(self, documents, k1=1.2, b=0.75):
        self.k1 = k1
        self.b = b
        self.docs = [tokenize(d) for d in documents]
        self.n_docs = len(self.docs)
        self.doc_lens = [len(d) for d in self.docs]
        self.avgdl = sum(self.doc_lens) / self.n_docs if self.n_docs else 0.0
        self.term_freqs = [Counter(d) for d in self.docs]
        df = Counter()
        for tf in self.term_freqs:
            df.update(tf.keys())
        self.idf = {t: math.log((self.n_docs - n + 0.5) / (n + 0.5) + 1.0) for t, n in df.items()}

    def scores(self, query):
        terms = tokenize(query)
        out = []
        for tf, dl in zip(self.term_freqs, self.doc_lens):
            if not dl:
                out.append(0.0)
                continue
            norm = self.k1 * (1.0 - self.b + self.b * dl / self.avgdl)
            s = 0.0
            for t in terms:
                f = tf.get(t)
                if f:
                    s += self.idf[t] * f * (self.k1 + 1.0) / (f + norm)
            out.append(s)
        return out

    def top_k(self, query, k):
        """Indices of the ``k`` best documents, ties broken by lower index."""
        scored = sorted(enumerate(self.scores(query)), key=lambda p: (-p[1], p[0]))
        return scored[:k]
