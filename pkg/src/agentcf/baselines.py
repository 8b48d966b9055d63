"""Reference rankers that do not call a language model.

Each ranker is a scikit-learn style estimator: hyperparameters go to
``__init__``, ``fit`` learns from a :class:`~agentcf.corpus.Split` and sets
attributes with a trailing underscore, and ``rank`` orders a slate.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .bm25 import BM25
from .corpus import ItemIdentity, PopularityTable, Split
from .errors import SchemaVersionError
from .ranker import CandidateSlate, RankingResult, sort_by_scores
from .validation import check_positive, check_split

logger = logging.getLogger(__name__)

MF_SCHEMA = 1


def pop_rank(slate: CandidateSlate, pop: PopularityTable) -> RankingResult:
    return sort_by_scores(slate, [pop.counts.get(c, 0) for c in slate.candidates], "Pop")


def bm25_rank(slate: CandidateSlate, history_texts: list[str], item_texts: dict[str, str],
              k1: float = 1.2, b: float = 0.75) -> RankingResult:
    """Score candidates against the concatenated history; IDF comes from the slate alone."""
    index = BM25([item_texts.get(c, "") for c in slate.candidates], k1=k1, b=b)
    return sort_by_scores(slate, index.scores(" ".join(history_texts)), "BM25")


@dataclass
class BPRConfig:
    d: int = 64
    learning_rate: float = 0.01
    l2_reg: float = 1e-4
    epochs: int = 200
    seed: int = 0

    def validate(self) -> "BPRConfig":
        check_positive(d=self.d, learning_rate=self.learning_rate, l2_reg=self.l2_reg)
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        return self


@dataclass
class MFModel:
    users: list[str]
    items: list[str]
    user_vecs: np.ndarray
    item_vecs: np.ndarray

    def __post_init__(self):
        self._u = {u: k for k, u in enumerate(self.users)}
        self._i = {i: k for k, i in enumerate(self.items)}
        if self.user_vecs.shape[1] != self.item_vecs.shape[1]:
            raise ValueError("user and item vectors differ in dimension")

    @property
    def d(self) -> int:
        return self.item_vecs.shape[1]

    def score(self, user: str, item: str) -> float:
        u, i = self._u.get(user), self._i.get(item)
        if u is None or i is None:
            return 0.0
        return float(self.user_vecs[u] @ self.item_vecs[i])

    def to_dict(self) -> dict:
        return {
            "schema_version": MF_SCHEMA,
            "d": self.d,
            "user_vecs": {u: self.user_vecs[k].tolist() for k, u in enumerate(self.users)},
            "item_vecs": {i: self.item_vecs[k].tolist() for k, i in enumerate(self.items)},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MFModel":
        if doc.get("schema_version") != MF_SCHEMA:
            raise SchemaVersionError(f"unsupported model schema {doc.get('schema_version')!r}")
        d = int(doc["d"])
        users, items = list(doc["user_vecs"]), list(doc["item_vecs"])
        uv = np.array([doc["user_vecs"][u] for u in users], dtype=float).reshape(len(users), d)
        iv = np.array([doc["item_vecs"][i] for i in items], dtype=float).reshape(len(items), d)
        return cls(users, items, uv, iv)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MFModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def bpr_loss_grad(u: np.ndarray, i: np.ndarray, j: np.ndarray, reg: float):
    """Loss and gradients for one (user, positive, negative) triple.

    loss = -ln sigmoid(u . (i - j)) + reg * (|u|^2 + |i|^2 + |j|^2)
    """
    x = float(u @ (i - j))
    # -ln sigmoid(x) computed stably
    loss = math.log1p(math.exp(-x)) if x > -30 else -x
    loss += reg * float(u @ u + i @ i + j @ j)
    return (loss, *_grads(u, i, j, x, reg))


def _grads(u, i, j, x, reg):
    g = 1.0 / (1.0 + math.exp(x)) if x < 700 else 0.0
    return -g * (i - j) + 2 * reg * u, -g * u + 2 * reg * i, g * u + 2 * reg * j


def bpr_train(train: dict[str, list[str]], cfg: BPRConfig | None = None, items=None) -> MFModel:
    """SGD on the BPR objective with uniformly drawn (user, positive, negative) triples.

    One epoch draws as many triples as there are training interactions.
    """
    cfg = (cfg or BPRConfig()).validate()
    if not any(train.values()):
        raise ValueError("bpr_train needs a non-empty training set")
    users = sorted(train)
    item_ids = sorted(set(items or ()) | {i for seq in train.values() for i in seq})
    iidx = {i: k for k, i in enumerate(item_ids)}
    n_items = len(item_ids)
    rng = np.random.default_rng(cfg.seed)
    scale = 0.1 / math.sqrt(cfg.d)
    U = rng.normal(0.0, scale, (len(users), cfg.d))
    V = rng.normal(0.0, scale, (n_items, cfg.d))

    seen = [set(iidx[i] for i in train[u]) for u in users]
    pairs = np.array([(k, iidx[i]) for k, u in enumerate(users) for i in train[u]
                      if len(seen[k]) < n_items], dtype=np.int64)
    skipped = {users[k] for k in range(len(users)) if len(seen[k]) >= n_items}
    if skipped:
        logger.warning("skipping %d users who interacted with every item", len(skipped))
    if len(pairs) == 0:
        return MFModel(users, item_ids, U, V)

    lr, reg = cfg.learning_rate, cfg.l2_reg
    for _ in range(cfg.epochs):
        picks = rng.integers(0, len(pairs), len(pairs))
        draws = rng.integers(0, n_items, (len(pairs), 8))
        for row, cand in zip(picks, draws):
            u, i = pairs[row]
            j = next((c for c in cand if c not in seen[u]), None)
            while j is None:
                c = int(rng.integers(0, n_items))
                j = c if c not in seen[u] else None
            uu, vi, vj = U[u], V[i], V[j]
            du, di, dj = _grads(uu, vi, vj, float(uu @ (vi - vj)), reg)
            U[u] -= lr * du
            V[i] -= lr * di
            V[j] -= lr * dj
    return MFModel(users, item_ids, U, V)


def bpr_rank(model: MFModel, slate: CandidateSlate) -> RankingResult:
    return sort_by_scores(slate, [model.score(slate.user_id, c) for c in slate.candidates], "BPR")


class PopRanker(BaseEstimator):
    """Ranks candidates by interaction count."""

    strategy = "Pop"

    def fit(self, split: Split, y=None):
        check_split(split)
        # training interactions only, so held-out targets do not leak into the counts
        counts: dict[str, int] = {}
        for u in split.users:
            for item in split.train[u]:
                counts[item] = counts.get(item, 0) + 1
        self.pop_ = PopularityTable(counts)
        return self

    def rank(self, slate: CandidateSlate) -> RankingResult:
        check_is_fitted(self, "pop_")
        return pop_rank(slate, self.pop_)


class BM25Ranker(BaseEstimator):
    """Ranks candidates by BM25 similarity between their identity text and the user's past items."""

    strategy = "BM25"

    def __init__(self, items: dict[str, ItemIdentity] | None = None, k1: float = 1.2, b: float = 0.75,
                 noun: str = "CD"):
        self.items = items
        self.k1 = k1
        self.b = b
        self.noun = noun

    def fit(self, split: Split, y=None):
        check_split(split)
        if self.items is None:
            raise ValueError("BM25Ranker needs item identities")
        self.texts_ = {i: ident.render(self.noun) for i, ident in self.items.items()}
        self.history_ = {u: list(split.train[u]) for u in split.users}
        return self

    def rank(self, slate: CandidateSlate) -> RankingResult:
        check_is_fitted(self, "texts_")
        history = [self.texts_[i] for i in self.history_.get(slate.user_id, []) if i in self.texts_]
        return bm25_rank(slate, history, self.texts_, self.k1, self.b)


class BPRRanker(BaseEstimator):
    """Matrix factorization trained with the BPR pairwise loss."""

    strategy = "BPR"

    def __init__(self, d: int = 64, learning_rate: float = 0.01, l2_reg: float = 1e-4,
                 epochs: int = 200, seed: int = 0):
        self.d = d
        self.learning_rate = learning_rate
        self.l2_reg = l2_reg
        self.epochs = epochs
        self.seed = seed

    def fit(self, split: Split, y=None, items=None):
        check_split(split)
        cfg = BPRConfig(self.d, self.learning_rate, self.l2_reg, self.epochs, self.seed)
        self.model_ = bpr_train(split.train, cfg, items=items)
        return self

    def rank(self, slate: CandidateSlate) -> RankingResult:
        check_is_fitted(self, "model_")
        return bpr_rank(self.model_, slate)
