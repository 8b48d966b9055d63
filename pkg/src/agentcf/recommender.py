"""Estimator front-end for the agent-based recommender."""

from __future__ import annotations

import logging

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .agents import AgentSystem
from .corpus import Dataset, Split, leave_one_out, popularity_table
from .llm import Gateway
from .memory import DEFAULT_USER_SEED, MemoryStore
from .optimizer import TrainConfig, alignment_curve, optimize
from .prompts import Catalog
from .ranker import BasicRanker, CandidateSlate, HistoryRanker, LLMRankRanker, RankingResult, RetrievalRanker
from .validation import check_dataset, check_split, check_strategy

logger = logging.getLogger(__name__)

AGENT_STRATEGIES = ("B", "B_R", "B_H", "LLMRank")


def init_store(ds: Dataset, user_seed: str = DEFAULT_USER_SEED, noun: str = "CD", users=None) -> MemoryStore:
    store = MemoryStore()
    for u in sorted(users if users is not None else ds.users):
        store.init_user(u, user_seed)
    for item_id in sorted(ds.items):
        store.init_item(ds.items[item_id], noun)
    return store


class AgentCF(BaseEstimator):
    """User and item agents optimized on interaction data, then used to rank.

    ``fit`` builds fresh memories and runs the optimization loop; ``rank``
    orders a slate with one of the inference strategies.
    """

    def __init__(self, gateway: Gateway | None = None, strategy: str = "B", max_rounds: int = 2,
                 ordering: str = "global-chronological", neg_position: str = "first", seed: int = 0,
                 retrieval_k: int = 3, history_cap: int = 20, user_seed: str = DEFAULT_USER_SEED,
                 noun: str = "CD", catalog_dir=None, checkpoint_dir=None, checkpoint_every: int = 50,
                 max_steps: int | None = None):
        self.gateway = gateway
        self.strategy = strategy
        self.max_rounds = max_rounds
        self.ordering = ordering
        self.neg_position = neg_position
        self.seed = seed
        self.retrieval_k = retrieval_k
        self.history_cap = history_cap
        self.user_seed = user_seed
        self.noun = noun
        self.catalog_dir = catalog_dir
        self.checkpoint_dir = checkpoint_dir
        self.checkpoint_every = checkpoint_every
        self.max_steps = max_steps

    def _train_config(self) -> TrainConfig:
        return TrainConfig(self.max_rounds, self.neg_position, self.ordering, self.seed,
                           self.checkpoint_every, self.max_steps).validate()

    def fit(self, dataset: Dataset, split: Split | None = None, store: MemoryStore | None = None,
            resume: bool = False):
        if self.gateway is None:
            raise ValueError("AgentCF needs a gateway")
        check_strategy(self.strategy, AGENT_STRATEGIES)
        check_dataset(dataset)
        split = check_split(split if split is not None else leave_one_out(dataset))
        cfg = self._train_config()
        self.catalog_ = Catalog(self.catalog_dir)
        self.items_ = dataset.items
        self.split_ = split
        self.pop_ = popularity_table(dataset)
        self.store_ = store if store is not None else init_store(dataset, self.user_seed, self.noun, split.users)
        self.agents_ = AgentSystem(self.gateway, self.store_, self.items_, self.catalog_)
        self.trace_ = optimize(split, self.agents_, self.pop_, cfg, self.checkpoint_dir, resume)
        return self

    def ranker(self, strategy: str | None = None):
        check_is_fitted(self, "store_")
        strategy = check_strategy(strategy or self.strategy, AGENT_STRATEGIES)
        args = (self.gateway, self.store_, self.items_, self.catalog_, self.noun)
        if strategy == "B":
            return BasicRanker(*args)
        if strategy == "B_R":
            return RetrievalRanker(*args, k=self.retrieval_k)
        if strategy == "B_H":
            return HistoryRanker(*args, history=self.split_.train, cap=self.history_cap)
        return LLMRankRanker(self.gateway, self.items_, self.split_.train, self.catalog_, self.noun,
                             cap=self.history_cap)

    def rank(self, slate: CandidateSlate, strategy: str | None = None) -> RankingResult:
        return self.ranker(strategy).rank(slate)

    def alignment_curve(self, last_n_steps: int = 3) -> list[dict]:
        check_is_fitted(self, "trace_")
        return alignment_curve(self.trace_, last_n_steps)
