"""Listwise LLM ranking over candidate slates."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import ItemIdentity
from .errors import UnparsableRanking
from .llm import ChatRequest, Gateway, Message, TaskKind
from .memory import MemoryStore
from .prompts import Catalog, parse_ranking

logger = logging.getLogger(__name__)

STRATEGIES = ("B", "B_R", "B_H", "LLMRank", "Pop", "BM25", "BPR", "Random", "Oracle")
HISTORY_CAP = 20


@dataclass(frozen=True)
class CandidateSlate:
    user_id: str
    candidates: tuple
    target: str
    rep: int = 0

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if self.target not in self.candidates:
            raise ValueError("slate target must be one of its candidates")
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError("slate candidates must be distinct")

    @property
    def n(self) -> int:
        return len(self.candidates)


@dataclass
class RankingResult:
    slate: CandidateSlate
    permutation: list[str]
    strategy: str
    repetition: int = 0
    prompt_digest: str = ""
    fallback: bool = False
    scores: list[float] | None = field(default=None, repr=False)

    def __post_init__(self):
        if sorted(self.permutation) != sorted(self.slate.candidates):
            raise ValueError("ranking is not a permutation of the slate's candidates")

    @property
    def target_rank(self) -> int:
        return self.permutation.index(self.slate.target) + 1

    def to_dict(self) -> dict:
        return {
            "user_id": self.slate.user_id,
            "candidates": list(self.slate.candidates),
            "target": self.slate.target,
            "strategy": self.strategy,
            "repetition": self.repetition,
            "permutation": self.permutation,
            "prompt_digest": self.prompt_digest,
            "fallback": self.fallback,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)


def sort_by_scores(slate: CandidateSlate, scores, strategy: str) -> RankingResult:
    """Descending score order; ties keep presentation order."""
    scores = [float(s) for s in scores]
    order = sorted(range(slate.n), key=lambda j: (-scores[j], j))
    return RankingResult(slate, [slate.candidates[j] for j in order], strategy, slate.rep, scores=scores)


_RANK_REMINDER = (
    "Your previous output did not follow the required format. Please output a numbered list "
    "of the titles of all {n} candidate CDs, one per line, in the format: \"1. [Title of a CD]\"."
)


class LLMRanker:
    """Shared plumbing: build the prompt, call the gateway, parse, re-ask once, fall back."""

    strategy = ""
    template = ""

    def __init__(self, gateway: Gateway, store: MemoryStore, items: dict[str, ItemIdentity],
                 catalog: Catalog | None = None, noun: str = "CD"):
        self.gateway = gateway
        self.store = store
        self.items = items
        self.catalog = catalog or Catalog()
        self.noun = noun

    def candidate_texts(self, slate) -> list[str]:
        return [self.store.items[c].text for c in slate.candidates]

    def bindings(self, slate: CandidateSlate) -> dict:
        raise NotImplementedError

    def request(self, slate: CandidateSlate) -> ChatRequest:
        titles = [self.items[c].title for c in slate.candidates]
        texts = self.candidate_texts(slate)
        block = "\n".join(f'{k}. "{t}": {x}' for k, (t, x) in enumerate(zip(titles, texts), 1))
        bindings = dict(self.bindings(slate), n=slate.n, candidates=block)
        prompt = self.catalog.render(self.template, **bindings)
        meta = {"template": self.template, "bindings": bindings, "user_id": slate.user_id,
                "candidate_ids": list(slate.candidates), "candidate_titles": titles, "candidate_texts": texts}
        return ChatRequest.single(prompt, TaskKind.INFERENCE, meta=meta)

    def rank(self, slate: CandidateSlate) -> RankingResult:
        req = self.request(slate)
        titles = req.meta["candidate_titles"]
        resp = self.gateway.complete(req)
        try:
            parsed = parse_ranking(resp.text, titles)
        except UnparsableRanking:
            retry = ChatRequest(
                req.messages + [Message("assistant", resp.text or "(empty)"),
                                Message("user", _RANK_REMINDER.format(n=slate.n))],
                req.route, meta={**req.meta, "reask": True},
            )
            try:
                parsed = parse_ranking(self.gateway.complete(retry).text, titles)
            except UnparsableRanking:
                logger.warning("%s ranking for user %s unparsable twice; using presentation order",
                               self.strategy, slate.user_id)
                return RankingResult(slate, list(slate.candidates), self.strategy, slate.rep,
                                     prompt_digest=resp.digest, fallback=True)
        perm = [slate.candidates[j] for j in parsed.order]
        return RankingResult(slate, perm, self.strategy, slate.rep, prompt_digest=resp.digest)


class BasicRanker(LLMRanker):
    """Short-term user memory plus candidate memories."""

    strategy, template = "B", "rank_basic"

    def bindings(self, slate):
        return {"user_memory": self.store.users[slate.user_id].short_term}


class RetrievalRanker(LLMRanker):
    """Adds long-term entries retrieved with the candidate memories as queries."""

    strategy, template = "B_R", "rank_with_retrieval"

    def __init__(self, *args, k: int = 3, **kwargs):
        super().__init__(*args, **kwargs)
        self.k = k

    def bindings(self, slate):
        retrieved = self.store.retrieve_long_term(slate.user_id, self.candidate_texts(slate), self.k)
        return {"retrieved": retrieved.rendered, "user_memory": self.store.users[slate.user_id].short_term}


class HistoryRanker(LLMRanker):
    """Adds the memories of the user's past items, oldest first."""

    strategy, template = "B_H", "rank_with_history"

    def __init__(self, *args, history: dict[str, list[str]] | None = None, cap: int = HISTORY_CAP, **kwargs):
        super().__init__(*args, **kwargs)
        self.history = history or {}
        self.cap = min(cap, HISTORY_CAP)

    def bindings(self, slate):
        past = self.history.get(slate.user_id, [])[-self.cap:] if self.cap > 0 else []
        lines = "\n".join(f"{k}. {self.store.items[i].text}" for k, i in enumerate(past, 1))
        return {"user_memory": self.store.users[slate.user_id].short_term, "history": lines}


class LLMRankRanker(LLMRanker):
    """Zero-shot ranking from identity texts of the past items; reads no learned memory."""

    strategy, template = "LLMRank", "llmrank"

    def __init__(self, gateway, items, history: dict[str, list[str]] | None = None, catalog=None,
                 noun: str = "CD", cap: int = HISTORY_CAP):
        super().__init__(gateway, MemoryStore(), items, catalog, noun)
        self.history = history or {}
        self.cap = min(cap, HISTORY_CAP)

    def candidate_texts(self, slate):
        return [self.items[c].render(self.noun) for c in slate.candidates]

    def bindings(self, slate):
        past = self.history.get(slate.user_id, [])[-self.cap:] if self.cap > 0 else []
        return {"history": "\n".join(f"{k}. {self.items[i].render(self.noun)}" for k, i in enumerate(past, 1))}


class RandomRanker:
    """Uniformly random permutation, reproducible per (seed, user, repetition)."""

    strategy = "Random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def rank(self, slate: CandidateSlate) -> RankingResult:
        key = int.from_bytes(hashlib.sha256(slate.user_id.encode("utf-8")).digest()[:8], "big")
        rng = np.random.default_rng([self.seed, slate.rep, key])
        perm = [slate.candidates[j] for j in rng.permutation(slate.n)]
        return RankingResult(slate, perm, self.strategy, slate.rep)


class OracleRanker:
    """Puts the target first; the upper bound for every metric."""

    strategy = "Oracle"

    def rank(self, slate: CandidateSlate) -> RankingResult:
        rest = [c for c in slate.candidates if c != slate.target]
        return RankingResult(slate, [slate.target] + rest, self.strategy, slate.rep)
