"""Agent-based collaborative filtering with language-model user and item agents."""

from .agents import AgentSystem, ReviewStore
from .baselines import BM25Ranker, BPRRanker, PopRanker
from .corpus import Dataset, ItemIdentity, Split, ingest, leave_one_out, popularity_table, sample_subset
from .llm import ChatRequest, Gateway, ReplayStore, TaskKind
from .memory import MemoryStore
from .optimizer import TrainConfig, optimize
from .ranker import CandidateSlate, RankingResult
from .recommender import AgentCF

__version__ = "0.1.0"

__all__ = [
    "AgentCF",
    "AgentSystem",
    "BM25Ranker",
    "BPRRanker",
    "CandidateSlate",
    "ChatRequest",
    "Dataset",
    "Gateway",
    "ItemIdentity",
    "MemoryStore",
    "PopRanker",
    "RankingResult",
    "ReplayStore",
    "ReviewStore",
    "Split",
    "TaskKind",
    "TrainConfig",
    "ingest",
    "leave_one_out",
    "optimize",
    "popularity_table",
    "sample_subset",
]
