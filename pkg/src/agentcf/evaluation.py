"""Ranking metrics, slate construction, the repetition protocol, and probes."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import re
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .agents import AgentSystem
from .corpus import PopularityTable, Split, sample_negative
from .errors import AgentCFError, DataError, GatewayError, ParseError, ReplayMiss
from .memory import MemoryStore
from .optimizer import TrainConfig, optimize
from .ranker import CandidateSlate, RankingResult

logger = logging.getLogger(__name__)

KS = (1, 5, 10)
REPORT_SCHEMA = 1


def ndcg_at_k(result, k: int) -> float:
    """NDCG@k with one relevant item; ``result`` is a RankingResult or a 1-based rank."""
    rank = result.target_rank if isinstance(result, RankingResult) else int(result)
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if k < 1:
        raise ValueError("k must be >= 1")
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def _user_key(user_id: str) -> int:
    return int.from_bytes(hashlib.sha256(user_id.encode("utf-8")).digest()[:8], "big")


def slate_rng(seed: int, rep: int, user_id: str) -> np.random.Generator:
    return np.random.default_rng([seed, rep, _user_key(user_id)])


def build_slate(user_id: str, split: Split, universe, rng: np.random.Generator, n: int = 10,
                rep: int = 0) -> CandidateSlate:
    """Target plus ``n - 1`` uniform negatives from outside the user's history, shuffled."""
    history = set(split.history(user_id))
    pool = sorted(i for i in set(universe) if i not in history)
    if len(pool) < n - 1:
        raise DataError(f"only {len(pool)} items outside the history of {user_id}; need {n - 1}", user=user_id)
    picks = rng.choice(len(pool), size=n - 1, replace=False)
    cands = [pool[j] for j in picks] + [split.test_target[user_id]]
    order = rng.permutation(n)
    return CandidateSlate(user_id, [cands[j] for j in order], split.test_target[user_id], rep)


@dataclass
class MetricsReport:
    metrics: dict = field(default_factory=dict)
    n_users: int = 0
    n_reps: int = 0
    dataset: str = ""
    excluded: list = field(default_factory=list)
    per_rep: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = REPORT_SCHEMA
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


ROW_FIELDS = ["user_id", "strategy", "rep", "target_rank", "fallback", "prompt_digest"]


def write_rows(rows, path, ks=KS) -> None:
    fields = ROW_FIELDS + [f"ndcg@{k}" for k in ks]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.10f}" if isinstance(v, float) else v) for k, v in row.items()})


def run_eval(strategies: dict, split: Split, universe, reps=3, seed: int = 0, ks=KS, n: int = 10,
             dataset: str = "", users=None, results_path=None):
    """Rank every user's slate with every strategy, for each repetition.

    ``reps`` is a count or an explicit list of repetition indices; each index
    seeds its own slates. NDCG is averaged over users within a repetition and
    then over repetitions. A user-repetition whose ranking fails under any
    strategy is dropped for all of them, except a replay miss, which aborts
    the run. Returns ``(report, rows)``.
    """
    if not strategies:
        raise ValueError("run_eval needs at least one strategy")
    rep_ids = list(range(reps)) if isinstance(reps, int) else list(reps)
    users = sorted(users) if users is not None else split.users
    rows, per_rep, excluded = [], {name: [] for name in strategies}, []
    out = open(results_path, "w", encoding="utf-8") if results_path else None
    try:
        for rep in rep_ids:
            rep_scores = {name: {k: [] for k in ks} for name in strategies}
            for user in users:
                slate = build_slate(user, split, universe, slate_rng(seed, rep, user), n, rep)
                results = {}
                try:
                    for name, ranker in strategies.items():
                        results[name] = ranker.rank(slate)
                except (GatewayError, ParseError, KeyError) as exc:
                    if isinstance(exc, ReplayMiss):
                        raise  # the store does not cover this run; every later user would miss too
                    logger.warning("excluding user %s rep %d: %s", user, rep, exc)
                    excluded.append({"user_id": user, "rep": rep, "error": str(exc)})
                    continue
                for name, res in results.items():
                    row = {"user_id": user, "strategy": name, "rep": rep, "target_rank": res.target_rank,
                           "fallback": res.fallback, "prompt_digest": res.prompt_digest}
                    for k in ks:
                        row[f"ndcg@{k}"] = v = ndcg_at_k(res, k)
                        rep_scores[name][k].append(v)
                    rows.append(row)
                    if out is not None:
                        out.write(json.dumps({**res.to_dict(), "strategy": name}, sort_keys=True) + "\n")
            for name in strategies:
                per_rep[name].append({f"ndcg@{k}": _mean(rep_scores[name][k]) for k in ks})
    finally:
        if out is not None:
            out.close()
    metrics = {
        name: {f"ndcg@{k}": _mean([r[f"ndcg@{k}"] for r in per_rep[name] if not math.isnan(r[f"ndcg@{k}"])])
               for k in ks}
        for name in strategies
    }
    report = MetricsReport(metrics, len(users), len(rep_ids), dataset, excluded, per_rep)
    return report, rows


def _mean(values) -> float:
    values = list(values)
    return float(sum(values) / len(values)) if values else float("nan")


# ---------------------------------------------------------------------------
# probes


@dataclass
class BiasProbeReport:
    rates: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"schema_version": REPORT_SCHEMA, "rates": self.rates}


def bias_probe(agents: AgentSystem, split: Split, pop: PopularityTable, strategies=("AgentCF", "LLMRank"),
               seed: int = 0, orders=("popular_first", "popular_second"), users=None) -> BiasProbeReport:
    """Pairwise trials between each user's held-out item and a popularity-sampled item.

    Each trial is asked in every order listed in ``orders`` so that a
    preference for the popular item can be told apart from a preference for
    position 1. ``AgentCF`` uses the agents' learned memories; ``LLMRank``
    sees only identity texts of the user's history.
    """
    allowed = {"AgentCF", "LLMRank"}
    if set(strategies) - allowed:
        raise ValueError(f"unknown bias-probe strategies {sorted(set(strategies) - allowed)}")
    users = sorted(users) if users is not None else split.users
    trials = []
    for user in users:
        positive = split.test_target[user]
        popular = sample_negative(pop, set(split.history(user)), slate_rng(seed, 0, user))
        for order in orders:
            pair = (popular, positive) if order == "popular_first" else (positive, popular)
            trials.append((user, positive, popular, pair))
    if not trials:
        raise AgentCFError("bias probe has no trials")
    rates = {}
    for strategy in strategies:
        n = n_pop = n_first = 0
        for user, positive, popular, pair in trials:
            if strategy == "AgentCF":
                outcome = agents.select_pairwise(user, pair[0], pair[1], positive)
            else:
                outcome = agents.select_pairwise_from_history(split.train[user], pair[0], pair[1], positive)
            if outcome is None:
                continue
            n += 1
            n_pop += outcome.chosen == popular
            n_first += outcome.position == 1
        rates[strategy] = {
            "n_trials": n,
            "popular_pick_rate": n_pop / n if n else float("nan"),
            "first_position_pick_rate": n_first / n if n else float("nan"),
        }
    return BiasProbeReport(rates)


def interaction_hops(split: Split, seed_user: str) -> dict[str, int | None]:
    """User-to-user hop count from ``seed_user`` over the bipartite train graph."""
    item_users: dict[str, list[str]] = {}
    for u, seq in split.train.items():
        for i in seq:
            item_users.setdefault(i, []).append(u)
    dist = {seed_user: 0}
    queue = deque([seed_user])
    while queue:
        u = queue.popleft()
        for i in set(split.train.get(u, ())):
            for v in item_users[i]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
    return {u: dist.get(u) for u in sorted(split.train)}


def mentions(text: str, keywords) -> bool:
    low = text.lower()
    return any(re.search(r"\b" + re.escape(k.lower()) + r"\b", low) for k in keywords)


@dataclass
class PropagationReport:
    per_hop: dict = field(default_factory=dict)
    users: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"schema_version": REPORT_SCHEMA, "per_hop": self.per_hop, "users": self.users}


def propagation_probe(agents: AgentSystem, seed_user: str, special_text: str, keywords, split: Split,
                      pop: PopularityTable, cfg: TrainConfig | None = None, query: bool = False,
                      question: str | None = None) -> PropagationReport:
    """Plant ``special_text`` in one user's memory, train, and see who picked it up.

    ``agents.store`` must be a fresh store; it is the only state mutated.
    """
    keywords = [k for k in keywords if k and k.strip()]
    if not keywords:
        raise ValueError("propagation probe needs at least one keyword")
    store = agents.store
    store.set_short_term(seed_user, special_text)
    optimize(split, agents, pop, cfg)
    hops = interaction_hops(split, seed_user)
    users, per_hop = {}, {}
    for u, hop in hops.items():
        mem = store.users[u]
        hit = mentions(" ".join([mem.short_term] + mem.long_term), keywords)
        rec = {"hop": hop, "keyword": hit}
        if query:
            kwargs = {"question": question} if question else {}
            try:
                rec["yes"] = agents.query_preference(u, **kwargs).choice
            except ParseError:
                rec["yes"] = None
        users[u] = rec
        key = "unreachable" if hop is None else str(hop)
        bucket = per_hop.setdefault(key, {"n_users": 0, "n_keyword": 0, "n_yes": 0, "n_answered": 0})
        bucket["n_users"] += 1
        bucket["n_keyword"] += hit
        if query and rec["yes"] is not None:
            bucket["n_answered"] += 1
            bucket["n_yes"] += rec["yes"]
    for bucket in per_hop.values():
        bucket["keyword_fraction"] = bucket["n_keyword"] / bucket["n_users"]
        if query:
            bucket["yes_fraction"] = bucket["n_yes"] / bucket["n_answered"] if bucket["n_answered"] else float("nan")
    return PropagationReport(per_hop, users)


@dataclass
class ColdStartReport:
    modes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"schema_version": REPORT_SCHEMA, "modes": self.modes}


def cold_start_eval(cold_items, warmed: dict, split: Split, universe, store: MemoryStore, ranker_factory,
                    reps=3, seed: int = 0, ks=KS, n: int = 10, identity_texts=None) -> ColdStartReport:
    """Paired NDCG with each cold item's identity-only memory versus its warmed memory.

    ``warmed`` maps a neighbor mode to ``{item_id: warmed text}``.
    ``ranker_factory(store)`` builds a ranker over a given memory store. Users
    evaluated for a cold item are those whose held-out target is that item.
    ``store`` itself is never modified.
    """
    cold_items = list(cold_items)
    if identity_texts is None:
        raise ValueError("cold_start_eval needs the identity-only texts of the cold items")
    rep_ids = list(range(reps)) if isinstance(reps, int) else list(reps)
    modes = {}
    for mode, texts in warmed.items():
        missing = [i for i in cold_items if i not in texts]
        if missing:
            raise AgentCFError(f"no warmup result for {missing[:3]} in mode {mode!r}")
        cold_store, warm_store = store.copy(), store.copy()
        for i in cold_items:
            cold_store.set_item_text(i, identity_texts[i])
            warm_store.set_item_text(i, texts[i])
        cold_ranker, warm_ranker = ranker_factory(cold_store), ranker_factory(warm_store)
        deltas = {k: [] for k in ks}
        cold_vals = {k: [] for k in ks}
        warm_vals = {k: [] for k in ks}
        targets = set(cold_items)
        for rep in rep_ids:
            for user in split.users:
                if split.test_target[user] not in targets:
                    continue
                slate = build_slate(user, split, universe, slate_rng(seed, rep, user), n, rep)
                rc, rw = cold_ranker.rank(slate), warm_ranker.rank(slate)
                for k in ks:
                    c, w = ndcg_at_k(rc, k), ndcg_at_k(rw, k)
                    cold_vals[k].append(c)
                    warm_vals[k].append(w)
                    deltas[k].append(w - c)
        modes[mode] = {
            "n_pairs": len(deltas[ks[0]]),
            **{f"cold_ndcg@{k}": _mean(cold_vals[k]) for k in ks},
            **{f"warm_ndcg@{k}": _mean(warm_vals[k]) for k in ks},
            **{f"delta_ndcg@{k}": _mean(deltas[k]) for k in ks},
        }
    return ColdStartReport(modes)
