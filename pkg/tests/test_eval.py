import csv
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from agentcf.corpus import Dataset, ItemIdentity, Split, leave_one_out, popularity_table
from agentcf.errors import AgentCFError, DataError, GatewayError, ReplayMiss
from agentcf.evaluation import (
    bias_probe,
    build_slate,
    cold_start_eval,
    interaction_hops,
    mentions,
    ndcg_at_k,
    propagation_probe,
    run_eval,
    slate_rng,
    write_rows,
)
from agentcf.optimizer import TrainConfig
from agentcf.ranker import BasicRanker, CandidateSlate, OracleRanker, RandomRanker, RankingResult
from agentcf.recommender import init_store
from agentcf.scripted import AlwaysFirst, CopyPhrases, KeywordAffinity, ScriptedResponder
from agentcf.llm import Gateway
from agentcf.synthetic import planted_dataset
from conftest import make_agents

RANDOM_NDCG10 = 0.4543559338  # mean of 1/log2(r+1) over r = 1..10


def test_random_constant():
    assert sum(1 / math.log2(r + 1) for r in range(1, 11)) / 10 == pytest.approx(RANDOM_NDCG10, abs=1e-10)


# NDCG


@pytest.mark.parametrize("rank", range(1, 11))
@pytest.mark.parametrize("k", [1, 5, 10])
def test_ndcg_sweep(rank, k):
    expected = {1: 1.0, 2: 0.6309297535714575, 3: 0.5, 4: 0.43067655807339306, 5: 0.38685280723454163,
                6: 0.35620718710802218, 7: 0.33333333333333333, 8: 0.31546487678572877,
                9: 0.30102999566398120, 10: 0.28906482631788782}[rank]
    assert ndcg_at_k(rank, k) == pytest.approx(expected if rank <= k else 0.0, abs=1e-9)


def test_ndcg_from_result_and_errors():
    slate = CandidateSlate("u", list("abcdefghij"), "c")
    assert ndcg_at_k(RankingResult(slate, list("abcdefghij"), "X"), 10) == 0.5
    with pytest.raises(ValueError):
        ndcg_at_k(0, 5)
    with pytest.raises(ValueError):
        ndcg_at_k(1, 0)


@given(st.integers(1, 50))
def test_ndcg_monotone_in_k(rank):
    vals = [ndcg_at_k(rank, k) for k in range(1, 51)]
    assert vals == sorted(vals) and all(0 <= v <= 1 for v in vals)


# slates


def _split(n_items=10, history=("i0",)):
    items = [f"i{k}" for k in range(n_items)]
    return Split(train={"u": list(history[:-1])}, test_target={"u": history[-1]}), items


def test_slate_forced():
    split, items = _split(10, ("i0",))
    split = Split(train={"u": []}, test_target={"u": "i0"})
    slate = build_slate("u", split, items, np.random.default_rng(0))
    assert sorted(slate.candidates) == sorted(items) and slate.target == "i0"


def test_slate_insufficient():
    split, items = _split(9, ("i0",))
    with pytest.raises(DataError):
        build_slate("u", split, items, np.random.default_rng(0))


def test_slate_deterministic_and_excludes_history():
    split = Split(train={"u": ["i1", "i2"]}, test_target={"u": "i3"})
    items = [f"i{k}" for k in range(30)]
    a = build_slate("u", split, items, slate_rng(4, 1, "u"), rep=1)
    b = build_slate("u", split, items, slate_rng(4, 1, "u"), rep=1)
    assert a == b
    assert not {"i1", "i2"} & set(a.candidates)
    assert a != build_slate("u", split, items, slate_rng(4, 2, "u"), rep=2)


def test_slate_uniformity():
    split = Split(train={"u": ["i1", "i2"]}, test_target={"u": "i0"})
    items = [f"i{k}" for k in range(20)]
    counts = Counter()
    rng = np.random.default_rng(0)
    n = 10_000
    for _ in range(n):
        counts.update(c for c in build_slate("u", split, items, rng).candidates if c != "i0")
    p = 9 / 17
    sigma = math.sqrt(n * p * (1 - p))
    assert len(counts) == 17
    assert all(abs(c - n * p) < 3 * sigma for c in counts.values())


# run_eval


@pytest.fixture(scope="module")
def hundred():
    ds = planted_dataset(n_groups=10, users_per_group=10, items_per_group=10, seq_len=6)
    return leave_one_out(ds), sorted(ds.items)


def test_oracle_is_perfect(hundred):
    split, universe = hundred
    report, _ = run_eval({"oracle": OracleRanker()}, split, universe, reps=1)
    assert report.metrics["oracle"] == {"ndcg@1": 1.0, "ndcg@5": 1.0, "ndcg@10": 1.0}


def test_random_calibration(hundred):
    split, universe = hundred
    assert len(split.users) == 100
    report, rows = run_eval({"random": RandomRanker(seed=0)}, split, universe, reps=3)
    assert abs(report.metrics["random"]["ndcg@10"] - RANDOM_NDCG10) < 0.02
    assert len(rows) == 300


def test_rep_mean_equals_mean_of_reps(hundred):
    split, universe = hundred
    strategies = {"random": RandomRanker(seed=1), "oracle": OracleRanker()}
    full, _ = run_eval(strategies, split, universe, reps=3, seed=9)
    singles = [run_eval(strategies, split, universe, reps=[r], seed=9)[0] for r in range(3)]
    for name in strategies:
        for key, value in full.metrics[name].items():
            assert value == pytest.approx(np.mean([s.metrics[name][key] for s in singles]), abs=1e-12)


def test_metrics_monotone_cutoff(hundred):
    split, universe = hundred
    report, _ = run_eval({"random": RandomRanker()}, split, universe, reps=2)
    m = report.metrics["random"]
    assert 0 <= m["ndcg@1"] <= m["ndcg@5"] <= m["ndcg@10"] <= 1


class FlakyRanker:
    def __init__(self, bad_user):
        self.bad = bad_user

    def rank(self, slate):
        if slate.user_id == self.bad:
            raise GatewayError("down")
        return OracleRanker().rank(slate)


def test_failures_excluded_pairwise(hundred, tmp_path):
    split, universe = hundred
    users = split.users[:5]
    report, rows = run_eval({"oracle": OracleRanker(), "flaky": FlakyRanker(users[0])}, split, universe,
                            reps=2, users=users, results_path=tmp_path / "rankings.jsonl")
    assert len(report.excluded) == 2
    assert {r["user_id"] for r in rows} == set(users[1:])
    assert len(rows) == 2 * 2 * 4
    write_rows(rows, tmp_path / "results.csv")
    with open(tmp_path / "results.csv") as fh:
        table = list(csv.DictReader(fh))
    assert len(table) == 16 and "ndcg@10" in table[0]
    assert len((tmp_path / "rankings.jsonl").read_text().splitlines()) == 16


def test_replay_miss_aborts(hundred):
    split, universe = hundred
    strict = BasicRanker(Gateway("replay", strict=True), init_store(planted_dataset(10, 10, 10, 6)),
                         planted_dataset(10, 10, 10, 6).items)
    with pytest.raises(ReplayMiss):
        run_eval({"agentcf-b": strict}, split, universe, reps=1)


def test_run_eval_needs_strategies(hundred):
    with pytest.raises(ValueError):
        run_eval({}, *hundred)


# bias probe


def test_bias_probe_always_first(planted):
    agents, split, pop = make_agents(planted, AlwaysFirst())
    report = bias_probe(agents, split, pop)
    for strategy in ("AgentCF", "LLMRank"):
        r = report.rates[strategy]
        assert r["first_position_pick_rate"] == 1.0
        assert r["popular_pick_rate"] == 0.5
        assert r["n_trials"] == 80


def test_bias_probe_position_blind(planted):
    agents, split, pop = make_agents(planted, KeywordAffinity())
    report = bias_probe(agents, split, pop)
    for strategy in ("AgentCF", "LLMRank"):
        assert report.rates[strategy]["first_position_pick_rate"] == pytest.approx(0.5, abs=0.05)


def test_bias_probe_is_read_only(planted):
    agents, split, pop = make_agents(planted, KeywordAffinity())
    before = agents.store.snapshot()
    bias_probe(agents, split, pop, strategies=("AgentCF",))
    assert agents.store.snapshot() == before
    with pytest.raises(ValueError):
        bias_probe(agents, split, pop, strategies=("Other",))
    with pytest.raises(AgentCFError):
        bias_probe(agents, split, pop, users=[])


# propagation


def test_interaction_hops():
    split = Split(train={"a": ["x"], "b": ["x", "y"], "c": ["y"], "d": ["z"]},
                  test_target={u: "t" for u in "abcd"})
    assert interaction_hops(split, "a") == {"a": 0, "b": 1, "c": 2, "d": None}


def test_mentions_word_boundary():
    assert mentions("It will Resonate deeply", ["resonate"])
    assert not mentions("resonated", ["resonate"])
    assert mentions("a deep emotional connection", ["emotional connection"])


def test_propagation_copy_phrases(planted, transcripts):
    doc = transcripts["propagation"]
    agents, split, pop = make_agents(planted, CopyPhrases())
    report = propagation_probe(agents, "U0000", doc["seed_text"], doc["keywords"], split, pop)
    assert report.per_hop["0"]["keyword_fraction"] == 1.0
    assert report.per_hop["1"]["keyword_fraction"] > 0
    assert report.per_hop["unreachable"]["keyword_fraction"] == 0.0


def test_propagation_without_training(planted, transcripts):
    doc = transcripts["propagation"]
    agents, split, pop = make_agents(planted, CopyPhrases())
    report = propagation_probe(agents, "U0000", doc["seed_text"], doc["keywords"], split, pop,
                               cfg=TrainConfig(max_steps=0), query=True, question=doc["question"])
    hits = [u for u, r in report.users.items() if r["keyword"]]
    assert hits == ["U0000"]
    assert report.per_hop["0"]["yes_fraction"] == 0.0  # the noop answer is always No
    with pytest.raises(ValueError):
        propagation_probe(agents, "U0000", "x", [" "], split, pop)


# cold start


@pytest.fixture
def cold_world():
    items = {f"i{k}": ItemIdentity(f"i{k}", f"Record {k} Title", ("Misc",)) for k in range(15)}
    ds = Dataset(items=items, sequences={"u": ["i1", "i2", "i0"], "v": ["i3", "i0"], "w": ["i4", "i5"]})
    split = leave_one_out(ds)
    store = init_store(ds, users=split.users)
    for u in ("u", "v"):
        store.set_short_term(u, "I adore theremin soundscapes.")
    return ds, split, store


def _factory(responder, items):
    return lambda store: BasicRanker(Gateway("script", responder=responder), store, items)


def test_cold_start_noop_zero_delta(cold_world):
    ds, split, store = cold_world
    ident = {"i0": ds.items["i0"].render()}
    report = cold_start_eval(["i0"], {"similar": dict(ident)}, split, sorted(ds.items), store,
                             _factory(KeywordAffinity(), ds.items), reps=3, identity_texts=ident)
    m = report.modes["similar"]
    assert m["n_pairs"] == 6
    assert all(m[f"delta_ndcg@{k}"] == 0.0 for k in (1, 5, 10))


def test_cold_start_warm_memory_helps(cold_world):
    ds, split, store = cold_world
    ident = {"i0": ds.items["i0"].render()}
    warmed = {"similar": {"i0": ident["i0"] + " Theremin soundscapes throughout."}}
    before = store.snapshot()
    report = cold_start_eval(["i0"], warmed, split, sorted(ds.items), store,
                             _factory(KeywordAffinity(), ds.items), reps=3, identity_texts=ident)
    assert report.modes["similar"]["delta_ndcg@10"] > 0
    assert report.modes["similar"]["warm_ndcg@1"] == 1.0
    assert store.snapshot() == before


def test_cold_start_missing_warmup(cold_world):
    ds, split, store = cold_world
    with pytest.raises(AgentCFError):
        cold_start_eval(["i0"], {"similar": {}}, split, sorted(ds.items), store,
                        _factory(ScriptedResponder(), ds.items), identity_texts={"i0": "x"})
