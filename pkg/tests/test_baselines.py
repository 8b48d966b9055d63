import math
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from agentcf.baselines import (
    BM25Ranker,
    BPRConfig,
    BPRRanker,
    MFModel,
    PopRanker,
    bm25_rank,
    bpr_loss_grad,
    bpr_rank,
    bpr_train,
    pop_rank,
)
from agentcf.bm25 import BM25
from agentcf.corpus import PopularityTable, Split
from agentcf.errors import SchemaVersionError
from agentcf.ranker import CandidateSlate


def two_block(n_users=50, n_items=50, per_user=8, seed=0):
    rng = np.random.default_rng(seed)
    return {f"u{b}_{k}": [f"i{b}_{j}" for j in rng.choice(n_items, per_user, replace=False)]
            for b in range(2) for k in range(n_users)}


# popularity


def test_pop_rank_examples():
    slate = CandidateSlate("u", ["a", "b", "c"], "b")
    assert pop_rank(slate, PopularityTable({"a": 5, "b": 1, "c": 3})).permutation == ["a", "c", "b"]
    assert pop_rank(slate, PopularityTable({"a": 2, "b": 2, "c": 2})).permutation == ["a", "b", "c"]


def test_pop_rank_max_negative():
    slate = CandidateSlate("u", ["t", "n1", "n2"], "t")
    assert pop_rank(slate, PopularityTable({"t": 4, "n1": 9, "n2": 1})).target_rank >= 2


@given(st.dictionaries(st.sampled_from("abcdef"), st.integers(1, 50), min_size=3), st.integers(1, 20))
def test_pop_scale_invariance(counts, factor):
    slate = CandidateSlate("u", sorted(counts), sorted(counts)[0])
    pop = PopularityTable(counts)
    assert pop_rank(slate, pop).permutation == pop_rank(slate, pop.scaled(factor)).permutation


def test_pop_ranker_counts_train_only():
    split = Split(train={"u": ["a", "b"], "v": ["a"]}, test_target={"u": "c", "v": "c"})
    r = PopRanker().fit(split)
    assert r.pop_.counts == {"a": 2, "b": 1}
    with pytest.raises(NotFittedError):
        PopRanker().rank(CandidateSlate("u", ["a", "b"], "a"))


# BM25


def test_bm25_hand_oracle():
    docs = ["jazz piano trio", "rock guitar", "jazz guitar solo jazz"]
    # N=3, avgdl=3; idf(jazz)=idf(guitar)=ln(1.5/2.5+1); norm=1.2*(0.25+0.75*dl/3)
    expected = [0.470004, 0.544215, 1.004465]
    got = BM25(docs).scores("jazz guitar")
    assert [round(s, 6) for s in got] == expected
    slate = CandidateSlate("u", ["d1", "d2", "d3"], "d3")
    res = bm25_rank(slate, ["jazz", "guitar"], dict(zip(["d1", "d2", "d3"], docs)))
    assert [round(s, 6) for s in res.scores] == expected
    assert res.permutation == ["d3", "d2", "d1"]


def test_bm25_single_shared_word():
    texts = {f"c{k}": f"filler{k} words" for k in range(10)}
    texts["c7"] = "trombone words"
    slate = CandidateSlate("u", list(texts), "c7")
    assert bm25_rank(slate, ["trombone"], texts).target_rank == 1


def test_bm25_empty_history_and_texts():
    slate = CandidateSlate("u", ["a", "b", "c"], "c")
    assert bm25_rank(slate, [], {"a": "x", "b": "y", "c": "z"}).permutation == ["a", "b", "c"]
    assert bm25_rank(slate, ["x"], {}).permutation == ["a", "b", "c"]


def test_bm25_ranker_estimator(toy_dataset, toy_split):
    r = BM25Ranker(toy_dataset.items).fit(toy_split)
    res = r.rank(CandidateSlate("u1", ["i03", "i19"], "i03"))
    assert sorted(res.permutation) == ["i03", "i19"]
    with pytest.raises(ValueError):
        BM25Ranker().fit(toy_split)


# BPR


def _loss(u, i, j, reg):
    x = u @ (i - j)
    return -math.log(1 / (1 + math.exp(-x))) + reg * (u @ u + i @ i + j @ j)


@pytest.mark.parametrize("seed", range(5))
def test_bpr_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    u, i, j = (rng.normal(0, 0.5, 8) for _ in range(3))
    reg, eps = 0.01, 1e-5
    loss, du, di, dj = bpr_loss_grad(u, i, j, reg)
    assert loss == pytest.approx(_loss(u, i, j, reg), rel=1e-12)
    worst = 0.0
    for vec, grad in ((u, du), (i, di), (j, dj)):
        for k in range(len(vec)):
            plus, minus = vec.copy(), vec.copy()
            plus[k] += eps
            minus[k] -= eps
            args_p = [plus if v is vec else v for v in (u, i, j)]
            args_m = [minus if v is vec else v for v in (u, i, j)]
            numeric = (_loss(*args_p, reg) - _loss(*args_m, reg)) / (2 * eps)
            worst = max(worst, abs(numeric - grad[k]) / max(abs(numeric), abs(grad[k]), 1e-8))
    assert worst < 1e-4


def test_bpr_block_separation_and_speed():
    train = two_block()
    assert sum(map(len, train.values())) == 800
    start = time.perf_counter()
    model = bpr_train(train, BPRConfig(d=64, epochs=200))
    assert time.perf_counter() - start < 30
    wins = total = 0
    for u in train:
        b = int(u[1])
        for i in range(50):
            for j in range(50):
                wins += model.score(u, f"i{b}_{i}") > model.score(u, f"i{1 - b}_{j}")
                total += 1
    assert wins / total >= 0.95


def _mean_loss(model, triples, reg):
    return np.mean([bpr_loss_grad(model.user_vecs[model._u[u]], model.item_vecs[model._i[i]],
                                  model.item_vecs[model._i[j]], reg)[0] for u, i, j in triples])


def test_bpr_loss_decreases():
    train = two_block(n_users=10, n_items=10, per_user=4)
    rng = np.random.default_rng(1)
    triples = []
    for u, seq in train.items():
        b = int(u[1])
        triples.append((u, seq[0], f"i{1 - b}_{rng.integers(10)}"))
    before = _mean_loss(bpr_train(train, BPRConfig(d=16, epochs=0)), triples, 1e-4)
    after = _mean_loss(bpr_train(train, BPRConfig(d=16, epochs=50)), triples, 1e-4)
    assert after < before


def test_zero_epochs_is_initialization():
    train = {"u": ["a", "b"], "v": ["c"]}
    m = bpr_train(train, BPRConfig(d=4, epochs=0, seed=3))
    rng = np.random.default_rng(3)
    scale = 0.1 / math.sqrt(4)
    np.testing.assert_array_equal(m.user_vecs, rng.normal(0, scale, (2, 4)))
    np.testing.assert_array_equal(m.item_vecs, rng.normal(0, scale, (3, 4)))


def test_bpr_deterministic_and_skips_saturated_users(caplog):
    train = {"u": ["a", "b"], "v": ["a", "b", "c"], "w": ["c"]}
    a = bpr_train(train, BPRConfig(d=4, epochs=3))
    b = bpr_train(train, BPRConfig(d=4, epochs=3))
    np.testing.assert_array_equal(a.user_vecs, b.user_vecs)
    assert "every item" in caplog.text
    with pytest.raises(ValueError):
        bpr_train({"u": []})
    with pytest.raises(ValueError):
        BPRConfig(d=0).validate()


def test_bpr_rank_geometry():
    model = MFModel(["u"], ["a", "b", "c"], np.array([[1.0, 0.0]]), np.array([[0.0, 1.0], [2.0, 0.0], [0.0, -1.0]]))
    slate = CandidateSlate("u", ["a", "b", "c", "zz"], "b")
    res = bpr_rank(model, slate)
    assert res.permutation[0] == "b"
    assert res.scores == [model.user_vecs[0] @ model.item_vecs[k] for k in range(3)] + [0.0]
    zero = MFModel(["u"], ["a", "b"], np.zeros((1, 2)), np.zeros((2, 2)))
    assert bpr_rank(zero, CandidateSlate("u", ["b", "a"], "a")).permutation == ["b", "a"]


def test_mf_snapshot(tmp_path):
    m = bpr_train({"u": ["a"], "v": ["b"]}, BPRConfig(d=3, epochs=2))
    m.save(tmp_path / "mf.json")
    back = MFModel.load(tmp_path / "mf.json")
    np.testing.assert_array_equal(back.item_vecs, m.item_vecs)
    assert back.users == m.users
    with pytest.raises(SchemaVersionError):
        MFModel.from_dict({**m.to_dict(), "schema_version": 2})


def test_bpr_ranker_clone(toy_split):
    r = BPRRanker(d=8, epochs=5)
    assert clone(r).get_params() == r.get_params()
    fitted = r.fit(toy_split)
    assert sorted(fitted.rank(CandidateSlate("u1", ["i03", "i19"], "i03")).permutation) == ["i03", "i19"]
