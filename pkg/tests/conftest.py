from pathlib import Path

import pytest
import yaml

from agentcf.agents import AgentSystem
from agentcf.corpus import Dataset, ItemIdentity, leave_one_out, popularity_table
from agentcf.llm import Gateway
from agentcf.recommender import init_store
from agentcf.synthetic import planted_dataset

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def transcripts():
    return yaml.safe_load((FIXTURES / "transcripts.yaml").read_text(encoding="utf-8"))


def identity(doc) -> ItemIdentity:
    return ItemIdentity(doc["item_id"], doc["title"], tuple(doc["categories"]))


@pytest.fixture
def toy_dataset():
    """5 users, 20 items, interleaved timestamps."""
    items = {f"i{k:02d}": ItemIdentity(f"i{k:02d}", f"Album {chr(65 + k)}{chr(65 + k)}", ("Rock",)) for k in range(20)}
    seqs = {
        "u1": ["i00", "i01", "i02", "i03"],
        "u2": ["i01", "i02", "i04", "i05"],
        "u3": ["i06", "i07", "i08"],
        "u4": ["i00", "i09", "i10", "i11"],
        "u5": ["i12", "i13", "i14", "i15"],
    }
    times = {u: [10 * k + n for k in range(len(s))] for n, (u, s) in enumerate(sorted(seqs.items()))}
    return Dataset(items=items, sequences=seqs, timestamps=times)


@pytest.fixture
def toy_split(toy_dataset):
    return leave_one_out(toy_dataset)


@pytest.fixture
def planted():
    return planted_dataset()


def make_agents(ds, responder, split=None, user_seed=None):
    split = split or leave_one_out(ds)
    kwargs = {"user_seed": user_seed} if user_seed else {}
    store = init_store(ds, users=split.users, **kwargs)
    gateway = Gateway("script", responder=responder)
    return AgentSystem(gateway, store, ds.items), split, popularity_table(ds)


@pytest.fixture
def agents_factory():
    return make_agents
