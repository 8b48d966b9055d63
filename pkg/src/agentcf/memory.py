"""Natural-language memories of user and item agents."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .bm25 import BM25
from .corpus import ItemIdentity
from .errors import AgentCFError, SchemaVersionError

logger = logging.getLogger(__name__)

MEMORY_SCHEMA = 1
DEFAULT_USER_SEED = "I enjoy listening to CDs very much."


@dataclass
class UserMemory:
    short_term: str
    long_term: list[str] = field(default_factory=list)


@dataclass
class ItemMemory:
    text: str


@dataclass
class RetrievedPreference:
    entries: list[tuple[int, float, str]]

    @property
    def rendered(self) -> str:
        return " ".join(text for _, _, text in self.entries)


class MemoryStore:
    """All agent memories. ``version`` increases on every mutation."""

    def __init__(self):
        self.users: dict[str, UserMemory] = {}
        self.items: dict[str, ItemMemory] = {}
        self.version = 0

    def _bump(self):
        self.version += 1

    # -- initialization ---------------------------------------------------
    def init_user(self, user_id: str, seed_text: str = DEFAULT_USER_SEED) -> UserMemory:
        if not seed_text or not seed_text.strip():
            raise ValueError("user seed text must be non-empty")
        if user_id in self.users:
            raise AgentCFError(f"user {user_id} is already initialized")
        self.users[user_id] = mem = UserMemory(seed_text)
        self._bump()
        return mem

    def init_item(self, identity: ItemIdentity, noun: str = "CD") -> ItemMemory:
        if not identity.categories:
            logger.warning("item %s has no categories", identity.item_id)
        self.items[identity.item_id] = mem = ItemMemory(identity.render(noun))
        self._bump()
        return mem

    # -- mutation ---------------------------------------------------------
    def _user(self, user_id):
        try:
            return self.users[user_id]
        except KeyError:
            raise AgentCFError(f"unknown user {user_id}") from None

    def set_short_term(self, user_id: str, text: str) -> None:
        self._user(user_id).short_term = text
        self._bump()

    def set_item_text(self, item_id: str, text: str) -> None:
        if item_id not in self.items:
            raise AgentCFError(f"unknown item {item_id}")
        self.items[item_id].text = text
        self._bump()

    def append_long_term(self, user_id: str, previous_short: str) -> UserMemory:
        mem = self._user(user_id)
        mem.long_term.append(previous_short)
        self._bump()
        return mem

    # -- retrieval --------------------------------------------------------
    def retrieve_long_term(self, user_id: str, queries: list[str], k: int = 3) -> RetrievedPreference:
        """Top-``k`` long-term entries by BM25 against the concatenated queries."""
        pool = self._user(user_id).long_term
        if not pool or k <= 0:
            return RetrievedPreference([])
        index = BM25(pool)
        top = index.top_k(" ".join(queries), k)
        return RetrievedPreference([(i, s, pool[i]) for i, s in top])

    # -- persistence ------------------------------------------------------
    def copy(self) -> "MemoryStore":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        return {
            "schema_version": MEMORY_SCHEMA,
            "version": self.version,
            "users": {u: {"short": m.short_term, "long": list(m.long_term)} for u, m in sorted(self.users.items())},
            "items": {i: {"text": m.text} for i, m in sorted(self.items.items())},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MemoryStore":
        if not isinstance(doc, dict) or doc.get("schema_version") != MEMORY_SCHEMA:
            got = doc.get("schema_version") if isinstance(doc, dict) else None
            raise SchemaVersionError(f"unsupported memory snapshot schema {got!r}")
        store = cls()
        try:
            store.users = {u: UserMemory(v["short"], list(v["long"])) for u, v in doc["users"].items()}
            store.items = {i: ItemMemory(v["text"]) for i, v in doc["items"].items()}
            store.version = int(doc["version"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaVersionError(f"corrupted memory snapshot: {exc!r}") from None
        return store

    def snapshot(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def load(cls, document: str) -> "MemoryStore":
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaVersionError(f"corrupted memory snapshot: {exc.msg}") from None
        return cls.from_dict(doc)

    def save(self, path) -> None:
        Path(path).write_text(self.snapshot(), encoding="utf-8")

    @classmethod
    def load_file(cls, path) -> "MemoryStore":
        return cls.load(Path(path).read_text(encoding="utf-8"))
