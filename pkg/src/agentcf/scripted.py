"""Deterministic responders for ``script`` gateway mode.

A responder is any callable ``(ChatRequest) -> str``. The ones here read the
structured context the agents attach to ``req.meta`` (template name, bindings,
candidate titles) and answer in the formats the prompts ask for, so their output
still goes through the real parsers.
"""

from __future__ import annotations

import hashlib
import logging
import re
from collections import Counter, defaultdict, deque

from .bm25 import tokenize
from .llm import ChatRequest

logger = logging.getLogger(__name__)

_RANK_TEMPLATES = ("rank_basic", "rank_with_retrieval", "rank_with_history", "llmrank")

# Words that appear in every rendered identity text or default seed and carry no preference signal.
STOPWORDS = frozenset(
    """a an and are as at be but by cd cds called category enjoy for from i in is it
    listening much my of on or that the this to very with""".split()
)


def _stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def content_tokens(text: str) -> list[str]:
    return [t for t in tokenize(text) if t not in STOPWORDS]


class ScriptedResponder:
    """Base responder: every behavior is a no-op that keeps memories as they are.

    Selection picks position 1, rankings echo presentation order, yes/no
    questions are answered No.
    """

    def __call__(self, req: ChatRequest) -> str:
        name = req.meta.get("template", "")
        handler = getattr(self, "on_" + name, None)
        if handler is None:
            raise KeyError(f"{type(self).__name__} has no behavior for template {name!r}")
        return handler(req, req.meta.get("bindings", {}))

    @staticmethod
    def choice(title: str, explanation: str = "It fits my taste.") -> str:
        return f"Chosen CD: {title}\nExplanation: {explanation}"

    @staticmethod
    def ranking(titles) -> str:
        return "\n".join(f"{k}. {t}" for k, t in enumerate(titles, 1))

    def on_select(self, req, b):
        return self.choice(req.meta["candidate_titles"][0])

    def on_llmrank_select(self, req, b):
        return self.on_select(req, b)

    def on_reflect_user(self, req, b):
        return f"My updated self-introduction: {b['user_memory']}"

    def on_reflect_item(self, req, b):
        return (f"The updated description of the first CD is: {b['pos_memory']}\n"
                f"The updated description of the second CD is: {b['neg_memory']}")

    def on_consolidate_user(self, req, b):
        return f"My updated self-introduction: {b['user_memory']}"

    def _rank(self, req, b):
        return self.ranking(req.meta["candidate_titles"])

    on_rank_basic = on_rank_with_retrieval = on_rank_with_history = on_llmrank = _rank

    def on_review_positive(self, req, b):
        return "I enjoyed this CD."

    def on_review_negative(self, req, b):
        return "I did not enjoy this CD."

    def on_decide_before(self, req, b):
        return "Choice: No\nExplanation: It does not match my taste."

    def on_decide_after(self, req, b):
        return "Choice: No\nExplanation: The reviews did not change my mind."

    def on_warmup(self, req, b):
        return f"The updated description of the new CD is: {b['cold_memory']}"

    def on_query_preference(self, req, b):
        return "Choice: No\nExplanation: This is not part of my preferences."


class AlwaysFirst(ScriptedResponder):
    """Always picks the candidate shown first; otherwise a no-op."""


class AlwaysSecond(ScriptedResponder):
    def on_select(self, req, b):
        return self.choice(req.meta["candidate_titles"][1])


class AlwaysPositive(ScriptedResponder):
    """Always picks the ground-truth positive (an all-correct oracle)."""

    def on_select(self, req, b):
        ids, titles = req.meta["candidate_ids"], req.meta["candidate_titles"]
        return self.choice(titles[ids.index(req.meta["positive"])])


class AlwaysNegative(ScriptedResponder):
    """Always picks the non-positive candidate, so every attempt is wrong."""

    def on_select(self, req, b):
        ids, titles = req.meta["candidate_ids"], req.meta["candidate_titles"]
        return self.choice(titles[1 - ids.index(req.meta["positive"])])


class WrongThenRight(ScriptedResponder):
    """Wrong on the first selection of each pair, right on every later one.

    Reflections append a marker so rewritten memories differ from the old ones.
    """

    def __init__(self):
        self.seen: Counter = Counter()

    def on_select(self, req, b):
        ids, titles = req.meta["candidate_ids"], req.meta["candidate_titles"]
        key = (req.meta.get("user_id"), tuple(ids))
        self.seen[key] += 1
        pos = ids.index(req.meta["positive"])
        return self.choice(titles[pos if self.seen[key] > 1 else 1 - pos])

    def on_reflect_user(self, req, b):
        return f"My updated self-introduction: {b['user_memory']} I now also like {b['pos_title']}."

    def on_reflect_item(self, req, b):
        return (f"The updated description of the first CD is: {b['pos_memory']} Liked by listeners like me.\n"
                f"The updated description of the second CD is: {b['neg_memory']} Not for me.")


class Reversed(ScriptedResponder):
    """Ranks candidates in reverse presentation order."""

    def _rank(self, req, b):
        return self.ranking(list(reversed(req.meta["candidate_titles"])))

    on_rank_basic = on_rank_with_retrieval = on_rank_with_history = on_llmrank = _rank


class Fixed(ScriptedResponder):
    """Answers every request with the same string."""

    def __init__(self, text: str):
        self.text = text

    def __call__(self, req):
        return self.text


class TranscriptResponder(ScriptedResponder):
    """Serves queued responses per template name, in order."""

    def __init__(self, responses: dict[str, list[str]]):
        self.queues = {k: deque(v) for k, v in responses.items()}

    def __call__(self, req):
        name = req.meta.get("template", "")
        queue = self.queues.get(name)
        if not queue:
            raise KeyError(f"transcript has no remaining response for template {name!r}")
        return queue.popleft()


class KeywordAffinity(ScriptedResponder):
    """A lexical stand-in for a language model.

    Choices and rankings follow content-token overlap between the user-side text
    and each candidate's text; ties break on a hash of the title, which is blind
    to display position. Reflections merge the other side's tokens into the
    rewritten memory, keeping the most recent ``cap`` distinct tokens.
    """

    def __init__(self, cap: int = 40):
        self.cap = cap

    def _merge(self, base: str, extra: str) -> str:
        merged: dict[str, None] = {}
        for tok in content_tokens(base) + content_tokens(extra):
            merged.pop(tok, None)
            merged[tok] = None
        return " ".join(list(merged)[-self.cap:])

    @staticmethod
    def _overlap(query: set, text: str) -> int:
        return len(query & set(content_tokens(text)))

    def _order(self, query_text: str, titles, texts) -> list[int]:
        query = set(content_tokens(query_text))
        return sorted(range(len(titles)),
                      key=lambda j: (-self._overlap(query, texts[j]), _stable_hash(titles[j])))

    def on_select(self, req, b):
        titles = req.meta["candidate_titles"]
        best = self._order(b["user_memory"], titles, [b["first_memory"], b["second_memory"]])[0]
        return self.choice(titles[best])

    def on_llmrank_select(self, req, b):
        titles = req.meta["candidate_titles"]
        best = self._order(b["history"], titles, [b["first_memory"], b["second_memory"]])[0]
        return self.choice(titles[best])

    def on_reflect_user(self, req, b):
        return "My updated self-introduction: I like " + self._merge(b["user_memory"], b["second_memory"])

    def on_consolidate_user(self, req, b):
        return "My updated self-introduction: I like " + self._merge(b["user_memory"], b["second_memory"])

    def on_reflect_item(self, req, b):
        first = self._merge(b["pos_memory"], b["user_memory"])
        return (f"The updated description of the first CD is: {first}\n"
                f"The updated description of the second CD is: {b['neg_memory']}")

    def _rank(self, req, b):
        titles, texts = req.meta["candidate_titles"], req.meta["candidate_texts"]
        query = " ".join(str(b.get(k, "")) for k in ("user_memory", "retrieved", "history"))
        return self.ranking([titles[j] for j in self._order(query, titles, texts)])

    on_rank_basic = on_rank_with_retrieval = on_rank_with_history = on_llmrank = _rank

    def on_decide_before(self, req, b):
        yes = self._overlap(set(content_tokens(b["user_memory"])), b["item_memory"]) > 0
        return f"Choice: {'Yes' if yes else 'No'}\nExplanation: overlap check."

    def on_warmup(self, req, b):
        return "The updated description of the new CD is: " + self._merge(b["cold_memory"], b["neighbors"])

    def on_query_preference(self, req, b):
        question = set(content_tokens(b["question"]))
        yes = self._overlap(question, b["user_memory"]) >= 2
        return f"Choice: {'Yes' if yes else 'No'}\nExplanation: checked against my memory."


_SENTENCE = re.compile(r"(?<=[.!?])\s+")


class CopyPhrases(ScriptedResponder):
    """Always chooses the first candidate and copies whole sentences across agents.

    With the negative shown first every attempt fails, so every step reflects.
    The user's rewritten memory gains the positive item's sentences and the
    positive item gains the user's. Sentences already present keep their place
    and the oldest ``cap`` are retained, so early content is never evicted.
    """

    def __init__(self, cap: int = 60):
        self.cap = cap

    def _union(self, base: str, extra: str) -> str:
        out: list[str] = []
        for s in _SENTENCE.split(base.strip()) + _SENTENCE.split(extra.strip()):
            if s and s not in out:
                out.append(s)
        return " ".join(out[: self.cap])

    def on_reflect_user(self, req, b):
        return "My updated self-introduction: " + self._union(b["user_memory"], b["second_memory"])

    def on_consolidate_user(self, req, b):
        return "My updated self-introduction: " + self._union(b["user_memory"], b["second_memory"])

    def on_reflect_item(self, req, b):
        return (f"The updated description of the first CD is: {self._union(b['pos_memory'], b['user_memory'])}\n"
                f"The updated description of the second CD is: {b['neg_memory']}")

    def on_warmup(self, req, b):
        return "The updated description of the new CD is: " + self._union(b["cold_memory"], b["neighbors"])


class Recording:
    """Wraps a responder and keeps every request and (template, prompt, response) it served."""

    def __init__(self, inner):
        self.inner = inner
        self.requests: list = []
        self.log: list[tuple[str, str, str]] = []
        self.by_template = defaultdict(int)

    def __call__(self, req):
        text = self.inner(req)
        name = req.meta.get("template", "")
        self.by_template[name] += 1
        self.requests.append(req)
        self.log.append((name, req.prompt, text))
        return text


RESPONDERS = {
    "always-first": AlwaysFirst,
    "always-second": AlwaysSecond,
    "always-positive": AlwaysPositive,
    "always-negative": AlwaysNegative,
    "wrong-then-right": WrongThenRight,
    "reversed": Reversed,
    "keyword-affinity": KeywordAffinity,
    "copy-phrases": CopyPhrases,
    "noop": ScriptedResponder,
}


def make_responder(name: str):
    try:
        return RESPONDERS[name]()
    except KeyError:
        raise KeyError(f"unknown scripted responder {name!r}; choose from {sorted(RESPONDERS)}") from None
