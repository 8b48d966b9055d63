"""User-agent and item-agent behaviors.

Each behavior renders a catalog prompt, sends it through the gateway and parses
the answer. Behaviors never write to the memory store themselves; the optimizer
(or the caller) applies the returned texts, so all mutation goes through one
writer.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import asdict, dataclass
from pathlib import Path

from .bm25 import BM25
from .corpus import ItemIdentity, PopularityTable
from .errors import ParseError, UnparsableChoice
from .llm import ChatRequest, Gateway, Message, TaskKind
from .memory import MemoryStore
from .prompts import (
    Catalog,
    ParsedYesNo,
    parse_choice,
    parse_item_descriptions,
    parse_labeled,
    parse_self_intro,
    parse_yes_no,
)

logger = logging.getLogger(__name__)

DEFAULT_QUESTION = "Do you tend to favor music that evokes emotions and resonates with you?"
RELATIONS = {
    "similar": "share similar preferences to yours",
    "dissimilar": "have preferences different from yours",
}
_CHOICE_REMINDER = (
    "Your previous output did not follow the required format. Please answer again in the format: "
    "Chosen CD: [Title of the selected CD]\nExplanation: [Detailed rationale behind your choice]."
)


@dataclass
class SelectionOutcome:
    chosen: str
    explanation: str
    correct: bool
    position: int


@dataclass
class ReflectionResult:
    """Texts produced by a failure reflection; ``None`` where parsing failed."""

    new_user_short: str | None
    new_positive_item_text: str | None


@dataclass(frozen=True)
class Review:
    author: str
    item: str
    polarity: str
    text: str


class ReviewStore:
    """Append-only review log, optionally mirrored to a JSON-lines file."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.reviews: list[Review] = []
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self.reviews.append(Review(**json.loads(line)))

    def add(self, review: Review) -> None:
        with self._lock:
            self.reviews.append(review)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(asdict(review), sort_keys=True, ensure_ascii=False) + "\n")

    def for_item(self, item_id: str, polarity: str | None = None) -> list[Review]:
        return [r for r in self.reviews if r.item == item_id and (polarity is None or r.polarity == polarity)]

    def __len__(self):
        return len(self.reviews)


class AgentSystem:
    """Agent behaviors bound to a gateway, a memory store and item identities."""

    def __init__(self, gateway: Gateway, store: MemoryStore, items: dict[str, ItemIdentity],
                 catalog: Catalog | None = None, reask: bool = True, max_review_words: int = 80):
        self.gateway = gateway
        self.store = store
        self.items = items
        self.catalog = catalog or Catalog()
        self.reask = reask
        self.max_review_words = max_review_words

    def title(self, item_id: str) -> str:
        return self.items[item_id].title

    def _request(self, template: str, route: TaskKind, meta=None, **bindings) -> ChatRequest:
        prompt = self.catalog.render(template, **bindings)
        info = {"template": template, "bindings": bindings}
        info.update(meta or {})
        return ChatRequest.single(prompt, route, meta=info)

    # -- forward selection ------------------------------------------------
    def _choose(self, req: ChatRequest, titles: list[str]):
        resp = self.gateway.complete(req)
        try:
            return parse_choice(resp.text, titles)
        except UnparsableChoice:
            if not self.reask:
                raise
            logger.info("re-asking unparsable selection output")
        retry = ChatRequest(
            req.messages + [Message("assistant", resp.text or "(empty)"), Message("user", _CHOICE_REMINDER)],
            req.route, meta={**req.meta, "reask": True},
        )
        return parse_choice(self.gateway.complete(retry).text, titles)

    def _outcome(self, parsed, first, second, positive):
        chosen = (first, second)[parsed.index]
        return SelectionOutcome(chosen, parsed.explanation, chosen == positive, parsed.index + 1)

    def select_pairwise(self, user_id: str, first: str, second: str, positive: str) -> SelectionOutcome | None:
        """Ask the user agent to pick one of two items shown in the given order.

        Returns None when the output stays unparsable after one re-ask.
        """
        if first == second:
            raise ValueError("pairwise candidates must be distinct")
        titles = [self.title(first), self.title(second)]
        req = self._request(
            "select", TaskKind.SELECTION,
            meta={"user_id": user_id, "candidate_ids": [first, second], "candidate_titles": titles,
                  "positive": positive},
            user_memory=self.store.users[user_id].short_term,
            first_memory=self.store.items[first].text,
            second_memory=self.store.items[second].text,
        )
        try:
            parsed = self._choose(req, titles)
        except UnparsableChoice as exc:
            logger.warning("selection for user %s unparsable, skipping: %r", user_id, exc.raw[:100])
            return None
        return self._outcome(parsed, first, second, positive)

    def select_pairwise_from_history(self, history: list[str], first: str, second: str,
                                     positive: str) -> SelectionOutcome | None:
        """Pairwise choice conditioned only on identity texts of past items (no learned memory)."""
        titles = [self.title(first), self.title(second)]
        req = self._request(
            "llmrank_select", TaskKind.INFERENCE,
            meta={"candidate_ids": [first, second], "candidate_titles": titles, "positive": positive,
                  "history_texts": [self.items[i].render() for i in history]},
            history=_numbered(self.items[i].render() for i in history),
            first_memory=self.items[first].render(),
            second_memory=self.items[second].render(),
        )
        try:
            parsed = self._choose(req, titles)
        except UnparsableChoice:
            return None
        return self._outcome(parsed, first, second, positive)

    # -- backward updates -------------------------------------------------
    def reflect_on_failure(self, user_id: str, negative: str, positive: str,
                           outcome: SelectionOutcome) -> ReflectionResult:
        """Rewrite the user's short-term memory and the positive item's memory.

        The negative item's rewritten description is parsed but discarded.
        """
        if outcome.correct:
            raise ValueError("reflect_on_failure needs an incorrect selection")
        user_mem = self.store.users[user_id].short_term
        neg_mem, pos_mem = self.store.items[negative].text, self.store.items[positive].text
        common = {"neg_title": self.title(negative), "pos_title": self.title(positive),
                  "explanation": outcome.explanation or "(no explanation)"}
        meta = {"user_id": user_id, "negative": negative, "positive": positive}

        req = self._request("reflect_user", TaskKind.REFLECTION, meta=meta, user_memory=user_mem,
                            first_memory=neg_mem, second_memory=pos_mem, **common)
        try:
            new_user = parse_self_intro(self.gateway.complete(req).text).text
        except ParseError as exc:
            logger.warning("user reflection for %s unparsable, keeping memory: %s", user_id, exc)
            new_user = None

        req = self._request("reflect_item", TaskKind.REFLECTION, meta=meta, user_memory=user_mem,
                            pos_memory=pos_mem, neg_memory=neg_mem, **common)
        try:
            new_pos = parse_item_descriptions(self.gateway.complete(req).text).first
        except ParseError as exc:
            logger.warning("item reflection for %s unparsable, keeping memory: %s", positive, exc)
            new_pos = None
        return ReflectionResult(new_user, new_pos)

    def consolidate_on_success(self, user_id: str, negative: str, positive: str,
                               outcome: SelectionOutcome) -> str | None:
        """New short-term memory after a correct choice (None if unparsable)."""
        if not outcome.correct:
            raise ValueError("consolidate_on_success needs a correct selection")
        req = self._request(
            "consolidate_user", TaskKind.REFLECTION,
            meta={"user_id": user_id, "negative": negative, "positive": positive},
            user_memory=self.store.users[user_id].short_term,
            first_memory=self.store.items[negative].text,
            second_memory=self.store.items[positive].text,
            pos_title=self.title(positive), neg_title=self.title(negative),
        )
        try:
            return parse_self_intro(self.gateway.complete(req).text).text
        except ParseError as exc:
            logger.warning("consolidation for %s unparsable, keeping memory: %s", user_id, exc)
            return None

    # -- user-user interaction --------------------------------------------
    def write_review(self, user_id: str, item_id: str, polarity: str = "positive",
                     reviews: ReviewStore | None = None) -> Review:
        if polarity not in ("positive", "negative"):
            raise ValueError(f"unknown polarity {polarity!r}")
        req = self._request(f"review_{polarity}", TaskKind.AUXILIARY,
                            meta={"user_id": user_id, "item_id": item_id},
                            user_memory=self.store.users[user_id].short_term,
                            item_memory=self.store.items[item_id].text)
        text = self.gateway.complete(req).text.strip()
        if not text:
            raise ParseError("empty review", raw=text)
        words = text.split()
        if len(words) > self.max_review_words:
            text = " ".join(words[: self.max_review_words])
        review = Review(user_id, item_id, polarity, text)
        if reviews is not None:
            reviews.add(review)
        return review

    def decide_with_reviews(self, user_id: str, item_id: str, reviews: list,
                            relation: str = "similar") -> tuple[ParsedYesNo, ParsedYesNo]:
        """Purchase decision before and after reading ``reviews``."""
        before_req = self._request("decide_before", TaskKind.AUXILIARY,
                                   meta={"user_id": user_id, "item_id": item_id},
                                   user_memory=self.store.users[user_id].short_term,
                                   item_title=self.title(item_id),
                                   item_memory=self.store.items[item_id].text)
        before_text = self.gateway.complete(before_req).text
        before = parse_yes_no(before_text)
        if not reviews:
            return before, before
        texts = [r.text if isinstance(r, Review) else str(r) for r in reviews]
        after_prompt = self.catalog.render("decide_after", relation=RELATIONS[relation],
                                           reviews="\n".join(texts))
        after_req = ChatRequest(
            before_req.messages + [Message("assistant", before_text), Message("user", after_prompt)],
            TaskKind.AUXILIARY,
            meta={"template": "decide_after", "user_id": user_id, "item_id": item_id,
                  "bindings": {"reviews": texts, "relation": relation}, "before": before.choice},
        )
        return before, parse_yes_no(self.gateway.complete(after_req).text)

    # -- item-item interaction --------------------------------------------
    def warmup_cold_item(self, cold: ItemIdentity, neighbors: list[str]) -> str:
        """Memory text for a cold item after reading neighbor item memories."""
        cold_text = cold.render()
        if not neighbors:
            return cold_text
        texts = [self.store.items[n].text for n in neighbors]
        req = self._request("warmup", TaskKind.REFLECTION,
                            meta={"item_id": cold.item_id, "neighbor_texts": texts},
                            cold_memory=cold_text, neighbors=_numbered(texts))
        try:
            return parse_labeled(self.gateway.complete(req).text,
                                 r"updated description of the new [\w ]{0,20}?is\s*:?")
        except ParseError:
            logger.warning("empty warmup completion for %s; keeping identity memory", cold.item_id)
            return cold_text

    def query_preference(self, user_id: str, question: str = DEFAULT_QUESTION) -> ParsedYesNo:
        req = self._request("query_preference", TaskKind.REFLECTION, meta={"user_id": user_id},
                            user_memory=self.store.users[user_id].short_term, question=question)
        return parse_yes_no(self.gateway.complete(req).text)


def _numbered(texts) -> str:
    return "\n".join(f"{k}. {t}" for k, t in enumerate(texts, 1))


def select_warmup_neighbors(cold: ItemIdentity, items: dict[str, ItemIdentity], pop: PopularityTable,
                            k: int = 4, mode: str = "similar", pool_size: int = 20) -> list[str]:
    """Popular items whose identity text is most (``similar``) or least (``distinct``) like the cold item's."""
    if mode not in ("similar", "distinct"):
        raise ValueError(f"unknown neighbor mode {mode!r}")
    ranked = sorted((i for i in pop.counts if i != cold.item_id and i in items),
                    key=lambda i: (-pop.counts[i], i))[:pool_size]
    if not ranked or k <= 0:
        return []
    scores = BM25([items[i].render() for i in ranked]).scores(cold.render())
    order = sorted(range(len(ranked)), key=lambda j: (-scores[j], j))
    if mode == "distinct":
        order = sorted(range(len(ranked)), key=lambda j: (scores[j], j))
    return [ranked[j] for j in order[:k]]
