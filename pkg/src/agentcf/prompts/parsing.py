"""Parsers for the structured outputs the prompts ask for.

Every parser either returns a value or raises a :class:`ParseError` subclass.
Titles echoed by the model are matched to the presented candidates after
lowercasing and stripping punctuation; a candidate is accepted when its
normalized edit similarity is at least 0.8 or when one title contains the
other on word boundaries.
"""

from __future__ import annotations

import logging
import re
import unicodedata
from dataclasses import dataclass

from rapidfuzz.distance import Levenshtein

from ..errors import ParseError, UnparsableChoice, UnparsableRanking

logger = logging.getLogger(__name__)

MATCH_THRESHOLD = 0.8
_MIN_CONTAINED = 4
_PAIRS = {'"': '"', "'": "'", "`": "`", "“": "”", "‘": "’", "[": "]", "(": ")"}


@dataclass(frozen=True)
class ParsedChoice:
    chosen_title: str
    explanation: str
    index: int


@dataclass(frozen=True)
class ParsedSelfIntro:
    text: str
    confident: bool = True


@dataclass(frozen=True)
class ParsedItemDescriptions:
    first: str
    second: str


@dataclass(frozen=True)
class ParsedRanking:
    order: list[int]
    ordered_titles: list[str]
    n_matched: int


@dataclass(frozen=True)
class ParsedYesNo:
    choice: bool
    explanation: str


def normalize(text: str) -> str:
    text = unicodedata.normalize("NFKC", text).lower()
    text = "".join(ch if ch.isalnum() or ch.isspace() else " " for ch in text)
    return " ".join(text.split())


def similarity(a: str, b: str) -> float:
    return Levenshtein.normalized_similarity(normalize(a), normalize(b))


def _contains(outer: str, inner: str) -> bool:
    return len(inner) >= _MIN_CONTAINED and f" {inner} " in f" {outer} "


def match_title(fragment: str, candidates, threshold: float = MATCH_THRESHOLD):
    """Index of the best-matching candidate title, or None."""
    nf = normalize(fragment)
    if not nf:
        return None
    best, best_sim = None, -1.0
    for idx, cand in enumerate(candidates):
        nc = normalize(cand)
        if not nc:
            continue
        if nc == nf:
            return idx
        sim = Levenshtein.normalized_similarity(nf, nc)
        if (sim >= threshold or _contains(nf, nc) or _contains(nc, nf)) and sim > best_sim:
            best, best_sim = idx, sim
    return best


def _clean(text: str) -> str:
    """Strip whitespace, wrapping quote or bracket pairs, and one unmatched stray quote."""
    text = text.strip()
    while len(text) >= 2 and text[0] in _PAIRS and text[-1] == _PAIRS[text[0]]:
        inner = text[1:-1]
        if text[0] in inner or text[-1] in inner:
            break
        text = inner.strip()
    for q in ('"', "`"):
        if text.count(q) % 2 == 1:
            if text.endswith(q):
                text = text[:-1].rstrip()
            elif text.startswith(q):
                text = text[1:].lstrip()
    for opener, closer in (("“", "”"), ("‘", "’")):
        if text.endswith(closer) and opener not in text:
            text = text[:-1].rstrip()
        elif text.startswith(opener) and closer not in text:
            text = text[1:].lstrip()
    return text


_CHOSEN = re.compile(r"chosen[^:\n]{0,20}:[ \t]*(?P<title>[^\n]*)", re.I)
_EXPLANATION = re.compile(r"explanation\s*:\s*", re.I)


def parse_choice(text: str, candidates) -> ParsedChoice:
    candidates = list(candidates)
    if not candidates:
        raise ValueError("parse_choice needs at least one candidate")
    m = _CHOSEN.search(text)
    idx = None
    if m:
        title = _EXPLANATION.split(m.group("title"), maxsplit=1)[0]
        idx = match_title(_clean(title), candidates)
        rest = text[m.end():]
    else:
        head = normalize(text.strip().split("\n", 1)[0])
        hits = [i for i, c in enumerate(candidates) if normalize(c) and _contains(head, normalize(c))]
        if len(hits) == 1:
            idx = hits[0]
        rest = text
    if idx is None:
        raise UnparsableChoice("no candidate title found in selection output", raw=text)
    ex = _EXPLANATION.search(text)
    explanation = text[ex.end():].strip() if ex else rest.strip()
    if not explanation:
        explanation = text.strip()
    return ParsedChoice(candidates[idx], explanation, idx)


_SELF_INTRO = re.compile(r"my updated self[- ]introduction\s*:?", re.I)


def parse_self_intro(text: str) -> ParsedSelfIntro:
    m = _SELF_INTRO.search(text)
    if m:
        body = _clean(text[m.end():])
        if not body:
            raise ParseError("empty self-introduction after label", raw=text)
        return ParsedSelfIntro(body, True)
    body = _clean(text)
    if not body:
        raise ParseError("empty self-introduction", raw=text)
    logger.info("self-introduction label missing; accepting whole completion")
    return ParsedSelfIntro(body, False)


_FIRST = re.compile(r"updated description of the first [\w ]{0,20}?is\s*:?", re.I)
_SECOND = re.compile(r"updated description of the second [\w ]{0,20}?is\s*:?", re.I)


def parse_item_descriptions(text: str) -> ParsedItemDescriptions:
    m1 = _FIRST.search(text)
    m2 = _SECOND.search(text, m1.end() if m1 else 0)
    if not m1 or not m2:
        raise ParseError("item description labels not found", raw=text)
    first = _clean(text[m1.end():m2.start()])
    second = _clean(text[m2.end():])
    if not first or not second:
        raise ParseError("empty item description", raw=text)
    return ParsedItemDescriptions(first, second)


def parse_labeled(text: str, label: str) -> str:
    """Text after ``label`` (a regex), or the whole completion if the label is absent."""
    m = re.search(label, text, re.I)
    body = _clean(text[m.end():] if m else text)
    if not body:
        raise ParseError("empty completion", raw=text)
    return body


_NUMBERED = re.compile(r"^\s*(?:\d+\s*[\.\):]|[-*•])\s*(.+?)\s*$")


def _ranking_fragments(text: str) -> list[str]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    numbered = [m.group(1) for m in map(_NUMBERED.match, lines) if m]
    if numbered:
        return numbered
    if len(lines) > 1:
        return lines
    return re.split(r"[,;>]|\s-\s", text)


def parse_ranking(text: str, candidates) -> ParsedRanking:
    """Ordered candidate indices; unnamed candidates are appended in presentation order."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("parse_ranking needs at least one candidate")
    order: list[int] = []
    for frag in _ranking_fragments(text):
        frag = _clean(re.sub(r"^\s*title\s*:\s*", "", frag, flags=re.I))
        idx = match_title(frag, candidates)
        if idx is None:
            if frag:
                logger.debug("ranking line matched no candidate: %r", frag[:80])
            continue
        if idx in order:
            continue
        order.append(idx)
    if not order:
        raise UnparsableRanking("no candidate title found in ranking output", raw=text)
    n_matched = len(order)
    if n_matched < len(candidates):
        logger.info("ranking named %d of %d candidates; completing in presentation order",
                    n_matched, len(candidates))
    order += [i for i in range(len(candidates)) if i not in order]
    return ParsedRanking(order, [candidates[i] for i in order], n_matched)


_CHOICE = re.compile(r"choice\s*:\s*\[?\s*\W*(yes|no)\b", re.I)
_LEADING = re.compile(r"^\W*(yes|no)\b", re.I)


def parse_yes_no(text: str) -> ParsedYesNo:
    m = _CHOICE.search(text) or _LEADING.search(text)
    if not m:
        raise ParseError("no Yes/No choice found", raw=text)
    ex = _EXPLANATION.search(text, m.end())
    explanation = text[ex.end():].strip() if ex else text[m.end():].strip()
    return ParsedYesNo(m.group(1).lower() == "yes", explanation)
