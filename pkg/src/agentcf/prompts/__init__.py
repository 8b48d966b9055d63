"""Prompt templates and parsers for the agents' structured outputs."""

from .parsing import (
    MATCH_THRESHOLD,
    ParsedChoice,
    ParsedItemDescriptions,
    ParsedRanking,
    ParsedSelfIntro,
    ParsedYesNo,
    match_title,
    normalize,
    parse_choice,
    parse_item_descriptions,
    parse_labeled,
    parse_ranking,
    parse_self_intro,
    parse_yes_no,
    similarity,
)
from .templates import Catalog, Template, load_template, parse_template, render

__all__ = [
    "Catalog",
    "MATCH_THRESHOLD",
    "ParsedChoice",
    "ParsedItemDescriptions",
    "ParsedRanking",
    "ParsedSelfIntro",
    "ParsedYesNo",
    "Template",
    "load_template",
    "match_title",
    "normalize",
    "parse_choice",
    "parse_item_descriptions",
    "parse_labeled",
    "parse_ranking",
    "parse_self_intro",
    "parse_template",
    "parse_yes_no",
    "render",
    "similarity",
]
