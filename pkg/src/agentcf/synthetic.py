"""Synthetic interaction logs with known structure, for tests and demos."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .corpus import Dataset, ItemIdentity

GENRES = ("Rock", "Pop", "Jazz", "Blues", "Folk", "Soul", "Country", "Electronic")
_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z")
_VOWELS = ("a", "e", "i", "o", "u")


def pseudo_words(n: int, rng: np.random.Generator, syllables: int = 3) -> list[str]:
    """``n`` distinct made-up words."""
    out: list[str] = []
    seen = set()
    while len(out) < n:
        w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(syllables))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def planted_dataset(n_groups: int = 4, users_per_group: int = 10, items_per_group: int = 10,
                    seq_len: int = 6, seed: int = 0) -> Dataset:
    """Users interact only with items of their own group.

    Titles are random pseudo-words and categories are drawn independently of
    the group, so item text alone says nothing about group membership. Each
    user's k-th interaction happens in round k, with users interleaved inside
    a round, so a global chronological pass alternates between users.
    """
    if seq_len > items_per_group:
        raise ValueError("seq_len cannot exceed items_per_group")
    rng = np.random.default_rng(seed)
    words = pseudo_words(2 * n_groups * items_per_group, rng)
    items: dict[str, ItemIdentity] = {}
    group_items: list[list[str]] = []
    for g in range(n_groups):
        ids = []
        for k in range(items_per_group):
            idx = g * items_per_group + k
            item_id = f"I{idx:04d}"
            title = f"{words[2 * idx].title()} {words[2 * idx + 1].title()}"
            items[item_id] = ItemIdentity(item_id, title, (str(rng.choice(GENRES)),))
            ids.append(item_id)
        group_items.append(ids)
    sequences, timestamps = {}, {}
    users = [(g, f"U{g * users_per_group + k:04d}") for g in range(n_groups) for k in range(users_per_group)]
    slot = {u: int(s) for (_, u), s in zip(users, rng.permutation(len(users)))}
    for g, u in users:
        picks = rng.choice(items_per_group, size=seq_len, replace=False)
        sequences[u] = [group_items[g][j] for j in picks]
        timestamps[u] = [1_000_000 + r * 10_000 + slot[u] for r in range(seq_len)]
    return Dataset(items=items, sequences=sequences, timestamps=timestamps)


def write_amazon_format(ds: Dataset, reviews_path, meta_path=None) -> None:
    """Write ``ds`` as review and metadata line files in the Amazon distribution layout."""
    rows = []
    for u in ds.users:
        for item, ts in zip(ds.sequences[u], ds.timestamps[u]):
            rows.append({"reviewerID": u, "asin": item, "unixReviewTime": int(ts), "overall": 5.0})
    Path(reviews_path).write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    if meta_path is not None:
        lines = [json.dumps({"asin": i, "title": it.title, "category": list(it.categories)})
                 for i, it in sorted(ds.items.items())]
        Path(meta_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
