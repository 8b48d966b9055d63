"""Interaction logs: ingestion, subset sampling, statistics, splits, popularity.

Review files follow the Amazon review distribution layout: one JSON object per
line with ``reviewerID``, ``asin`` and ``unixReviewTime``; metadata files carry
``asin``, ``title`` and ``category``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DataError, SchemaVersionError

logger = logging.getLogger(__name__)

DATASET_SCHEMA = 1


@dataclass(frozen=True)
class RawRecord:
    user_id: str
    item_id: str
    timestamp: int
    review_text: str | None = None
    rating: float | None = None


@dataclass(frozen=True)
class ItemIdentity:
    item_id: str
    title: str
    categories: tuple[str, ...] = ()

    def render(self, noun: str = "CD") -> str:
        """Identity sentence used to initialize the item agent's memory."""
        cats = "; ".join(self.categories)
        return (
            f'The {noun} is called "{self.title}". '
            f'The category of this {noun} is: "{cats}".'
        )


@dataclass
class Dataset:
    """Users' interactions grouped per user in chronological order.

    ``timestamps[u][k]`` is the time of ``sequences[u][k]``.
    """

    items: dict[str, ItemIdentity]
    sequences: dict[str, list[str]]
    timestamps: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.timestamps:
            self.timestamps = {u: list(range(len(s))) for u, s in self.sequences.items()}

    @property
    def users(self) -> list[str]:
        return sorted(self.sequences)

    @property
    def n_inters(self) -> int:
        return sum(len(s) for s in self.sequences.values())

    def interacted_items(self) -> set[str]:
        return {i for seq in self.sequences.values() for i in seq}


@dataclass(frozen=True)
class DatasetStats:
    n_users: int
    n_items: int
    n_inters: int
    sparsity: float
    avg_words: float

    def as_dict(self) -> dict:
        return {
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_inters": self.n_inters,
            "sparsity": self.sparsity,
            "avg_words": self.avg_words,
        }


@dataclass
class Split:
    """Leave-one-out split: everything but the last interaction is training data."""

    train: dict[str, list[str]]
    test_target: dict[str, str]
    train_times: dict[str, list[int]] = field(default_factory=dict)

    @property
    def users(self) -> list[str]:
        return sorted(self.test_target)

    def history(self, user_id: str) -> list[str]:
        """Full sequence of ``user_id`` (train followed by the target)."""
        return self.train[user_id] + [self.test_target[user_id]]

    def n_train_steps(self) -> int:
        return sum(len(v) for v in self.train.values())


class PopularityTable:
    """Interaction counts per item and the induced sampling distribution."""

    def __init__(self, counts: dict[str, int]):
        self.counts = {k: int(v) for k, v in sorted(counts.items()) if v > 0}
        self._ids = list(self.counts)
        self._weights = np.array([self.counts[i] for i in self._ids], dtype=float)
        self.total = float(self._weights.sum())

    @property
    def probabilities(self) -> dict[str, float]:
        return {i: c / self.total for i, c in self.counts.items()}

    def scaled(self, factor: int) -> "PopularityTable":
        return PopularityTable({k: v * factor for k, v in self.counts.items()})

    def __len__(self):
        return len(self._ids)


# ---------------------------------------------------------------------------
# ingestion


def _read_jsonl(path: Path):
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                yield lineno, line


def _parse_review(lineno: int, line: str) -> RawRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON ({exc.msg})", line=lineno) from None
    if not isinstance(obj, dict):
        raise DataError("record is not an object", line=lineno)
    user, item, ts = obj.get("reviewerID"), obj.get("asin"), obj.get("unixReviewTime")
    if not isinstance(user, str) or not user:
        raise DataError("missing reviewerID", line=lineno)
    if not isinstance(item, str) or not item:
        raise DataError("missing asin", line=lineno)
    if isinstance(ts, bool) or not isinstance(ts, int) or ts < 0:
        raise DataError("missing or invalid unixReviewTime", line=lineno)
    rating = obj.get("overall")
    return RawRecord(user, item, ts, obj.get("reviewText"), float(rating) if rating is not None else None)


def read_reviews(path, max_records: int | None = None, strict: bool = False) -> list[RawRecord]:
    records = []
    for lineno, line in _read_jsonl(Path(path)):
        if max_records is not None and len(records) >= max_records:
            break
        try:
            records.append(_parse_review(lineno, line))
        except DataError as exc:
            if strict:
                raise
            logger.warning("skipping %s: %s", path, exc)
    return records


def load_metadata(path, root_category: str | None = None) -> dict[str, ItemIdentity]:
    """Read item metadata. A leading ``root_category`` (e.g. "CDs & Vinyl") is dropped."""
    items = {}
    for lineno, line in _read_jsonl(Path(path)):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            logger.warning("skipping metadata line %d: invalid JSON", lineno)
            continue
        asin = obj.get("asin")
        if not asin:
            continue
        cats = obj.get("category") or obj.get("categories") or []
        if cats and isinstance(cats[0], list):
            cats = cats[0]
        cats = [str(c) for c in cats]
        if root_category and cats and cats[0] == root_category:
            cats = cats[1:]
        title = (obj.get("title") or "").strip() or asin
        items[asin] = ItemIdentity(asin, title, tuple(cats))
    return items


def build_dataset(records: Iterable[RawRecord], items: dict[str, ItemIdentity] | None = None) -> Dataset:
    """Group records per user, sorted by timestamp with ties kept in input order."""
    items = dict(items or {})
    seen = set()
    per_user: dict[str, list[tuple[int, str]]] = {}
    for rec in records:
        key = (rec.user_id, rec.item_id, rec.timestamp)
        if key in seen:
            continue
        seen.add(key)
        per_user.setdefault(rec.user_id, []).append((rec.timestamp, rec.item_id))
    sequences, timestamps = {}, {}
    for user in sorted(per_user):
        ordered = sorted(per_user[user], key=lambda p: p[0])  # stable
        sequences[user] = [i for _, i in ordered]
        timestamps[user] = [t for t, _ in ordered]
    for item in sorted({i for s in sequences.values() for i in s}):
        if item not in items:
            logger.debug("item %s has no metadata; using its id as title", item)
            items[item] = ItemIdentity(item, item, ())
    return Dataset(items=items, sequences=sequences, timestamps=timestamps)


def ingest(path, max_records: int | None = None, meta_path=None, strict: bool = False,
           root_category: str | None = None) -> Dataset:
    records = read_reviews(path, max_records=max_records, strict=strict)
    items = load_metadata(meta_path, root_category) if meta_path else {}
    return build_dataset(records, items)


# ---------------------------------------------------------------------------
# subsets and statistics


def _restrict(ds: Dataset, users: Iterable[str]) -> Dataset:
    users = sorted(users)
    seqs = {u: list(ds.sequences[u]) for u in users}
    times = {u: list(ds.timestamps[u]) for u in users}
    used = sorted({i for s in seqs.values() for i in s})
    return Dataset(items={i: ds.items[i] for i in used}, sequences=seqs, timestamps=times)


def sample_subset(ds: Dataset, n_users: int, mode: str = "sparse", seed: int = 0) -> Dataset:
    """Draw ``n_users`` users with all their interactions.

    ``sparse`` picks users uniformly. ``dense`` grows the subset greedily from a
    random seed user, always adding the user whose items overlap most with the
    items already covered (random tie-break), which keeps the item count low.
    """
    population = ds.users
    if n_users > len(population):
        raise DataError(f"requested {n_users} users but only {len(population)} exist")
    if mode not in ("dense", "sparse"):
        raise ValueError(f"unknown subset mode {mode!r}")
    rng = np.random.default_rng(seed)
    if mode == "sparse":
        picked = rng.choice(len(population), size=n_users, replace=False)
        return _restrict(ds, (population[k] for k in picked))

    by_item: dict[str, list[int]] = {}
    for idx, u in enumerate(population):
        for item in set(ds.sequences[u]):
            by_item.setdefault(item, []).append(idx)
    overlap = np.zeros(len(population))
    available = np.ones(len(population), dtype=bool)
    pool: set[str] = set()
    chosen: list[int] = []
    current = int(rng.integers(len(population)))
    while True:
        chosen.append(current)
        available[current] = False
        for item in set(ds.sequences[population[current]]) - pool:
            pool.add(item)
            for other in by_item[item]:
                overlap[other] += 1
        if len(chosen) == n_users:
            break
        best = overlap[available].max()
        ties = np.flatnonzero(available & (overlap == best))
        current = int(ties[rng.integers(len(ties))])
    return _restrict(ds, (population[k] for k in chosen))


def sparsity(n_users: int, n_items: int, n_inters: int) -> float:
    return 1.0 - n_inters / (n_users * n_items)


def compute_stats(ds: Dataset, noun: str = "CD") -> DatasetStats:
    n_users = len(ds.sequences)
    used = ds.interacted_items()
    if not n_users or not used:
        raise DataError("cannot compute statistics of an empty dataset")
    words = [len(ds.items[i].render(noun).split()) for i in sorted(used)]
    n_inters = ds.n_inters
    return DatasetStats(n_users, len(used), n_inters, sparsity(n_users, len(used), n_inters),
                        float(np.mean(words)))


def leave_one_out(ds: Dataset, strict: bool = False) -> Split:
    short = [u for u in ds.users if len(ds.sequences[u]) < 2]
    if short:
        if strict:
            raise DataError(f"users with fewer than 2 interactions: {', '.join(short)}", user=short[0])
        logger.warning("excluding %d users with fewer than 2 interactions: %s", len(short), short[:10])
    train, target, times = {}, {}, {}
    for u in ds.users:
        seq = ds.sequences[u]
        if len(seq) < 2:
            continue
        train[u] = list(seq[:-1])
        target[u] = seq[-1]
        times[u] = list(ds.timestamps[u][:-1])
    return Split(train=train, test_target=target, train_times=times)


def popularity_table(ds: Dataset) -> PopularityTable:
    counts: dict[str, int] = {}
    for seq in ds.sequences.values():
        for item in seq:
            counts[item] = counts.get(item, 0) + 1
    if not counts:
        raise DataError("cannot build a popularity table from an empty dataset")
    return PopularityTable(counts)


def sample_negative(pop: PopularityTable, exclude, rng: np.random.Generator) -> str:
    """Draw one item proportionally to popularity, never returning an excluded item."""
    weights = pop._weights
    if exclude:
        mask = np.fromiter((i not in exclude for i in pop._ids), dtype=bool, count=len(pop._ids))
        weights = weights * mask
    cum = np.cumsum(weights)
    if not len(cum) or cum[-1] <= 0:
        raise DataError("no item left to sample as a negative")
    k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return pop._ids[min(k, len(cum) - 1)]


# ---------------------------------------------------------------------------
# persistence


def dataset_to_dict(ds: Dataset) -> dict:
    return {
        "schema_version": DATASET_SCHEMA,
        "items": {
            i: {"title": it.title, "categories": list(it.categories)}
            for i, it in sorted(ds.items.items())
        },
        "sequences": {u: ds.sequences[u] for u in ds.users},
        "timestamps": {u: ds.timestamps[u] for u in ds.users},
    }


def dataset_from_dict(doc: dict) -> Dataset:
    if doc.get("schema_version") != DATASET_SCHEMA:
        raise SchemaVersionError(f"unsupported dataset schema {doc.get('schema_version')!r}")
    items = {i: ItemIdentity(i, v["title"], tuple(v["categories"])) for i, v in doc["items"].items()}
    return Dataset(items=items, sequences={u: list(s) for u, s in doc["sequences"].items()},
                   timestamps={u: list(t) for u, t in doc["timestamps"].items()})


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_text(json.dumps(dataset_to_dict(ds), indent=1, sort_keys=True, ensure_ascii=False) + "\n",
                          encoding="utf-8")


def load_dataset(path) -> Dataset:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load dataset snapshot {path}: {exc}") from exc
    return dataset_from_dict(doc)
