"""Input validation helpers shared by the estimators and commands."""

from __future__ import annotations

import numbers

from .corpus import Dataset, Split
from .errors import DataError


def check_positive(**values) -> None:
    bad = [f"{k}={v!r}" for k, v in values.items() if not isinstance(v, numbers.Real) or v <= 0]
    if bad:
        raise ValueError("expected positive values: " + ", ".join(bad))


def check_dataset(ds) -> Dataset:
    if not isinstance(ds, Dataset):
        raise TypeError(f"expected a Dataset, got {type(ds).__name__}")
    if not ds.sequences:
        raise DataError("dataset has no users")
    unknown = {i for seq in ds.sequences.values() for i in seq} - set(ds.items)
    if unknown:
        raise DataError(f"{len(unknown)} interacted items have no identity, e.g. {sorted(unknown)[:3]}")
    return ds


def check_split(split) -> Split:
    if not isinstance(split, Split):
        raise TypeError(f"expected a Split, got {type(split).__name__}")
    if not split.test_target:
        raise DataError("split has no users")
    missing = set(split.test_target) ^ set(split.train)
    if missing:
        raise DataError(f"train and test users differ: {sorted(missing)[:3]}")
    return split


def check_strategy(name: str, allowed) -> str:
    if name not in allowed:
        raise ValueError(f"unknown strategy {name!r}; expected one of {sorted(allowed)}")
    return name
