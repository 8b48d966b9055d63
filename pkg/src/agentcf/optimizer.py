"""Collaborative optimization: pairwise selection, reflection, and bookkeeping.

Every training interaction becomes one step. A popularity-sampled negative is
paired with the real next item, the user agent picks one, and a wrong pick
triggers reflection on the user and the positive item followed by another
pick, up to ``max_rounds`` reflections. A first-attempt success is consolidated
into the user's memory instead. The short-term memory held before the step is
then appended to the long-term pool.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .agents import AgentSystem
from .corpus import PopularityTable, Split, sample_negative
from .errors import AgentCFError, ConfigError, GatewayError, SchemaVersionError
from .memory import MemoryStore

logger = logging.getLogger(__name__)

TRACE_SCHEMA = 1
ORDERINGS = ("global-chronological", "per-user")


@dataclass
class Attempt:
    round: int
    chosen: str
    correct: bool


@dataclass
class StepRecord:
    user_id: str
    step_index: int
    positive: str
    negative: str
    display: list[str]
    attempts: list[Attempt] = field(default_factory=list)
    final_correct: bool = False
    skipped: bool = False
    rewrites: dict = field(default_factory=lambda: {"user": 0, "positive": 0, "negative": 0})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = TRACE_SCHEMA
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        d = dict(d)
        if d.pop("schema_version", None) != TRACE_SCHEMA:
            raise SchemaVersionError("unsupported trace record schema")
        d["attempts"] = [Attempt(**a) for a in d["attempts"]]
        return cls(**d)


@dataclass
class TrainConfig:
    max_rounds: int = 2
    neg_position: str = "first"
    ordering: str = "global-chronological"
    seed: int = 0
    checkpoint_every: int = 50
    max_steps: int | None = None

    def validate(self) -> "TrainConfig":
        problems = []
        if not isinstance(self.max_rounds, int) or self.max_rounds < 1:
            problems.append(f"max_rounds must be an integer >= 1, got {self.max_rounds!r}")
        if self.neg_position not in ("first", "second"):
            problems.append(f"neg_position must be 'first' or 'second', got {self.neg_position!r}")
        if self.ordering not in ORDERINGS:
            problems.append(f"ordering must be one of {ORDERINGS}, got {self.ordering!r}")
        if not isinstance(self.checkpoint_every, int) or self.checkpoint_every < 1:
            problems.append("checkpoint_every must be a positive integer")
        if self.max_steps is not None and self.max_steps < 0:
            problems.append("max_steps must be >= 0")
        if problems:
            raise ConfigError(problems)
        return self


def training_steps(split: Split, ordering: str = "global-chronological") -> list[tuple[str, int, str]]:
    """(user, per-user step index, positive item) in processing order.

    Global ordering merges all users' training interactions by timestamp, with
    ties broken by user id and then step index.
    """
    if ordering not in ORDERINGS:
        raise ConfigError([f"unknown ordering {ordering!r}"])
    steps = [(u, k, item) for u in sorted(split.train) for k, item in enumerate(split.train[u])]
    if ordering == "global-chronological":
        times = split.train_times
        steps.sort(key=lambda s: (times[s[0]][s[1]] if s[0] in times else 0, s[0], s[1]))
    return steps


class _Checkpoint:
    def __init__(self, directory):
        self.dir = Path(directory)

    def save(self, store: MemoryStore, trace: list[StepRecord]) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        tmp = self.dir / "memory.json.tmp"
        tmp.write_text(store.snapshot(), encoding="utf-8")
        tmp.replace(self.dir / "memory.json")
        write_trace(trace, self.dir / "trace.jsonl")
        (self.dir / "state.json").write_text(json.dumps({"offset": len(trace)}) + "\n", encoding="utf-8")
        logger.info("checkpoint at step %d", len(trace))

    def load(self) -> tuple[MemoryStore, list[StepRecord]]:
        state = json.loads((self.dir / "state.json").read_text(encoding="utf-8"))
        trace = read_trace(self.dir / "trace.jsonl")
        if len(trace) != state["offset"]:
            raise AgentCFError("checkpoint trace length disagrees with its offset")
        return MemoryStore.load_file(self.dir / "memory.json"), trace

    def exists(self) -> bool:
        return (self.dir / "state.json").exists()


def write_trace(trace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in trace:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def read_trace(path) -> list[StepRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [StepRecord.from_dict(json.loads(ln)) for ln in lines if ln.strip()]


def run_step(agents: AgentSystem, user: str, step_index: int, positive: str, negative: str,
             cfg: TrainConfig) -> StepRecord:
    store = agents.store
    display = [negative, positive] if cfg.neg_position == "first" else [positive, negative]
    rec = StepRecord(user, step_index, positive, negative, display)
    before_short = store.users[user].short_term
    neg_text = store.items[negative].text

    for rnd in range(cfg.max_rounds + 1):
        outcome = agents.select_pairwise(user, display[0], display[1], positive)
        if outcome is None:
            rec.skipped = True
            break
        rec.attempts.append(Attempt(rnd, outcome.chosen, outcome.correct))
        if outcome.correct:
            if rnd == 0:
                new_short = agents.consolidate_on_success(user, negative, positive, outcome)
                if new_short is not None:
                    store.set_short_term(user, new_short)
                    rec.rewrites["user"] += 1
            break
        if rnd == cfg.max_rounds:
            break
        result = agents.reflect_on_failure(user, negative, positive, outcome)
        if result.new_user_short is not None:
            store.set_short_term(user, result.new_user_short)
            rec.rewrites["user"] += 1
        if result.new_positive_item_text is not None:
            store.set_item_text(positive, result.new_positive_item_text)
            rec.rewrites["positive"] += 1

    if store.items[negative].text != neg_text:
        rec.rewrites["negative"] += 1
    rec.final_correct = bool(rec.attempts) and rec.attempts[-1].correct
    store.append_long_term(user, before_short)
    return rec


def optimize(split: Split, agents: AgentSystem, pop: PopularityTable, cfg: TrainConfig | None = None,
             checkpoint_dir=None, resume: bool = False) -> list[StepRecord]:
    """Run the optimization loop over ``split.train`` and return the trace.

    The per-step negative is drawn from an RNG seeded by ``(cfg.seed, step)``,
    so a resumed run draws exactly what an uninterrupted one would.
    """
    cfg = (cfg or TrainConfig()).validate()
    store = agents.store
    missing = [u for u in split.train if u not in store.users]
    missing += [i for seq in split.train.values() for i in seq if i not in store.items]
    if missing:
        raise AgentCFError(f"memory store is missing {len(missing)} agents, e.g. {missing[:3]}")

    steps = training_steps(split, cfg.ordering)
    if cfg.max_steps is not None:
        steps = steps[: cfg.max_steps]
    ckpt = _Checkpoint(checkpoint_dir) if checkpoint_dir is not None else None
    trace: list[StepRecord] = []
    if resume and ckpt is not None and ckpt.exists():
        restored, trace = ckpt.load()
        store.users, store.items, store.version = restored.users, restored.items, restored.version
        logger.info("resuming at step %d of %d", len(trace), len(steps))

    for g in range(len(trace), len(steps)):
        user, k, positive = steps[g]
        rng = np.random.default_rng([cfg.seed, g])
        negative = sample_negative(pop, set(split.history(user)), rng)
        undo = (store.users[user].short_term, store.items[positive].text, store.version)
        try:
            rec = run_step(agents, user, k, positive, negative, cfg)
        except GatewayError:
            # roll back the half-finished step so the checkpoint replays it from scratch
            store.users[user].short_term, store.items[positive].text, store.version = undo
            if ckpt is not None:
                ckpt.save(store, trace)
            raise
        trace.append(rec)
        if ckpt is not None and (g + 1) % cfg.checkpoint_every == 0:
            ckpt.save(store, trace)
    if ckpt is not None:
        ckpt.save(store, trace)
    n_skipped = sum(r.skipped for r in trace)
    if n_skipped:
        logger.warning("%d of %d steps skipped on unparsable selections", n_skipped, len(trace))
    return trace


def alignment_curve(trace: list[StepRecord], last_n_steps: int = 3) -> list[dict]:
    """Accuracy before and after reflection over each user's last steps.

    Position 1 is the earliest of the last ``last_n_steps`` steps. Users with
    fewer steps contribute only to the final positions.
    """
    by_user: dict[str, list[StepRecord]] = {}
    for rec in trace:
        if not rec.skipped:
            by_user.setdefault(rec.user_id, []).append(rec)
    if not by_user:
        raise AgentCFError("alignment curve needs a non-empty trace")
    rows = []
    for pos in range(1, last_n_steps + 1):
        offset = last_n_steps - pos
        recs = []
        for seq in by_user.values():
            seq = sorted(seq, key=lambda r: r.step_index)
            if offset < len(seq):
                recs.append(seq[len(seq) - 1 - offset])
        n = len(recs)
        rows.append({
            "step": pos,
            "n_users": n,
            "first_attempt_acc": sum(r.attempts[0].correct for r in recs) / n if n else float("nan"),
            "final_acc": sum(r.final_correct for r in recs) / n if n else float("nan"),
        })
    return rows


def last_n_split(split: Split, n: int) -> Split:
    """Restrict every user's training data to their last ``n`` interactions."""
    if n < 0:
        raise ValueError("n must be >= 0")
    return Split(
        train={u: seq[max(0, len(seq) - n):] for u, seq in split.train.items()},
        test_target=dict(split.test_target),
        train_times={u: t[max(0, len(t) - n):] for u, t in split.train_times.items()},
    )
