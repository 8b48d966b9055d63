"""Run configuration: YAML file, defaults, flag overrides, validation."""

from __future__ import annotations

import copy
import logging
import os
from pathlib import Path

import yaml

from .errors import ConfigError
from .llm import DEFAULT_ROUTES, TaskKind
from .memory import DEFAULT_USER_SEED
from .optimizer import ORDERINGS
from .scripted import RESPONDERS

logger = logging.getLogger(__name__)

EVAL_STRATEGIES = ("pop", "bm25", "bpr", "agentcf-b", "agentcf-br", "agentcf-bh", "llmrank", "random")
BACKENDS = ("live", "record", "replay", "script")

DEFAULTS = {
    "data": {"reviews": None, "meta": None, "root_category": None, "max_records": None, "strict": False},
    "subset": {"n_users": 100, "mode": "sparse", "seed": 0},
    "llm": {
        "backend": "replay",
        "store": "replay.jsonl",
        "strict": True,
        "endpoint": None,
        "api_key_env": "LLM_API_KEY",
        "script": "keyword-affinity",
        "routes": {k.value: v for k, v in DEFAULT_ROUTES.items()},
        "timeout": 60.0,
        "max_retries": 3,
    },
    "train": {
        "max_rounds": 2,
        "neg_position": "first",
        "ordering": "global-chronological",
        "seed": 0,
        "checkpoint_every": 50,
        "last_n": None,
    },
    "eval": {"strategies": ["pop", "bm25", "bpr", "agentcf-b"], "reps": 3, "ks": [1, 5, 10], "seed": 0,
             "n_candidates": 10, "retrieval_k": 3, "history_cap": 20},
    "bpr": {"d": 64, "learning_rate": 0.01, "l2_reg": 1e-4, "epochs": 200, "seed": 0},
    "probes": {
        "bias_strategies": ["AgentCF", "LLMRank"],
        "bias_orders": ["popular_first", "popular_second"],
        "seed_user": None,
        "special_text": None,
        "keywords": [],
        "query": False,
        "cold_items": [],
        "warmup_k": 4,
        "warmup_pool": 20,
        "review_item": None,
        "review_authors": [],
        "review_readers": [],
        "review_polarity": "positive",
        "review_relation": "similar",
    },
    "noun": "CD",
    "user_seed": DEFAULT_USER_SEED,
    "jobs": 1,
    "output_dir": "run",
}


def _merge(base: dict, override: dict, problems: list, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        path = f"{prefix}{key}"
        if key not in base:
            problems.append(f"unknown key {path!r}")
        elif isinstance(base[key], dict) and key != "routes":
            if not isinstance(value, dict):
                problems.append(f"{path} must be a mapping")
            else:
                out[key] = _merge(base[key], value, problems, path + ".")
        else:
            out[key] = value
    return out


def _int(cfg, path, problems, minimum=None, optional=False):
    section, key = path.split(".") if "." in path else (None, path)
    value = cfg[section][key] if section else cfg[key]
    if value is None and optional:
        return
    if isinstance(value, bool) or not isinstance(value, int):
        problems.append(f"{path} must be an integer, got {value!r}")
    elif minimum is not None and value < minimum:
        problems.append(f"{path} must be >= {minimum}, got {value}")


def validate(cfg: dict, base_dir: Path | None = None) -> dict:
    """Check a merged config, collecting every problem before raising."""
    problems: list[str] = []
    base_dir = Path(base_dir or ".")

    for key in ("reviews", "meta"):
        p = cfg["data"][key]
        if p is not None:
            path = (base_dir / p) if not Path(p).is_absolute() else Path(p)
            if not path.exists():
                problems.append(f"data.{key}: file {p} does not exist")
            cfg["data"][key] = str(path)
    _int(cfg, "data.max_records", problems, 1, optional=True)

    _int(cfg, "subset.n_users", problems, 1)
    _int(cfg, "subset.seed", problems)
    if cfg["subset"]["mode"] not in ("dense", "sparse"):
        problems.append(f"subset.mode must be dense or sparse, got {cfg['subset']['mode']!r}")

    llm = cfg["llm"]
    if llm["backend"] not in BACKENDS:
        problems.append(f"llm.backend must be one of {BACKENDS}, got {llm['backend']!r}")
    if llm["store"] is not None and not Path(llm["store"]).is_absolute():
        llm["store"] = str(base_dir / llm["store"])
    if llm["backend"] == "live" and not llm["endpoint"]:
        problems.append("llm.endpoint is required for the live backend")
    if llm["backend"] == "live" and not os.environ.get(llm["api_key_env"] or ""):
        problems.append(f"environment variable {llm['api_key_env']} must hold the API key for the live backend")
    if llm["backend"] == "record" and not llm["endpoint"] and llm["script"] not in RESPONDERS:
        problems.append("the record backend needs llm.endpoint or a known llm.script responder")
    if llm["backend"] == "replay" and llm["strict"] and not (llm["store"] and Path(llm["store"]).exists()):
        problems.append(f"llm.store {llm['store']} must exist for strict replay")
    if llm["backend"] == "script" and llm["script"] not in RESPONDERS:
        problems.append(f"llm.script must be one of {sorted(RESPONDERS)}, got {llm['script']!r}")
    routes = llm["routes"]
    if not isinstance(routes, dict):
        problems.append("llm.routes must be a mapping")
    else:
        kinds = {k.value for k in TaskKind}
        for key in routes:
            if key not in kinds:
                problems.append(f"llm.routes: unknown task kind {key!r}")
        for kind in sorted(kinds - set(routes)):
            problems.append(f"llm.routes: no model for {kind!r}")

    tr = cfg["train"]
    _int(cfg, "train.max_rounds", problems, 1)
    _int(cfg, "train.checkpoint_every", problems, 1)
    _int(cfg, "train.seed", problems)
    _int(cfg, "train.last_n", problems, 1, optional=True)
    if tr["neg_position"] not in ("first", "second"):
        problems.append(f"train.neg_position must be first or second, got {tr['neg_position']!r}")
    if tr["ordering"] not in ORDERINGS:
        problems.append(f"train.ordering must be one of {ORDERINGS}, got {tr['ordering']!r}")

    ev = cfg["eval"]
    strategies = ev["strategies"]
    if isinstance(strategies, str):
        strategies = ev["strategies"] = [s.strip() for s in strategies.split(",") if s.strip()]
    if not strategies:
        problems.append("eval.strategies must not be empty")
    for s in strategies or []:
        if s not in EVAL_STRATEGIES:
            problems.append(f"eval.strategies: unknown strategy {s!r}")
    _int(cfg, "eval.reps", problems, 1)
    _int(cfg, "eval.n_candidates", problems, 2)
    _int(cfg, "eval.retrieval_k", problems, 0)
    _int(cfg, "eval.history_cap", problems, 0)
    ks = ev["ks"]
    if not isinstance(ks, list) or not ks or any(isinstance(k, bool) or not isinstance(k, int) or k < 1 for k in ks):
        problems.append(f"eval.ks must be a non-empty list of positive integers, got {ks!r}")
    elif isinstance(ev["n_candidates"], int) and max(ks) > ev["n_candidates"]:
        problems.append("eval.ks must not exceed eval.n_candidates")

    for key in ("d", "epochs"):
        _int(cfg, f"bpr.{key}", problems, 1 if key == "d" else 0)
    for key in ("learning_rate", "l2_reg"):
        v = cfg["bpr"][key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0:
            problems.append(f"bpr.{key} must be a positive number, got {v!r}")

    _int(cfg, "jobs", problems, 1)
    if not isinstance(cfg["user_seed"], str) or not cfg["user_seed"].strip():
        problems.append("user_seed must be a non-empty string")
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path=None, overrides: dict | None = None) -> dict:
    problems: list[str] = []
    raw: dict = {}
    base_dir = Path(".")
    if path is not None:
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigError([f"cannot read config {path}: {exc}"]) from None
        except yaml.YAMLError as exc:
            raise ConfigError([f"config {path} is not valid YAML: {exc}"]) from None
        if not isinstance(raw, dict):
            raise ConfigError([f"config {path} must be a mapping at the top level"])
        base_dir = path.parent
    cfg = _merge(DEFAULTS, raw, problems)
    cfg = _merge(cfg, overrides or {}, problems)
    try:
        validate(cfg, base_dir)
    except ConfigError as exc:
        problems.extend(exc.problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, allow_unicode=True)
