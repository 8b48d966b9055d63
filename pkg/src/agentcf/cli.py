"""Command-line entry point.

Every command reads one YAML config (``--config``), applies flag overrides,
validates everything up front, and writes its outputs into a run directory
along with a frozen copy of the resolved config.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import corpus
from .agents import AgentSystem, ReviewStore, select_warmup_neighbors
from .baselines import BM25Ranker, BPRRanker, PopRanker
from .config import EVAL_STRATEGIES, dump_config, load_config
from .errors import AgentCFError, ConfigError, DataError, OutputExistsError
from .evaluation import bias_probe, cold_start_eval, propagation_probe, run_eval, write_rows
from .llm import Gateway, HTTPBackend, ReplayStore
from .memory import MemoryStore
from .optimizer import TrainConfig, alignment_curve, last_n_split, optimize, write_trace
from .prompts import Catalog
from .ranker import BasicRanker, HistoryRanker, LLMRankRanker, RandomRanker, RetrievalRanker
from .recommender import init_store
from .scripted import make_responder

logger = logging.getLogger(__name__)


class RunContext:
    def __init__(self, args):
        overrides: dict = {}
        if getattr(args, "backend", None):
            overrides.setdefault("llm", {})["backend"] = args.backend
        if getattr(args, "script", None):
            overrides.setdefault("llm", {})["script"] = args.script
        if getattr(args, "jobs", None):
            overrides["jobs"] = args.jobs
        for key, section, name in getattr(args, "_overrides", ()):
            value = getattr(args, key, None)
            if value is not None:
                overrides.setdefault(section, {})[name] = value
        self.cfg = load_config(args.config, overrides)
        run_dir = args.run_dir or os.environ.get("AGENTCF_RUN_DIR") or self.cfg["output_dir"]
        self.run_dir = Path(run_dir)
        self.force = args.force
        self.command = args.command

    def path(self, name: str) -> Path:
        return self.run_dir / name

    def claim(self, *names: str, allow=()) -> None:
        """Refuse to clobber earlier outputs unless ``--force`` was given."""
        clash = [n for n in names if n not in allow and self.path(n).exists()]
        if clash and not self.force:
            raise OutputExistsError(f"{self.run_dir} already contains {', '.join(clash)}; use --force to overwrite")
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.path(f"config.{self.command}.yaml").write_text(dump_config(self.cfg), encoding="utf-8")

    def write_json(self, name: str, doc) -> None:
        self.path(name).write_text(json.dumps(doc, indent=1, sort_keys=True, ensure_ascii=False) + "\n",
                                   encoding="utf-8")

    def dataset(self) -> corpus.Dataset:
        for name in ("subset.json", "dataset.json"):
            if self.path(name).exists():
                return corpus.load_dataset(self.path(name))
        raise DataError(f"{self.run_dir} has no dataset; run `ingest` (and `sample`) first")

    def gateway(self) -> Gateway:
        llm = self.cfg["llm"]
        mode = llm["backend"]
        store = ReplayStore(llm["store"]) if mode in ("record", "replay") else ReplayStore()
        backend = None
        if llm["endpoint"] and mode in ("live", "record"):
            backend = HTTPBackend(llm["endpoint"], llm["api_key_env"], llm["timeout"], llm["max_retries"])
        responder = None
        if mode == "script" or (mode == "record" and backend is None):
            responder = make_responder(llm["script"])
        return Gateway(mode, routes=llm["routes"], store=store, backend=backend, responder=responder,
                       strict=llm["strict"], max_in_flight=self.cfg["jobs"])

    def store(self) -> MemoryStore:
        if not self.path("memory.json").exists():
            raise DataError(f"{self.run_dir} has no memory.json; run `train` first")
        return MemoryStore.load_file(self.path("memory.json"))

    def train_config(self) -> TrainConfig:
        t = self.cfg["train"]
        return TrainConfig(t["max_rounds"], t["neg_position"], t["ordering"], t["seed"],
                           t["checkpoint_every"]).validate()

    def split(self, ds):
        split = corpus.leave_one_out(ds, strict=self.cfg["data"]["strict"])
        if self.cfg["train"]["last_n"]:
            split = last_n_split(split, self.cfg["train"]["last_n"])
        return split


def _print_stats(stats: corpus.DatasetStats) -> None:
    for key, value in stats.as_dict().items():
        print(f"{key}: {value}")
    print(f"sparsity_percent: {stats.sparsity * 100:.2f}%")


def cmd_ingest(ctx: RunContext, args) -> None:
    data = ctx.cfg["data"]
    if not data["reviews"]:
        raise ConfigError(["data.reviews is required for ingest"])
    ctx.claim("dataset.json")
    ds = corpus.ingest(data["reviews"], data["max_records"], data["meta"], data["strict"], data["root_category"])
    corpus.save_dataset(ds, ctx.path("dataset.json"))
    _print_stats(corpus.compute_stats(ds, ctx.cfg["noun"]))


def cmd_sample(ctx: RunContext, args) -> None:
    if not ctx.path("dataset.json").exists():
        raise DataError(f"{ctx.run_dir} has no dataset.json; run `ingest` first")
    ds = corpus.load_dataset(ctx.path("dataset.json"))
    sub = ctx.cfg["subset"]
    ctx.claim("subset.json")
    subset = corpus.sample_subset(ds, sub["n_users"], sub["mode"], sub["seed"])
    corpus.save_dataset(subset, ctx.path("subset.json"))
    _print_stats(corpus.compute_stats(subset, ctx.cfg["noun"]))


def cmd_stats(args) -> int:
    if args.counts:
        for u, i, n in args.counts:
            print(f"users={u} items={i} inters={n} sparsity: {corpus.sparsity(u, i, n) * 100:.2f}%")
        if not args.dataset and not args.config:
            return 0
    if args.dataset:
        ds = corpus.load_dataset(args.dataset)
    else:
        ctx = RunContext(args)
        ds = ctx.dataset()
    _print_stats(corpus.compute_stats(ds))
    return 0


def cmd_train(ctx: RunContext, args) -> None:
    ds = ctx.dataset()
    split = ctx.split(ds)
    outputs = ("memory.json", "trace.jsonl", "alignment.json")
    ctx.claim(*outputs, "checkpoint", allow=("checkpoint",) + (outputs if args.resume else ()))
    store = init_store(ds, ctx.cfg["user_seed"], ctx.cfg["noun"], split.users)
    agents = AgentSystem(ctx.gateway(), store, ds.items, Catalog())
    trace = optimize(split, agents, corpus.popularity_table(ds), ctx.train_config(),
                     checkpoint_dir=ctx.path("checkpoint"), resume=args.resume)
    store.save(ctx.path("memory.json"))
    write_trace(trace, ctx.path("trace.jsonl"))
    curve = alignment_curve(trace, 3) if trace else []
    ctx.write_json("alignment.json", {"schema_version": 1, "curve": curve})
    n_ok = sum(r.final_correct for r in trace)
    print(f"steps: {len(trace)}  final_correct: {n_ok}  skipped: {sum(r.skipped for r in trace)}")


def build_strategies(ctx: RunContext, names, ds, split, gateway=None, store=None) -> dict:
    ev = ctx.cfg["eval"]
    out = {}
    for name in names:
        if name == "pop":
            out[name] = PopRanker().fit(split)
        elif name == "bm25":
            out[name] = BM25Ranker(ds.items, noun=ctx.cfg["noun"]).fit(split)
        elif name == "bpr":
            b = ctx.cfg["bpr"]
            out[name] = BPRRanker(b["d"], b["learning_rate"], b["l2_reg"], b["epochs"], b["seed"]).fit(
                split, items=ds.items)
        elif name == "random":
            out[name] = RandomRanker(ev["seed"])
        elif name == "llmrank":
            out[name] = LLMRankRanker(gateway, ds.items, split.train, noun=ctx.cfg["noun"], cap=ev["history_cap"])
        else:
            args = (gateway, store, ds.items, None, ctx.cfg["noun"])
            if name == "agentcf-b":
                out[name] = BasicRanker(*args)
            elif name == "agentcf-br":
                out[name] = RetrievalRanker(*args, k=ev["retrieval_k"])
            elif name == "agentcf-bh":
                out[name] = HistoryRanker(*args, history=split.train, cap=ev["history_cap"])
            else:
                raise ConfigError([f"unknown strategy {name!r}"])
    return out


def cmd_eval(ctx: RunContext, args) -> None:
    ds = ctx.dataset()
    split = corpus.leave_one_out(ds, strict=ctx.cfg["data"]["strict"])
    ev = ctx.cfg["eval"]
    names = ev["strategies"]
    needs_llm = any(n.startswith("agentcf") or n == "llmrank" for n in names)
    needs_store = any(n.startswith("agentcf") for n in names)
    gateway = ctx.gateway() if needs_llm else None
    store = ctx.store() if needs_store else None
    ctx.claim("metrics.json", "results.csv", "rankings.jsonl")
    strategies = build_strategies(ctx, names, ds, split, gateway, store)
    report, rows = run_eval(strategies, split, ds.items, ev["reps"], ev["seed"], tuple(ev["ks"]),
                            ev["n_candidates"], dataset=str(ctx.run_dir.name), results_path=ctx.path("rankings.jsonl"))
    report.write(ctx.path("metrics.json"))
    write_rows(rows, ctx.path("results.csv"), tuple(ev["ks"]))
    for name, vals in report.metrics.items():
        print(name, " ".join(f"{k}={v:.4f}" for k, v in vals.items()))


def cmd_probe_bias(ctx: RunContext, args) -> None:
    ds = ctx.dataset()
    split = corpus.leave_one_out(ds, strict=ctx.cfg["data"]["strict"])
    pr = ctx.cfg["probes"]
    ctx.claim("bias.json")
    agents = AgentSystem(ctx.gateway(), ctx.store(), ds.items)
    report = bias_probe(agents, split, corpus.popularity_table(ds), tuple(pr["bias_strategies"]),
                        seed=ctx.cfg["eval"]["seed"], orders=tuple(pr["bias_orders"]))
    ctx.write_json("bias.json", report.to_dict())
    for name, r in report.rates.items():
        print(f"{name}: popular={r['popular_pick_rate']:.3f} first={r['first_position_pick_rate']:.3f} "
              f"n={r['n_trials']}")


def cmd_probe_propagation(ctx: RunContext, args) -> None:
    ds = ctx.dataset()
    split = ctx.split(ds)
    pr = ctx.cfg["probes"]
    problems = []
    if not pr["seed_user"]:
        problems.append("probes.seed_user is required")
    elif pr["seed_user"] not in split.train:
        problems.append(f"probes.seed_user {pr['seed_user']!r} is not a training user")
    if not pr["special_text"]:
        problems.append("probes.special_text is required")
    if not pr["keywords"]:
        problems.append("probes.keywords must not be empty")
    if problems:
        raise ConfigError(problems)
    ctx.claim("propagation.json", "propagation_memory.json")
    store = init_store(ds, ctx.cfg["user_seed"], ctx.cfg["noun"], split.users)
    agents = AgentSystem(ctx.gateway(), store, ds.items)
    report = propagation_probe(agents, pr["seed_user"], pr["special_text"], pr["keywords"], split,
                               corpus.popularity_table(ds), ctx.train_config(), query=pr["query"])
    ctx.write_json("propagation.json", report.to_dict())
    store.save(ctx.path("propagation_memory.json"))
    for hop, b in sorted(report.per_hop.items()):
        print(f"hop {hop}: {b['n_keyword']}/{b['n_users']} keyword={b['keyword_fraction']:.3f}")


def cmd_warmup_cold(ctx: RunContext, args) -> None:
    ds = ctx.dataset()
    split = corpus.leave_one_out(ds, strict=ctx.cfg["data"]["strict"])
    pr = ctx.cfg["probes"]
    cold = list(pr["cold_items"])
    unknown = [i for i in cold if i not in ds.items]
    if not cold or unknown:
        raise ConfigError([f"probes.cold_items must list known items (unknown: {unknown})"])
    ctx.claim("warmup.json", "coldstart.json")
    store = ctx.store()
    gateway = ctx.gateway()
    pop = corpus.popularity_table(ds)
    work = store.copy()
    for i in cold:
        work.set_item_text(i, ds.items[i].render(ctx.cfg["noun"]))
    agents = AgentSystem(gateway, work, ds.items)
    warmed, neighbors = {}, {}
    for mode in ("similar", "distinct"):
        warmed[mode], neighbors[mode] = {}, {}
        for i in cold:
            nb = select_warmup_neighbors(ds.items[i], ds.items, pop, pr["warmup_k"], mode, pr["warmup_pool"])
            neighbors[mode][i] = nb
            warmed[mode][i] = agents.warmup_cold_item(ds.items[i], nb)
    ctx.write_json("warmup.json", {"schema_version": 1, "warmed": warmed, "neighbors": neighbors})
    ev = ctx.cfg["eval"]
    report = cold_start_eval(
        cold, warmed, split, ds.items, store,
        lambda s: BasicRanker(gateway, s, ds.items, None, ctx.cfg["noun"]),
        ev["reps"], ev["seed"], tuple(ev["ks"]), ev["n_candidates"],
        identity_texts={i: ds.items[i].render(ctx.cfg["noun"]) for i in cold},
    )
    ctx.write_json("coldstart.json", report.to_dict())
    for mode, r in report.modes.items():
        print(f"{mode}: pairs={r['n_pairs']} " + " ".join(f"{k}={v:.4f}" for k, v in r.items() if k.startswith("delta")))


def cmd_reviews(ctx: RunContext, args) -> None:
    ds = ctx.dataset()
    pr = ctx.cfg["probes"]
    item, authors, readers = pr["review_item"], list(pr["review_authors"]), list(pr["review_readers"])
    if not item or not authors or not readers:
        raise ConfigError(["probes.review_item, probes.review_authors and probes.review_readers are required"])
    ctx.claim("reviews.jsonl", "review_decisions.json")
    agents = AgentSystem(ctx.gateway(), ctx.store(), ds.items)
    reviews = ReviewStore(ctx.path("reviews.jsonl"))
    written = [agents.write_review(a, item, pr["review_polarity"], reviews) for a in authors]
    decisions = {}
    for reader in readers:
        before, after = agents.decide_with_reviews(reader, item, written, pr["review_relation"])
        decisions[reader] = {"before": before.choice, "after": after.choice, "changed": before.choice != after.choice}
    ctx.write_json("review_decisions.json", {"schema_version": 1, "item": item, "decisions": decisions})
    changed = sum(d["changed"] for d in decisions.values())
    print(f"reviews: {len(written)}  readers: {len(readers)}  changed: {changed}")


COMMANDS = {
    "ingest": cmd_ingest,
    "sample": cmd_sample,
    "train": cmd_train,
    "eval": cmd_eval,
    "probe-bias": cmd_probe_bias,
    "probe-propagation": cmd_probe_propagation,
    "warmup-cold": cmd_warmup_cold,
    "reviews": cmd_reviews,
}


def _csv(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--run-dir", help="output directory (overrides AGENTCF_RUN_DIR and output_dir)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--jobs", type=int, help="maximum concurrent model requests")
    common.add_argument("--backend", choices=["live", "record", "replay", "script"])
    common.add_argument("--script", help="scripted responder name for the script/record backends")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="agentcf", description="Agent-based collaborative filtering")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="read review and metadata files into a dataset")
    p.add_argument("--reviews")
    p.add_argument("--meta")
    p.add_argument("--max-records", type=int)
    p.set_defaults(_overrides=[("reviews", "data", "reviews"), ("meta", "data", "meta"),
                               ("max_records", "data", "max_records")])

    p = sub.add_parser("sample", parents=[common], help="draw a dense or sparse user subset")
    p.add_argument("--n-users", type=int)
    p.add_argument("--mode", choices=["dense", "sparse"])
    p.add_argument("--seed", type=int)
    p.set_defaults(_overrides=[("n_users", "subset", "n_users"), ("mode", "subset", "mode"),
                               ("seed", "subset", "seed")])

    p = sub.add_parser("stats", parents=[common], help="print dataset statistics")
    p.add_argument("--dataset", help="dataset snapshot to describe")
    p.add_argument("--counts", nargs=3, type=int, action="append", metavar=("USERS", "ITEMS", "INTERS"),
                   help="print the sparsity of a (users, items, interactions) triple; repeatable")

    p = sub.add_parser("train", parents=[common], help="optimize user and item agents")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    p.add_argument("--max-rounds", type=int)
    p.add_argument("--ordering", choices=["global-chronological", "per-user"])
    p.set_defaults(_overrides=[("max_rounds", "train", "max_rounds"), ("ordering", "train", "ordering")])

    p = sub.add_parser("eval", parents=[common], help="rank held-out items and report NDCG")
    p.add_argument("--strategies", type=_csv, help=f"comma-separated subset of {','.join(EVAL_STRATEGIES)}")
    p.add_argument("--reps", type=int)
    p.set_defaults(_overrides=[("strategies", "eval", "strategies"), ("reps", "eval", "reps")])

    p = sub.add_parser("probe-bias", parents=[common], help="popularity and position pick rates")
    p = sub.add_parser("probe-propagation", parents=[common], help="plant a preference and trace its spread")
    p.add_argument("--seed-user")
    p.add_argument("--special-text")
    p.add_argument("--keywords", type=_csv)
    p.add_argument("--query", action="store_true", default=None)
    p.set_defaults(_overrides=[("seed_user", "probes", "seed_user"), ("special_text", "probes", "special_text"),
                               ("keywords", "probes", "keywords"), ("query", "probes", "query")])

    p = sub.add_parser("warmup-cold", parents=[common], help="warm cold items from popular neighbors")
    p.add_argument("--items", type=_csv)
    p.add_argument("--k", type=int)
    p.set_defaults(_overrides=[("items", "probes", "cold_items"), ("k", "probes", "warmup_k")])

    p = sub.add_parser("reviews", parents=[common], help="review exchange between user agents")
    p.add_argument("--item")
    p.add_argument("--authors", type=_csv)
    p.add_argument("--readers", type=_csv)
    p.set_defaults(_overrides=[("item", "probes", "review_item"), ("authors", "probes", "review_authors"),
                               ("readers", "probes", "review_readers")])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "stats":
            return cmd_stats(args)
        ctx = RunContext(args)
        COMMANDS[args.command](ctx, args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return exc.exit_code
    except AgentCFError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
