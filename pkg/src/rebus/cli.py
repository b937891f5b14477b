"""Command-line front end: prepare | mine | train | evaluate | recommend.

Exit codes: 0 success, 1 internal error, 2 invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__, corpus, evalkit, kernels, seqmine, trainer
from .bundle import ModelBundle, load_bundle, save_bundle
from .model import Hyperparams, Mode, recommend_top_n

log = logging.getLogger("rebus")

DATASET_FILE = "dataset.rebusdata"
COLD_FILE = "cold.rebusdata"
MODEL_FILE = "model.rebusmodel"


class InputError(Exception):
    """Bad user input; reported with exit code 2."""


def _write_run(out: Path, command: str, config: dict) -> None:
    run = {"command": command, "version": __version__, "backend": kernels.BACKEND, **config}
    (out / "run.json").write_text(json.dumps(run, indent=2, sort_keys=True, default=str) + "\n")


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _existing(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise InputError(f"{what} not found: {p}")
    return p


def _load_config(path) -> dict:
    """Flat mapping of field names from a JSON or TOML file (``[hyper]``/``[train]`` tables allowed)."""
    p = _existing(path, "config file")
    text = p.read_text()
    if p.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        raw = tomllib.loads(text)
    else:
        raw = json.loads(text)
    flat = {}
    for key, val in raw.items():
        if isinstance(val, dict):
            flat.update(val)
        else:
            flat[key.replace("-", "_")] = val
    known = set(Hyperparams.__dataclass_fields__) | set(trainer.TrainConfig.__dataclass_fields__) | {"seed"}
    unknown = sorted(set(flat) - known)
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(unknown)}")
    return flat


def _resolve(args, cls, extra: dict | None = None):
    """flags > config file > defaults."""
    values = {}
    cfg = _load_config(args.config) if getattr(args, "config", None) else {}
    if "seed" in cfg:
        cfg.setdefault("rng_seed", cfg.pop("seed"))
    for f in fields(cls):
        if f.name in cfg:
            values[f.name] = cfg[f.name]
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    if extra:
        values.update(extra)
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc)) from None


# -- prepare ---------------------------------------------------------------------

def cmd_prepare(args) -> int:
    src = _existing(args.events, "event file")
    out = _outdir(args.out)
    if args.cold_start and args.recent:
        raise InputError("--cold-start and --recent cannot be combined")
    events = list(corpus.read_events(src, timestamp_col=args.timestamp_col, delimiter=args.delimiter))
    if not events:
        raise corpus.EmptyDatasetError("no qualifying users")
    cold = None
    if args.cold_start:
        part = corpus.cold_start_split(events, core=args.core)
        d = part.main
        cold = part
    else:
        d = corpus.ingest(events, core=args.core)
    if args.recent:
        d = corpus.truncate_recent(d, args.recent)
    sp = corpus.split(d)
    corpus.save_dataset(d, out / DATASET_FILE)
    manifest = {
        "dataset": DATASET_FILE,
        "dataset_sha256": corpus.dataset_hash(d),
        "num_users": sp.num_users,
        "num_items": sp.num_items,
        "train_interactions": sp.num_train_interactions(),
        "protocol": "leave-one-out: last item test, second-to-last validation",
    }
    if cold is not None:
        cd = cold.as_dataset()
        corpus.save_dataset(cd, out / COLD_FILE)
        manifest["cold_users"] = cold.num_cold
        manifest["cold_file"] = COLD_FILE
    (out / "split.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _write_run(out, "prepare", {"events": str(src), "recent": args.recent, "core": args.core,
                                "cold_start": args.cold_start, "seed": None, "stats": d.stats()})
    print(json.dumps(d.stats(), sort_keys=True))
    return 0


def _load_split(path):
    p = Path(path)
    if p.is_dir():
        p = p / DATASET_FILE
    d = corpus.load_dataset(_existing(p, "dataset"))
    return d, corpus.split(d)


# -- mine ------------------------------------------------------------------------

def cmd_mine(args) -> int:
    _, sp = _load_split(args.dataset)
    f = seqmine.mine_frequent_substrings(sp.train, args.min_count, args.max_size)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(seqmine.dump_patterns(f))
    _write_run(out.parent, "mine", {"dataset": str(args.dataset), "min_count": args.min_count,
                                    "max_size": args.max_size, "num_patterns": len(f), "seed": None})
    print(f"{len(f)} patterns -> {out}")
    return 0


# -- train -----------------------------------------------------------------------

def _patterns_for(args, split, hyper: Hyperparams):
    if hyper.mc_order is not None and hyper.mode is not Mode.LONG_TERM:
        return None
    if getattr(args, "patterns", None):
        text = _existing(args.patterns, "pattern file").read_text()
        return seqmine.load_patterns(text, hyper.min_count, hyper.max_size)
    return seqmine.mine_frequent_substrings(split.train, hyper.min_count, hyper.max_size)


def cmd_train(args) -> int:
    d, sp = _load_split(args.dataset)
    out = _outdir(args.out)
    hyper = _resolve(args, Hyperparams)
    seed_extra = {"rng_seed": args.seed} if args.seed is not None else None
    config = _resolve(args, trainer.TrainConfig, seed_extra)
    leaderboard = None
    if args.grid:
        grids = dict(trainer.DEFAULT_GRIDS)
        if args.grid_max_size:
            grids["max_size"] = list(args.grid_max_size)
        cache = {}
        if args.patterns:
            cache[(hyper.min_count, hyper.max_size)] = _patterns_for(args, sp, hyper)
        gr = trainer.grid_search(sp, grids, config, hyper, cache)
        hyper, result = gr.best, gr.best_result
        f = cache.get((hyper.min_count, hyper.max_size)) if hyper.mc_order is None else None
        (out / "leaderboard.csv").write_text(gr.leaderboard_csv())
        leaderboard = len(gr.leaderboard)
    else:
        f = _patterns_for(args, sp, hyper)
        result = trainer.train(sp, hyper, config, f)
    meta = {
        "dataset_sha256": corpus.dataset_hash(d),
        "best_epoch": result.best_epoch,
        "valid_auc": result.best_valid_auc,
        "seed": config.rng_seed,
    }
    save_bundle(ModelBundle(hyper, result.params, f, meta), out / MODEL_FILE)
    (out / "train_log.csv").write_text(result.log_csv())
    _write_run(out, "train", {"dataset": str(args.dataset), "hyper": hyper.to_dict(),
                              "train": config.to_dict(), "seed": config.rng_seed, "grid": bool(args.grid),
                              "grid_combinations": leaderboard})
    print(f"best epoch {result.best_epoch} valid AUC {result.best_valid_auc:.4f} -> {out / MODEL_FILE}")
    return 0


# -- evaluate --------------------------------------------------------------------

def _write_report(out: Path, stem: str, report: evalkit.EvalReport) -> None:
    report.check_invariants()
    (out / f"{stem}.json").write_text(report.to_json())
    (out / f"{stem}.csv").write_text(report.to_csv())


def cmd_evaluate(args) -> int:
    d, sp = _load_split(args.dataset)
    out = _outdir(args.out)
    if (args.model is None) == (args.baseline is None):
        raise InputError("give exactly one of --model or --baseline")
    patterns = None
    if args.baseline == "pop":
        scorer = evalkit.pop_baseline(sp)
        label = "POP"
    else:
        b = load_bundle(_existing(args.model, "model bundle"))
        if b.params.num_items != d.num_items:
            raise InputError("model and dataset disagree on the number of items")
        scorer = evalkit.RebusScorer(b.params, b.hyper, b.patterns)
        patterns = b.patterns
        label = "REBUS"
    task = evalkit.make_valid_task(sp) if args.on == "valid" else evalkit.make_test_task(sp)
    popularity = sp.train_popularity()
    outcomes = evalkit.rank_outcomes(scorer, task, top_n=args.top_n)
    hit, ndcg = evalkit.hit_ndcg(outcomes)
    pop, div = evalkit.pop_div([o.top_items for o in outcomes], popularity, task.num_items)
    stats = None
    if args.pattern_stats:
        if patterns is None:
            raise InputError("--pattern-stats needs a model trained with a pattern set")
        stats = evalkit.pattern_stats(patterns, task.prefixes)
        (out / "pattern_stats.csv").write_text(
            evalkit.pattern_stats_csv([stats.to_row(f"{label}_{patterns.min_count}_{patterns.max_size}")]))
    report = evalkit.EvalReport(evalkit.auc(outcomes), hit, ndcg, pop, div, len(task), stats)
    _write_report(out, "report", report)
    with open(out / "top_items.tsv", "w") as fh:
        for o in outcomes:
            fh.write(d.user_keys[o.user] + "\t" + ",".join(d.item_keys[i] for i in o.top_items) + "\n")
    if args.cold_start:
        cold = corpus.load_dataset(_existing(args.cold_start, "cold-start file"))
        part = corpus.ColdStartPartition(d, cold.user_keys, tuple(s[:-1] for s in cold.sequences),
                                         np.array([s[-1] for s in cold.sequences], dtype=np.int32))
        _write_report(out, "cold_report", evalkit.cold_start_eval(scorer, part, popularity))
    _write_run(out, "evaluate", {"dataset": str(args.dataset), "model": args.model, "baseline": args.baseline,
                                 "on": args.on, "seed": None, "label": label})
    print(f"{label} AUC {report.auc:.4f} HIT_50 {report.hit[50]:.4f} NDCG_50 {report.ndcg[50]:.4f}")
    return 0


# -- recommend -------------------------------------------------------------------

def _parse_history(args, d):
    if args.history_file:
        raw = _existing(args.history_file, "history file").read_text().replace("\n", ",")
    else:
        raw = args.history or ""
    toks = [t.strip() for t in raw.split(",") if t.strip()]
    if not toks:
        raise InputError("empty history")
    if d is not None:
        index = {k: n for n, k in enumerate(d.item_keys)}
        try:
            return [index[t] for t in toks]
        except KeyError as exc:
            raise InputError(f"unknown item key {exc.args[0]!r}") from None
    try:
        return [int(t) for t in toks]
    except ValueError:
        raise InputError("history must be integer item ids unless --dataset is given") from None


def cmd_recommend(args) -> int:
    b = load_bundle(_existing(args.model, "model bundle"))
    d = None
    if args.dataset:
        d, _ = _load_split(args.dataset)
    hist = _parse_history(args, d)
    if min(hist) < 0 or max(hist) >= b.params.num_items:
        raise InputError("history item id out of range")
    recs = recommend_top_n(b.params, b.hyper, hist, b.patterns, args.n, exclude=np.unique(hist))
    for i in recs:
        print(d.item_keys[i] if d is not None else int(i))
    return 0


# -- argument parsing ------------------------------------------------------------

def _add_model_flags(p) -> None:
    g = p.add_argument_group("model hyperparameters")
    g.add_argument("--k", type=int)
    g.add_argument("--alpha", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--no-gamma", dest="no_gamma", action="store_const", const=True)
    g.add_argument("--lambda-reg", dest="lambda_reg", type=float)
    g.add_argument("--window", type=int)
    g.add_argument("--min-count", dest="min_count", type=int)
    g.add_argument("--max-size", dest="max_size", type=int)
    g.add_argument("--mc-order", dest="mc_order", type=int)
    g.add_argument("--mode", choices=[m.value for m in Mode])
    t = p.add_argument_group("training")
    t.add_argument("--learning-rate", dest="learning_rate", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--max-epochs", dest="max_epochs", type=int)
    t.add_argument("--adam-beta1", dest="adam_beta1", type=float)
    t.add_argument("--adam-beta2", dest="adam_beta2", type=float)
    t.add_argument("--adam-epsilon", dest="adam_epsilon", type=float)
    t.add_argument("--epoch-size", dest="epoch_size", type=int)
    t.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON or TOML file with hyperparameter / training fields")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rebus", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest an event log, filter, split")
    p.add_argument("events")
    p.add_argument("--out", default="data")
    p.add_argument("--recent", type=int, help="keep each user's x most recent items")
    p.add_argument("--cold-start", action="store_true", help="also write the cold-start partition")
    p.add_argument("--core", type=int, default=corpus.CORE)
    p.add_argument("--timestamp-col", type=int, default=2, help="0-based column of the timestamp")
    p.add_argument("--delimiter", help="field delimiter (auto-detected by default)")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("mine", help="mine frequent substrings of the training prefixes")
    p.add_argument("dataset")
    p.add_argument("--min-count", type=int, default=2)
    p.add_argument("--max-size", type=int, default=3)
    p.add_argument("--out", default="patterns.tsv")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("train", help="train a model (optionally grid search)")
    p.add_argument("dataset")
    p.add_argument("--patterns", help="pattern file from `mine` (mined on the fly otherwise)")
    p.add_argument("--out", default="run")
    p.add_argument("--grid", action="store_true", help="search alpha, gamma and lambda over the default grids")
    p.add_argument("--grid-max-size", type=int, nargs="+")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="full-catalogue ranking metrics")
    p.add_argument("dataset")
    p.add_argument("--model")
    p.add_argument("--baseline", choices=["pop"])
    p.add_argument("--on", choices=["test", "valid"], default="test")
    p.add_argument("--cold-start", help="cold-start file written by `prepare --cold-start`")
    p.add_argument("--pattern-stats", action="store_true")
    p.add_argument("--top-n", type=int, default=50)
    p.add_argument("--out", default="eval")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("recommend", help="top-n items for a history")
    p.add_argument("model")
    p.add_argument("--history", help="comma-separated item ids (or keys with --dataset)")
    p.add_argument("--history-file")
    p.add_argument("--dataset", help="dataset whose item keys to use for input and output")
    p.add_argument("-n", type=int, default=10)
    p.set_defaults(func=cmd_recommend)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, corpus.EventFormatError, corpus.EmptyDatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
