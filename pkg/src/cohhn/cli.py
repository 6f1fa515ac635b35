"""Command-line entry point: preprocess, train, evaluate, recommend, sweep.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from . import ndcore as nd
from .baselines import SKNN, SPop
from .config import RunConfig
from .dataset import (ConfigError, DataError, SplitDataset, assign_levels, dataset_stats,
                      load_dataset, preprocess, save_dataset)
from .hypergraph import build
from .metrics import EvalReport, evaluate
from .model import CoHHNRecommender, Hyperparams
from .report import plot_price_levels, plot_sweep, write_sweep_csv
from .training import train, write_history

log = logging.getLogger("cohhn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------- helpers


def _config(args, extra: dict | None = None) -> RunConfig:
    overrides = dict(extra or {})
    for flag, key in (("data", "paths.data"), ("out", "paths.out"), ("seed", "train.seed"),
                      ("epochs", "train.epochs"), ("lr", "train.lr"), ("batch", "train.batch"),
                      ("ablation", "model.ablation"), ("d", "model.d"), ("heads", "model.heads"),
                      ("r", "model.r"), ("rho", "price.rho"), ("mode", "price.mode"),
                      ("k_neighbors", "baseline.k_neighbors"), ("ks", "eval.ks")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return RunConfig.load(getattr(args, "config", None), overrides)


def _relevel(split: SplitDataset, rho: int | None, mode: str | None) -> SplitDataset:
    """Re-discretize prices when a different level count or mode is requested."""
    catalog = split.catalog
    rho = rho or catalog.rho
    mode = mode or catalog.mode
    if rho == catalog.rho and mode == catalog.mode:
        return split
    split = copy.deepcopy(split)
    assign_levels(split.catalog, rho, mode)
    return split


def _load_split(cfg: RunConfig, args) -> SplitDataset:
    split = load_dataset(cfg["paths.data"])
    return _relevel(split, getattr(args, "rho", None), getattr(args, "mode", None))


def _hyperparams(cfg: RunConfig, split: SplitDataset) -> Hyperparams:
    return cfg.hyperparams(rho=split.catalog.rho)


def _graph(split: SplitDataset):
    return build(split.catalog, [s.items for s in split.train])


def run_training(cfg: RunConfig, split: SplitDataset, out_dir: Path):
    hp = _hyperparams(cfg, split)
    graph = _graph(split)
    result = train(split, graph, hp, epochs=cfg["train.epochs"], batch=cfg["train.batch"],
                   lr=cfg["train.lr"], seed=cfg["train.seed"], ks=cfg["eval.ks"])
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "hyperparams": hp.to_dict(),
        "n_items": split.catalog.n,
        "n_categories": split.catalog.n_categories,
        "mode": split.catalog.mode,
        "seed": cfg["train.seed"],
        "best_epoch": result.best_epoch,
    }
    nd.save_checkpoint(out_dir / "checkpoint.json", result.best, meta)
    write_history(out_dir / "history.jsonl", result.history)
    cfg.write(out_dir / "config.json")
    return result, graph, hp


def load_recommender(checkpoint: str | Path, split: SplitDataset) -> CoHHNRecommender:
    store, meta = nd.load_checkpoint(checkpoint)
    hp = Hyperparams(**meta["hyperparams"])
    if meta.get("n_items") != split.catalog.n or hp.rho != split.catalog.rho:
        raise DataError("checkpoint does not match the dataset (item count or price levels)")
    return CoHHNRecommender(store, _graph(split), split.catalog.levels, hp)


def run_evaluate(recommender, split: SplitDataset, cfg: RunConfig, out_dir: Path, model: str,
                 which: str = "test", max_len: int = 19) -> EvalReport:
    sessions = getattr(split, which)
    report = evaluate(recommender, sessions, cfg["eval.ks"], split.catalog, model=model,
                      max_len=max_len, meta={"split": which, "seed": cfg["train.seed"],
                                             "rho": split.catalog.rho, "mode": split.catalog.mode})
    paths = report.write(out_dir)
    plot_price_levels(report, out_dir / "report_levels.png")
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    return report


# ---------------------------------------------------------------- commands


def cmd_preprocess(args) -> int:
    cfg = _config(args, {"input.path": args.input} if args.input else None)
    if not cfg["input.path"]:
        raise ConfigError("input.path is required (config or --input)")
    split = preprocess(
        cfg["input.path"], cfg.columns(), rho=cfg["price.rho"], mode=cfg["price.mode"],
        sessionize=cfg["input.sessionize"], min_item_count=cfg["filter.min_item_count"],
        min_session_len=cfg["filter.min_session_len"],
        event_column=cfg["input.event_column"] or None, keep_events=cfg["input.keep_events"],
    )
    out = save_dataset(split, cfg["paths.data"])
    stats = dataset_stats(split)
    (out / "stats.json").write_text(json.dumps(stats, indent=1) + "\n")
    cfg.write(out / "config.json")
    if args.dump_graph:
        _graph(split).dump(out / "graph.json")
    labels = {"items": "#item", "price_levels": "#price level", "categories": "#category",
              "interactions": "#interaction", "sessions": "#session", "avg_length": "avg.length"}
    for key, label in labels.items():
        print(f"{label:<14}{stats[key]}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    split = _load_split(cfg, args)
    out = Path(cfg["paths.out"])
    result, _, _ = run_training(cfg, split, out)
    last = result.history[-1] if result.history else {}
    print(f"trained {len(result.history)} epochs; best epoch {result.best_epoch}; "
          f"last train_loss {last.get('train_loss', float('nan')):.5f}")
    print(f"checkpoint: {out / 'checkpoint.json'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    split = _load_split(cfg, args)
    train_items = [s.items for s in split.train]
    if args.model == "cohhn":
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required for --model cohhn")
        rec = load_recommender(args.checkpoint, split)
        max_len = rec.hp.max_len
    elif args.model == "spop":
        rec, max_len = SPop(train_items, split.catalog.n), cfg["model.max_len"]
    else:
        rec = SKNN(train_items, split.catalog.n, cfg["baseline.k_neighbors"])
        max_len = cfg["model.max_len"]
    out = Path(cfg["paths.out"])
    report = run_evaluate(rec, split, cfg, out, args.model, args.split, max_len)
    cfg.write(out / "config.json")
    print(report.table(), end="")
    return EXIT_OK


def cmd_recommend(args) -> int:
    cfg = _config(args)
    split = _load_split(cfg, args)
    rec = load_recommender(args.checkpoint, split)
    text = Path(args.session_file).read_text() if args.session_file else args.session
    try:
        item_ids = json.loads(text)
    except (TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"session must be a JSON array of item ids: {exc}") from None
    if not isinstance(item_ids, list) or not item_ids:
        raise ConfigError("session must be a non-empty JSON array of item ids")
    session = [split.catalog.index_of(str(i)) for i in item_ids]
    scores = rec.scores([session])[0]
    for idx in rec.predict_topk(session, args.k):
        print(f"{split.catalog.item_ids[idx]}\t{scores[idx]:.6f}")
    return EXIT_OK


def _sweep_point(payload):
    cfg_values, split, param, value, out_dir = payload
    cfg = RunConfig(cfg_values)
    if param == "rho":
        split = _relevel(split, int(value), None)
    else:
        cfg.update({"model.r": int(value)})
    point_dir = Path(out_dir) / f"{param}={value}"
    _, graph, hp = run_training(cfg, split, point_dir)
    rec = load_recommender(point_dir / "checkpoint.json", split)
    return run_evaluate(rec, split, cfg, point_dir, f"cohhn {param}={value}", "test", hp.max_len)


def cmd_sweep(args) -> int:
    extra = {}
    if args.param:
        extra["sweep.param"] = args.param
    if args.values:
        extra["sweep.values"] = args.values
    if args.parallel:
        extra["sweep.parallel"] = True
    cfg = _config(args, extra)
    param, values = cfg["sweep.param"], cfg["sweep.values"]
    if not param:
        raise ConfigError("sweep.param must be 'rho' or 'r'")
    if not values:
        raise ConfigError("sweep grid is empty")
    split = _load_split(cfg, args)
    out = Path(cfg["paths.out"])
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg.to_json(), split, param, v, str(out)) for v in values]
    if cfg["sweep.parallel"]:
        with ProcessPoolExecutor() as pool:
            reports = list(pool.map(_sweep_point, jobs))
    else:
        reports = [_sweep_point(job) for job in jobs]
    write_sweep_csv(param, values, reports, out / "sweep.csv")
    plot_sweep(param, values, reports, out / "sweep.png")
    cfg.write(out / "config.json")
    for v, rep in zip(values, reports):
        cells = "  ".join(f"{k} {x:6.2f}" for k, x in rep.overall.items())
        print(f"{param}={v:<6} {cells}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cohhn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=True, out=True):
        p.add_argument("--config", help="TOML (or JSON) config with flat dotted keys")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        if data:
            p.add_argument("--data", help="preprocessed dataset directory")
        if out:
            p.add_argument("--out", help="output directory")

    def model_flags(p):
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--d", type=int)
        p.add_argument("--heads", type=int)
        p.add_argument("--r", type=int)
        p.add_argument("--rho", type=int, help="re-discretize prices with this many levels")
        p.add_argument("--mode", choices=("logistic", "uniform"))
        p.add_argument("--ablation", choices=("none", "no_price", "no_category",
                                              "price_as_feature_only", "no_coguide"))

    p = sub.add_parser("preprocess", help="raw CSV -> dataset directory")
    common(p, data=False, out=False)
    p.add_argument("--input", help="raw interaction CSV")
    p.add_argument("--out", dest="data", help="dataset directory to write")
    p.add_argument("--rho", type=int)
    p.add_argument("--mode", choices=("logistic", "uniform"))
    p.add_argument("--dump-graph", action="store_true", help="also write graph.json")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model and write checkpoint + history")
    common(p)
    model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint or baseline")
    common(p)
    p.add_argument("--model", choices=("cohhn", "spop", "sknn"), default="cohhn")
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=("test", "valid"), default="test")
    p.add_argument("--rho", type=int)
    p.add_argument("--mode", choices=("logistic", "uniform"))
    p.add_argument("--k-neighbors", dest="k_neighbors", type=int)
    p.add_argument("--ks", help="comma-separated cut-offs, e.g. 10,20")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("recommend", help="top-k items for one session")
    common(p, out=False)
    p.add_argument("--checkpoint", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--session", help='JSON array of item ids, e.g. \'["a", "b"]\'')
    group.add_argument("--session-file")
    p.add_argument("-k", type=int, default=20)
    p.add_argument("--rho", type=int)
    p.add_argument("--mode", choices=("logistic", "uniform"))
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("sweep", help="train + evaluate over a grid of rho or r")
    common(p)
    model_flags(p)
    p.add_argument("--param", choices=("rho", "r"))
    p.add_argument("--values", help="comma-separated grid, e.g. 2,10,200")
    p.add_argument("--parallel", action="store_true")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"cohhn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"cohhn: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"cohhn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (nd.NumericError, FloatingPointError) as exc:
        print(f"cohhn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
