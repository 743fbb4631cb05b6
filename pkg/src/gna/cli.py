"""Batch command-line front end: ``gna <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .experiments import VARIANTS, DataConfig, GedCache, derive_seeds, evaluate, generate_dataset, run_variant
from .ged import exact_ged
from .graph import GraphFormatError, load_graphs, load_pairs, save_graphs, save_pairs, split_dataset
from .model import GNAModel, alignment_dot
from .tensor import CHECKPOINT_FORMAT, CHECKPOINT_VERSION
from .trainer import TrainConfig, TrainingError, train, write_history

logger = logging.getLogger("gna")

MAX_SKIP_RATE = 0.10


class CliError(Exception):
    pass


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise argparse.ArgumentTypeError(f"no such file: {path}")
    return p


def _k_list(text: str) -> list[int]:
    try:
        ks = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k list {text!r}; expected e.g. 10,20") from None
    if not ks or any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError("k values must be positive integers")
    return ks


def _train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training (flags override --config)")
    g.add_argument("--config", type=_existing, help="JSON file with TrainConfig fields")
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--weight-decay", type=float)
    g.add_argument("--tau", type=float)
    g.add_argument("--sinkhorn-iters", type=int)
    g.add_argument("--gin-dims", type=lambda s: tuple(int(x) for x in s.split(",")))
    g.add_argument("--cost-layers", type=int)
    g.add_argument("--ntn-slices", type=int)
    g.add_argument("--seed", type=int, default=0, help="master seed for split, init, shuffling and noise")


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--graphs", type=_existing, required=True, help="graph jsonl file")
    p.add_argument("--pairs", type=_existing, required=True, help="pair jsonl file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gna", description="Graph node alignment: GED labels, training, evaluation.")
    parser.add_argument("--version", action="version",
                        version=f"gna {__version__} (checkpoint {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, "
                                "graphs/pairs jsonl v1)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthetic graphs plus exact-GED labeled pairs")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--n-min", type=int, default=4)
    p.add_argument("--n-max", type=int, default=8)
    p.add_argument("--density", type=float, default=0.15, help="probability of each extra non-tree edge")
    p.add_argument("--labels", type=int, default=3, help="label vocabulary size (0 = unlabeled)")
    p.add_argument("--num-pairs", type=int, default=10_000)
    p.add_argument("--budget", type=int, default=200_000, help="A* node-expansion cap per pair")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("ged-exact", help="label a pair file with exact GEDs")
    p.add_argument("--graphs", type=_existing, required=True)
    p.add_argument("--pairs", type=_existing, required=True, help="jsonl with g1/g2 ids; ged optional")
    p.add_argument("--budget", type=int, default=200_000)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model")
    _data_flags(p)
    _train_flags(p)
    p.add_argument("--init", type=_existing, help="start from this checkpoint")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="history CSV path (default: <out>.history.csv)")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=_existing, required=True)
    _data_flags(p)
    _eval_flags(p)
    p.add_argument("--out", required=True, help="metrics JSON path")

    p = sub.add_parser("align", help="alignment report for one pair")
    p.add_argument("--checkpoint", type=_existing, required=True)
    p.add_argument("--graphs", type=_existing, required=True)
    p.add_argument("--g1", required=True, help="graph id")
    p.add_argument("--g2", required=True, help="graph id")
    p.add_argument("--out", required=True, help="output prefix; writes <out>.json and <out>.dot")

    p = sub.add_parser("ablate", help="train and evaluate an ablated variant")
    p.add_argument("--variant", required=True, choices=[v for v in VARIANTS if v != "full"])
    _data_flags(p)
    _train_flags(p)
    _eval_flags(p)
    p.add_argument("--out", required=True, help="results JSON path")
    return parser


def _eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=_k_list, default=[10, 20], help="comma-separated k values for P@k")
    p.add_argument("--queries", type=int, default=30)
    p.add_argument("--candidates", type=int, default=100)
    p.add_argument("--eval-seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=200_000, help="A* cap for candidate ground truth")
    p.add_argument("--dataset", default=None, help="dataset name recorded in the results")


def _train_config(args) -> TrainConfig:
    base = {}
    if args.config is not None:
        try:
            base = json.loads(args.config.read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"{args.config}: invalid JSON ({exc})") from None
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(base) - known
        if unknown:
            raise CliError(f"{args.config}: unknown config keys {sorted(unknown)}")
    for f in fields(TrainConfig):
        val = getattr(args, f.name, None)
        if val is not None and f.name != "seed":
            base[f.name] = val
    base["seed"] = derive_seeds(args.seed, 2)[1]
    return TrainConfig(**base)


def _load_data(args):
    graphs = load_graphs(args.graphs)
    return graphs, load_pairs(args.pairs, graphs)


def _split(pairs, seed: int):
    return split_dataset(pairs, (0.6, 0.2, 0.2), seed=seed)


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def cmd_gen_data(args) -> int:
    if args.count < 1 or args.num_pairs < 1:
        raise CliError("--count and --num-pairs must be positive")
    data = DataConfig(args.count, args.n_min, args.n_max, args.density, args.labels, args.num_pairs, args.seed)
    oracle = GedCache(args.budget)
    graphs, pairs = generate_dataset(data, oracle)
    n_pairs = min(args.num_pairs, args.count * (args.count - 1) // 2)
    skipped = n_pairs - len(pairs)
    print(f"labeled {len(pairs)} of {n_pairs} pairs; skipped {skipped} over the GED budget")
    if n_pairs and skipped / n_pairs > MAX_SKIP_RATE:
        print(f"error: {skipped}/{n_pairs} pairs exceeded the GED budget (> {MAX_SKIP_RATE:.0%}); "
              "raise --budget or shrink --n-max; nothing written", file=sys.stderr)
        return 3
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_graphs(graphs, out / "graphs.jsonl")
    save_pairs(pairs, out / "pairs.jsonl")
    print(f"wrote {out / 'graphs.jsonl'} and {out / 'pairs.jsonl'}")
    return 0


def cmd_ged_exact(args) -> int:
    graphs = {g.id: g for g in load_graphs(args.graphs)}
    rows, skipped = [], 0
    with open(args.pairs, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                a, b = graphs[rec["g1"]], graphs[rec["g2"]]
            except (json.JSONDecodeError, KeyError) as exc:
                raise GraphFormatError(f"{args.pairs}:{n}: bad pair record ({exc})") from None
            res = exact_ged(a, b, budget=args.budget)
            if not res.solved:
                skipped += 1
                logger.warning("pair (%s, %s) exceeded the budget", a.id, b.id)
            rows.append({"g1": a.id, "g2": b.id, "ged": res.ged})
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")
    print(f"labeled {len(rows) - skipped} of {len(rows)} pairs; {skipped} over budget (ged null)")
    return 0


def cmd_train(args) -> int:
    _, pairs = _load_data(args)
    cfg = _train_config(args)
    split_seed = derive_seeds(args.seed, 2)[0]
    split = _split(pairs, split_seed)
    model = None
    if args.init is not None:
        model, _ = GNAModel.load(args.init)
    result = train(split, cfg, model=model)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    result.model.save(out, {"split_seed": split_seed, "train": cfg.to_dict(), "best_epoch": result.best_epoch})
    history = Path(args.history) if args.history else out.with_suffix(".history.csv")
    write_history(result.history, history)
    best = result.history[result.best_epoch - 1]
    print(f"best epoch {result.best_epoch}: val_mae={best.val_mae:.4f} val_rho={best.val_rho:.4f}; "
          f"checkpoint {out}, history {history}")
    return 0


def _eval_kwargs(args, corpus_size: int) -> dict:
    if any(k > args.candidates for k in args.k):
        raise CliError(f"k values {args.k} exceed --candidates {args.candidates}")
    if args.candidates >= corpus_size:
        raise CliError(f"--candidates {args.candidates} needs a corpus of more than {corpus_size} graphs")
    return dict(queries=args.queries, candidates=args.candidates, k_list=tuple(args.k), seed=args.eval_seed)


def cmd_eval(args) -> int:
    graphs, pairs = _load_data(args)
    model, meta = GNAModel.load(args.checkpoint)
    split = _split(pairs, meta.get("split_seed", 0))
    kw = _eval_kwargs(args, len(graphs))
    res = evaluate(model, split, graphs, GedCache(args.budget, pairs), **kw)
    _write_json(args.out, {"dataset": args.dataset or str(args.pairs), "checkpoint": str(args.checkpoint),
                           "per_query": res["per_query"], "mean": res["mean"]})
    print(json.dumps(res["mean"]))
    return 0


def cmd_align(args) -> int:
    graphs = {g.id: g for g in load_graphs(args.graphs)}
    for gid in (args.g1, args.g2):
        if gid not in graphs:
            raise CliError(f"graph id {gid!r} not found in {args.graphs}")
    model, _ = GNAModel.load(args.checkpoint)
    g1, g2 = graphs[args.g1], graphs[args.g2]
    report = model.predict(g1, g2)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.json").write_text(report.to_json() + "\n", encoding="utf-8")
    Path(f"{prefix}.dot").write_text(alignment_dot(report, g1, g2), encoding="utf-8")
    print(f"predicted GED {report.predicted_ged:.3f}; wrote {prefix}.json and {prefix}.dot")
    return 0


def cmd_ablate(args) -> int:
    graphs, pairs = _load_data(args)
    cfg = _train_config(args)
    split = _split(pairs, derive_seeds(args.seed, 2)[0])
    kw = _eval_kwargs(args, len(graphs))
    res = run_variant(args.variant, split, graphs, GedCache(args.budget, pairs), cfg, kw)
    out = {"dataset": args.dataset or str(args.pairs), **res.to_dict()}
    _write_json(args.out, out)
    print(json.dumps({"variant": args.variant, **res.metrics["mean"]}))
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "ged-exact": cmd_ged_exact,
    "train": cmd_train,
    "eval": cmd_eval,
    "align": cmd_align,
    "ablate": cmd_ablate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CliError, GraphFormatError, ValueError, TrainingError, OSError) as exc:
        print(f"gna {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
