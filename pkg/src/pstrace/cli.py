"""Command-line entry point: ``pstrace <subcommand> --config run.json [overrides]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .synth import write_corpus

log = logging.getLogger("pstrace")


def _value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(args: argparse.Namespace) -> dict:
    out = {}
    for item in args.set or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        out[key] = _value(val)
    flags = {
        "manifest": "paths.manifest",
        "xml_dir": "paths.xml_dir",
        "work_dir": "paths.work_dir",
        "workers": "workers",
        "epochs": "gcn.epochs",
        "lr": "gcn.learning_rate",
        "seed": "gcn.seed",
    }
    for attr, key in flags.items():
        v = getattr(args, attr, None)
        if v is not None:
            out[key] = str(Path(v).resolve()) if key.startswith("paths.") else v
    return out


def _config(args: argparse.Namespace) -> pipeline.RunConfig:
    return pipeline.load_config(args.config, _overrides(args))


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", required=True, help="JSON run config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a dotted config key")
    p.add_argument("--manifest")
    p.add_argument("--xml-dir", dest="xml_dir")
    p.add_argument("--work-dir", dest="work_dir")
    p.add_argument("--workers", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)


def _print_eval(result: dict) -> None:
    print(f"papers\t{result['papers']}")
    for row in result["rows"]:
        print(f"{row['name']}\tMAP={row['map']:.4f}")


def cmd_extract(args):
    rep = pipeline.run_extract(_config(args))
    t = rep["totals"]
    print(f"papers={t['papers']} skipped={t['skipped']} markers={t['markers']} instances={t['instances']} "
          f"unmatched_bib_keys={t['unmatched_bib_keys']} records={t['records']}")


def cmd_build_graph(args):
    graphs = pipeline.run_build_graph(_config(args))
    print(f"graphs={len(graphs)} nodes={sum(g.n for g in graphs)} edges={sum(len(g.edges) for g in graphs)}")


def cmd_train_gcn(args):
    rep = pipeline.run_train_gcn(_config(args))
    vm = rep["val_map"]
    print(f"train={rep['train_papers']} val={rep['val_papers']} final_loss={rep['final_loss']} "
          f"val_map={'n/a' if vm is None else f'{vm:.4f}'}")


def cmd_score(args):
    cfg = _config(args)
    table = pipeline.run_score(cfg, args.split, Path(args.out) if args.out else None)
    print(f"scored papers={len(table.scores)} refs={sum(len(r) for r in table.scores.values())}")


def cmd_ensemble(args):
    weights = [float(w) for w in args.weights.split(",")] if args.weights else None
    table = pipeline.run_ensemble([Path(t) for t in args.tables], Path(args.out), weights, args.method)
    print(f"ensemble tag={table.tag} papers={len(table.scores)}")


def cmd_eval(args):
    cfg = _config(args)
    result = pipeline.run_eval(
        cfg, [Path(t) for t in args.tables], args.split, args.ensemble, args.random_baseline,
        Path(args.out_dir) if args.out_dir else None,
    )
    _print_eval(result)


def cmd_run(args):
    _print_eval(pipeline.run_all(_config(args), args.random_baseline))


def cmd_make_demo(args):
    cfg = write_corpus(args.dir, args.papers, args.refs, args.sources, args.seed)
    print(f"wrote {cfg}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pstrace", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="write semantic and absolute sequence-record files")
    _run_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("build-graph", help="write one graph JSON per paper")
    _run_flags(p)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train-gcn", help="train the GCN and score the validation split")
    _run_flags(p)
    p.set_defaults(func=cmd_train_gcn)

    p = sub.add_parser("score", help="score papers with a trained checkpoint")
    _run_flags(p)
    p.add_argument("--split", choices=("all", "train", "val"), default="all")
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("ensemble", help="combine score tables")
    p.add_argument("tables", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--weights", help="comma-separated, one per table")
    p.add_argument("--method", choices=("mean", "rank"), default="mean")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("eval", help="MAP report for score tables")
    _run_flags(p)
    p.add_argument("tables", nargs="+")
    p.add_argument("--split", choices=("all", "train", "val"), default="all")
    p.add_argument("--ensemble", action="store_true", help="add a row for the ensemble of all tables")
    p.add_argument("--random-baseline", type=int, default=0, metavar="N", help="mean MAP of N seeded random tables")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="extract, build-graph, train-gcn, score and eval in one go")
    _run_flags(p)
    p.add_argument("--random-baseline", type=int, default=20, metavar="N")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("make-demo", help="write a synthetic corpus with a ready config")
    p.add_argument("dir")
    p.add_argument("--papers", type=int, default=10)
    p.add_argument("--refs", type=int, default=8)
    p.add_argument("--sources", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_demo)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except (ValueError, FileNotFoundError, KeyError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
