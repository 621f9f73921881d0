"""``graph-bendr`` command line: synth, graph, pretrain, finetune, grid, gradcheck, report.

Progress goes to stderr, a JSON summary to stdout, artifacts under ``--out``.
Exit codes: 0 ok, 1 runtime failure, 2 usage or config error, 3 gradient check failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import SEED_ENV, ConfigError, RunConfig, load_config
from .diff import Checkpoint
from .eeg.io import FormatError, read_corpus, read_task, write_corpus, write_task
from .eeg.montage import default_montage, load_montage
from .eeg.preprocess import resample, select_channels, window
from .eeg.synth import TaskSpec, generate_pretrain_corpus, generate_task
from .eeg.types import ValidationError
from .graph import build_edge_weights
from .gradsuite import CASES, run_suite
from .pipelines import PipelineError, crossval, model_name, pretrain, run_grid, stack_windows
from .report import load_cells, write_report

log = logging.getLogger("graph_bendr")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_GRADCHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _emit(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")
    sys.stdout.flush()


def _montage(path):
    return default_montage() if path is None else load_montage(path)


def _seed(flag: int | None, default: int = 0) -> int:
    if SEED_ENV in os.environ:
        try:
            return int(os.environ[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    return default if flag is None else flag


# -- synth -------------------------------------------------------------------

def cmd_synth(args) -> int:
    montage = _montage(args.montage)
    seed = _seed(args.seed)
    try:
        return _synth(args, montage, seed)
    except ValidationError as exc:
        raise UsageError(str(exc)) from exc


def _synth(args, montage, seed) -> int:
    if args.kind == "pretrain":
        recs = generate_pretrain_corpus(seed, args.recordings, montage, args.duration, args.sfreq)
        manifest = write_corpus(recs, args.out)
        _emit({"kind": "corpus", "recordings": len(recs), "manifest": str(manifest)})
        return EXIT_OK
    pair = tuple(p.strip() for p in args.pair.split(","))
    if len(pair) != 2:
        raise UsageError("--pair takes two comma-separated channel labels")
    spec = TaskSpec(
        num_windows=args.windows,
        window_s=args.duration,
        sfreq=args.sfreq,
        coupled_pair=pair,
        class_balance=args.balance,
        metric=args.metric,
        folds=args.folds,
        coupling_amplitude=args.amplitude,
        name=args.name,
    )
    ds = generate_task(seed, montage, spec)
    manifest = write_task(ds, args.out)
    labels = ds.labels
    _emit({"kind": "task", "windows": len(labels), "positive": int(labels.sum()), "negative": int((labels == 0).sum()),
           "metric": ds.metric, "folds": ds.folds, "manifest": str(manifest)})
    return EXIT_OK


# -- graph -------------------------------------------------------------------

def cmd_graph(args) -> int:
    W = build_edge_weights(_montage(args.montage))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(W.to_json() if out.suffix == ".json" else W.to_csv())
    _emit({"channels": W.n, "out": str(out)})
    return EXIT_OK


# -- pretrain ----------------------------------------------------------------

def load_pretrain_windows(data, cfg: RunConfig, montage) -> np.ndarray:
    windows = []
    for rec in read_corpus(data):
        rec = resample(select_channels(rec, montage), cfg.data.sfreq)
        windows.extend(window(rec, cfg.data.window_s))
    if not windows:
        raise PipelineError(f"no {cfg.data.window_s} s windows in {data}")
    return stack_windows(windows)


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    montage = _montage(args.montage or cfg.montage)
    log.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    data = load_pretrain_windows(args.data, cfg, montage)
    log.info("pre-training on %d windows of shape %s", len(data), data.shape[1:])
    t0 = time.perf_counter()

    def progress(step, loss, acc):
        if step % 25 == 0 or step == cfg.pretrain.steps - 1:
            log.info("step %d loss %.4f acc %.3f", step, loss, acc)

    res = pretrain(data, cfg, montage, progress)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    digest = res.checkpoint.save(out)
    curve = out.with_name(out.stem + ".curve.csv")
    with curve.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss", "accuracy"])
        w.writerows((s, repr(l), repr(a)) for s, l, a in res.curve)
    summary = {"checkpoint": str(out), "sha256": digest, "steps": cfg.pretrain.steps, "windows": len(data),
               "model": model_name(cfg.to_dict()["gnn"]), "seconds": round(time.perf_counter() - t0, 2)}
    if res.curve:
        summary.update(initial_loss=res.curve[0][1], final_loss=res.curve[-1][1])
    _emit(summary)
    return EXIT_OK


# -- finetune ----------------------------------------------------------------

def _check_architecture(ckpt: Checkpoint, gnn: str | None, edge_weights: str | None) -> None:
    g = ckpt.config["run"]["gnn"]
    if gnn is not None and gnn != g["architecture"]:
        raise UsageError(f"--gnn {gnn} but the checkpoint was pre-trained with {g['architecture']!r}")
    if edge_weights is not None and (edge_weights == "on") != bool(g["edge_weights"]):
        raise UsageError(f"--edge-weights {edge_weights} disagrees with the checkpoint")


def _finetune_overrides(args) -> dict | None:
    ft = {k: v for k, v in (("epochs", args.epochs), ("lr", args.lr), ("batch_size", args.batch_size)) if v is not None}
    return ft or None


def cmd_finetune(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    _check_architecture(ckpt, args.gnn, args.edge_weights)
    task = read_task(args.task)
    seed = _seed(args.seed, ckpt.config["run"]["seeds"]["seed"])
    ft = _finetune_overrides(args)

    def progress(fold, metric):
        log.info("fold %d %s %.4f", fold, task.metric, metric)

    run = crossval(ckpt, task, args.head, args.adjuster, seed, ft, progress)
    doc = {
        "model": run.gnn,
        "head": run.head,
        "adjuster": run.adjuster,
        "task": task.name,
        "metric": task.metric,
        "seed": seed,
        "checkpoint_hash": ckpt.digest(),
        "mean": run.mean,
        "folds": [
            {"fold": f.fold, "metric": f.metric, "undersampled": f.undersampled, "train": len(f.train_keys), "test": len(f.test_keys)}
            for f in run.folds
        ],
    }
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(doc, indent=1, sort_keys=True))
    _emit(doc)
    return EXIT_OK


# -- grid --------------------------------------------------------------------

def cmd_grid(args) -> int:
    checkpoints = {}
    for path in args.checkpoints:
        ck = Checkpoint.load(path)
        name = model_name(ck.config["run"]["gnn"])
        if name in checkpoints:
            raise UsageError(f"two checkpoints for model {name!r}")
        checkpoints[name] = ck
    tasks = [read_task(t) for t in args.tasks]
    seed = _seed(args.seed)
    out = Path(args.out)
    t0 = time.perf_counter()
    cells = run_grid(checkpoints, tasks, tuple(args.heads), tuple(args.adjusters), seed, _finetune_overrides(args), out, args.jobs)
    doc = {"cells": [c.to_json() for c in cells], "seconds": round(time.perf_counter() - t0, 2)}
    (out / "grid.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    _emit({"cells": len(cells), "flagged": sum(c.flagged for c in cells), "out": str(out)})
    return EXIT_OK


# -- gradcheck ---------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    names = None if args.all or not args.layer else args.layer
    if names:
        unknown = [n for n in names if n not in CASES]
        if unknown:
            raise UsageError(f"unknown layers {unknown}; choose from {sorted(CASES)}")
    res = run_suite(_seed(args.seed), names, args.tol, progress=lambda r: log.info("%s", r.summary()))
    _emit({"passed": res.passed, "seconds": round(res.seconds, 2),
           "layers": {r.layer: {"max_rel_err": r.max_rel_err, "passed": r.passed} for r in res.reports}})
    return EXIT_OK if res.passed else EXIT_GRADCHECK


# -- report ------------------------------------------------------------------

def cmd_report(args) -> int:
    cells = load_cells(args.inp)
    md, csv_path = write_report(cells, args.out)
    _emit({"cells": len(cells), "markdown": str(md), "csv": str(csv_path)})
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _ft_flags(p) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="graph-bendr", description=__doc__.splitlines()[0])
    ap.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic corpus or task")
    s.add_argument("kind", choices=["pretrain", "task"])
    s.add_argument("--seed", type=int)
    s.add_argument("--montage")
    s.add_argument("--sfreq", type=float, default=256.0)
    s.add_argument("--duration", type=float, help="recording (pretrain) or window (task) length in seconds")
    s.add_argument("--recordings", type=int, default=32)
    s.add_argument("--pair", default="C3,C4")
    s.add_argument("--windows", type=int, default=200)
    s.add_argument("--folds", type=int, default=4)
    s.add_argument("--metric", choices=["accuracy", "auroc"], help="default: accuracy when balanced, else auroc")
    s.add_argument("--balance", type=float, default=0.5, help="fraction of positive windows")
    s.add_argument("--amplitude", type=float, default=TaskSpec.coupling_amplitude)
    s.add_argument("--name", default="planted")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    g = sub.add_parser("graph", help="export the edge-weight matrix")
    g.add_argument("--montage")
    g.add_argument("--out", required=True, help=".csv or .json")
    g.set_defaults(func=cmd_graph)

    p = sub.add_parser("pretrain", help="masked contrastive pre-training")
    p.add_argument("--config")
    p.add_argument("--montage")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    f = sub.add_parser("finetune", help="cross-validated fine-tuning of one checkpoint")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--task", required=True)
    f.add_argument("--gnn", choices=["gcn", "gat", "sage", "none"], help="must match the checkpoint")
    f.add_argument("--edge-weights", choices=["on", "off"], help="must match the checkpoint")
    f.add_argument("--head", choices=["bendr", "linear"], default="bendr")
    f.add_argument("--adjuster", choices=["linear", "padding"], default="linear")
    f.add_argument("--seed", type=int)
    _ft_flags(f)
    f.add_argument("--out")
    f.set_defaults(func=cmd_finetune)

    r = sub.add_parser("grid", help="every model x head x adjuster x task cell")
    r.add_argument("--checkpoints", nargs="+", required=True)
    r.add_argument("--tasks", nargs="+", required=True)
    r.add_argument("--heads", nargs="+", choices=["bendr", "linear"], default=["bendr", "linear"])
    r.add_argument("--adjusters", nargs="+", choices=["linear", "padding"], default=["linear"])
    r.add_argument("--seed", type=int)
    r.add_argument("--jobs", type=int, default=1)
    _ft_flags(r)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_grid)

    c = sub.add_parser("gradcheck", help="finite-difference check of every trainable layer")
    c.add_argument("--all", action="store_true")
    c.add_argument("--layer", nargs="+")
    c.add_argument("--seed", type=int)
    c.add_argument("--tol", type=float, default=1e-4)
    c.set_defaults(func=cmd_gradcheck)

    o = sub.add_parser("report", help="Markdown and CSV tables from grid results")
    o.add_argument("--in", dest="inp", required=True)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_report)
    return ap


_DURATION = {"pretrain": 60.0, "task": TaskSpec.window_s}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "synth" and args.duration is None:
        args.duration = _DURATION[args.kind]
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValidationError, PipelineError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
