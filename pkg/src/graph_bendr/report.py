"""Markdown and CSV result tables from grid cell files."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .pipelines import DISPLAY, MODELS, Cell, flag_cells

HEAD_LABEL = {"bendr": "BENDR", "linear": "Linear"}


def load_cells(path) -> list[Cell]:
    """Every ``cell_*.json`` under ``path`` (or the file itself)."""
    p = Path(path)
    files = [p] if p.is_file() else sorted(p.rglob("cell_*.json"))
    if not files:
        raise FileNotFoundError(f"no cell results under {p}")
    cells = [Cell(**json.loads(f.read_text())) for f in files]
    return flag_cells(cells)


def _order(cells: list[Cell]):
    models = [m for m in MODELS if any(c.model == m for c in cells)]
    heads = [h for h in HEAD_LABEL if any(c.head == h for c in cells)]
    adjusters = sorted({c.adjuster for c in cells})
    tasks = sorted({c.task for c in cells})
    return models, heads, adjusters, tasks


def markdown_table(cells: list[Cell]) -> str:
    """One row per model, sub-rows per head (and adjuster when several), one column per task.

    Cells above the matching baseline are bold.
    """
    models, heads, adjusters, tasks = _order(cells)
    index = {(c.model, c.head, c.adjuster, c.task): c for c in cells}
    lines = ["| Model | Head | " + " | ".join(tasks) + " |", "|---|---|" + "---|" * len(tasks)]
    for m in models:
        first = True
        for h in heads:
            for a in adjusters:
                row = [index.get((m, h, a, t)) for t in tasks]
                if all(c is None for c in row):
                    continue
                vals = ["" if c is None else (f"**{c.mean:.3f}**" if c.flagged else f"{c.mean:.3f}") for c in row]
                label = HEAD_LABEL[h] if len(adjusters) == 1 else f"{HEAD_LABEL[h]} ({a})"
                lines.append(f"| {DISPLAY[m] if first else ''} | {label} | " + " | ".join(vals) + " |")
                first = False
    return "\n".join(lines) + "\n"


def csv_table(cells: list[Cell]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "head", "adjuster", "task", "mean", "per_fold", "flagged", "seed", "checkpoint_hash"])
    models, heads, adjusters, tasks = _order(cells)
    rank = {m: i for i, m in enumerate(models)}
    for c in sorted(cells, key=lambda c: (rank[c.model], c.head, c.adjuster, c.task)):
        w.writerow([c.model, c.head, c.adjuster, c.task, f"{c.mean:.6f}", ";".join(f"{v:.6f}" for v in c.per_fold), int(c.flagged), c.seed, c.checkpoint_hash])
    return buf.getvalue()


def write_report(cells: list[Cell], out) -> tuple[Path, Path]:
    md = Path(out)
    md.parent.mkdir(parents=True, exist_ok=True)
    header = "# Cross-validated results\n\nBold: above the baseline with the same head, adjuster and task.\n\n"
    md.write_text(header + markdown_table(cells))
    csv_path = md.with_suffix(".csv")
    csv_path.write_text(csv_table(cells))
    return md, csv_path
