"""Pre-training, fine-tuning, cross-validation and the evaluation grid."""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .adjusters import select_adjuster
from .bendr import contrastive_loss, sample_mask
from .config import RunConfig, from_dict
from .diff import Adam, Checkpoint, RngStreams
from .diff.checkpoint import load_arrays
from .eeg.montage import montage_from_dict, montage_to_dict
from .eeg.types import Montage, TaskDataset
from .metrics import compute_metric
from .model import GraphBendr, edge_permutation

log = logging.getLogger(__name__)

torch.use_deterministic_algorithms(True)


class PipelineError(RuntimeError):
    pass


# -- pre-training ------------------------------------------------------------

@dataclass
class PretrainResult:
    checkpoint: Checkpoint
    curve: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def losses(self) -> np.ndarray:
        return np.array([c[1] for c in self.curve])

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([c[2] for c in self.curve])


def stack_windows(windows) -> np.ndarray:
    shapes = {w.samples.shape for w in windows}
    if len(shapes) != 1:
        raise PipelineError(f"pre-training windows must share one shape, got {sorted(shapes)}")
    return np.stack([w.samples for w in windows]).astype(np.float32)


def _streams(cfg: RunConfig) -> RngStreams:
    return RngStreams(cfg.seeds.seed, cfg.seeds.overrides())


def checkpoint_config(cfg: RunConfig, montage: Montage, n: int) -> dict:
    return {
        "run": cfg.to_dict(),
        "n": n,
        "channels": len(montage),
        "montage": montage_to_dict(montage),
        "edge_permutation": edge_permutation(cfg, len(montage)),
    }


def pretrain_step(model: GraphBendr, x: torch.Tensor, cfg: RunConfig, streams: RngStreams) -> tuple[torch.Tensor, float]:
    """One masked-reconstruction contrastive pass over a batch; returns (mean loss, mean accuracy)."""
    mask_rng = streams.numpy("mask")
    z = model.features(x)
    T = z.shape[1]
    masks = np.stack([sample_mask(T, cfg.masking.p_start, cfg.masking.span, mask_rng) for _ in range(len(x))])
    rec = model.transformer(z, torch.from_numpy(masks), streams.torch("dropout"))
    losses, accs = [], []
    for b in range(len(x)):
        K = cfg.contrastive.negatives
        available = int(masks[b].sum()) - 1
        if K > available:
            warnings.warn(f"only {available + 1} masked steps; clamping negatives from {K} to {available}", stacklevel=2)
            K = available
        loss, acc = contrastive_loss(rec[b], z[b], masks[b], K, cfg.contrastive.temperature, mask_rng)
        losses.append(loss)
        accs.append(acc)
    return torch.stack(losses).mean(), float(np.mean(accs))


def pretrain(windows, cfg: RunConfig, montage: Montage, progress=None) -> PretrainResult:
    """Masked contrastive pre-training; deterministic given the config seeds."""
    data = windows if isinstance(windows, np.ndarray) else stack_windows(windows)
    if data.ndim != 3 or data.shape[1] != len(montage):
        raise PipelineError(f"expected windows shaped (N, {len(montage)}, n), got {data.shape}")
    N, C, n = data.shape
    streams = _streams(cfg)
    model = GraphBendr(cfg, montage, n)
    if model.T < 2:
        raise PipelineError(f"window of {n} samples yields only {model.T} encoder steps")
    model.reset_parameters(streams.numpy("init"))
    model.train()
    opt = Adam(model.trainable(), cfg.optimizer.lr, (cfg.optimizer.beta1, cfg.optimizer.beta2), cfg.optimizer.eps)
    sampling = streams.numpy("sampling")
    B = min(cfg.pretrain.batch_size, N)
    curve = []
    for step in range(cfg.pretrain.steps):
        idx = np.sort(sampling.choice(N, size=B, replace=False))
        loss, acc = pretrain_step(model, torch.from_numpy(data[idx]), cfg, streams)
        loss.backward()
        opt.step()
        curve.append((step, float(loss.detach()), acc))
        if progress is not None:
            progress(step, float(loss.detach()), acc)
    ckpt = Checkpoint(
        config=checkpoint_config(cfg, montage, n),
        parameters=model.pretrained_state(),
        rng=streams.state(),
        step=cfg.pretrain.steps,
        meta={"kind": "pretrain"},
    )
    return PretrainResult(ckpt, curve)


def model_from_checkpoint(ckpt: Checkpoint, overrides: dict | None = None) -> tuple[GraphBendr, RunConfig, Montage]:
    run = ckpt.config["run"]
    if overrides:
        run = json.loads(json.dumps(run))
        for k, v in overrides.items():
            if isinstance(v, dict):
                run[k].update(v)
            else:
                run[k] = v
    cfg = from_dict(run)
    montage = montage_from_dict(ckpt.config["montage"])
    model = GraphBendr(cfg, montage, int(ckpt.config["n"]))
    load_arrays(model, ckpt.parameters)
    return model, cfg, montage


# -- class balance & splits --------------------------------------------------

def undersample(labels, rng: np.random.Generator) -> np.ndarray:
    """Indices keeping every sample of the minority class and an equal-size random subset of each other class."""
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2 or counts.min() < 1:
        raise PipelineError("undersampling needs at least one sample of every class")
    k = counts.min()
    keep = []
    for cls in classes:
        idx = np.flatnonzero(labels == cls)
        keep.append(idx if len(idx) == k else np.sort(rng.choice(idx, size=k, replace=False)))
    return np.sort(np.concatenate(keep))


def canonical_order(dataset: TaskDataset, indices) -> np.ndarray:
    keys = [dataset.windows[i].key for i in indices]
    return np.asarray(indices)[np.argsort(keys, kind="stable")]


@dataclass
class FoldResult:
    fold: int
    metric: float
    train_keys: list[str]
    test_keys: list[str]
    undersampled: bool


def _batches(n: int, batch: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for s in range(0, n, batch):
        yield perm[s : s + batch]


def finetune_fold(
    ckpt: Checkpoint,
    dataset: TaskDataset,
    fold: int,
    head_kind: str,
    adjuster_kind: str,
    seed: int,
    finetune: dict | None = None,
) -> FoldResult:
    """Train on every fold but ``fold`` (undersampled when imbalanced) and score ``fold``."""
    model, cfg, montage = model_from_checkpoint(ckpt, {"head": {"kind": head_kind}, "adjuster": {"kind": adjuster_kind}, **({"finetune": finetune} if finetune else {})})
    if dataset.channel_labels and tuple(dataset.channel_labels) != tuple(montage.labels):
        raise PipelineError("task channels do not match the checkpoint montage")
    if dataset.shape[0] != model.channels:
        raise PipelineError("task channel count differs from the checkpoint")
    streams = RngStreams(seed).child(f"fold{fold}")
    adj = select_adjuster(dataset.shape[1], model.n, adjuster_kind)
    model.attach_finetuning(adj, head_kind, streams.numpy("init"))

    folds = np.asarray(dataset.fold_assignment)
    train = canonical_order(dataset, np.flatnonzero(folds != fold))
    test = canonical_order(dataset, np.flatnonzero(folds == fold))
    labels = dataset.labels
    undersampled = not dataset.balanced
    if undersampled:
        train = train[undersample(labels[train], streams.numpy("sampling"))]

    X = torch.from_numpy(dataset.stack(train).astype(np.float32))
    y = torch.from_numpy(labels[train])
    ft = cfg.finetune
    opt = Adam(model.trainable(), ft.lr, (cfg.optimizer.beta1, cfg.optimizer.beta2), cfg.optimizer.eps)
    shuffle = streams.numpy("sampling")
    gen = streams.torch("dropout")
    model.train()
    for _ in range(ft.epochs):
        for idx in _batches(len(train), ft.batch_size, shuffle):
            loss = F.cross_entropy(model.logits(X[idx], gen), y[idx])
            loss.backward()
            opt.step()

    model.eval()
    with torch.no_grad():
        logits = model.logits(torch.from_numpy(dataset.stack(test).astype(np.float32))).double()
    margin = (logits[:, 1] - logits[:, 0]).numpy()
    metric = compute_metric(dataset.metric, margin, labels[test])
    return FoldResult(
        fold=fold,
        metric=metric,
        train_keys=[dataset.windows[i].key for i in train],
        test_keys=[dataset.windows[i].key for i in test],
        undersampled=undersampled,
    )


@dataclass
class FinetuneRun:
    head: str
    adjuster: str
    gnn: str
    seed: int
    per_fold: list[float]
    folds: list[FoldResult] = field(default_factory=list, repr=False)

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_fold))


def crossval(ckpt: Checkpoint, dataset: TaskDataset, head_kind: str, adjuster_kind: str, seed: int, finetune: dict | None = None, progress=None) -> FinetuneRun:
    if dataset.folds < 2:
        raise PipelineError("cross-validation needs at least 2 folds")
    results = []
    for fold in range(dataset.folds):
        r = finetune_fold(ckpt, dataset, fold, head_kind, adjuster_kind, seed, finetune)
        if progress is not None:
            progress(fold, r.metric)
        results.append(r)
    return FinetuneRun(
        head=head_kind,
        adjuster=adjuster_kind,
        gnn=model_name(ckpt.config["run"]["gnn"]),
        seed=seed,
        per_fold=[r.metric for r in results],
        folds=results,
    )


# -- grid --------------------------------------------------------------------

MODELS = {
    "baseline": {"architecture": "none", "edge_weights": False},
    "sage": {"architecture": "sage", "edge_weights": False},
    "gcn": {"architecture": "gcn", "edge_weights": False},
    "gcn_e": {"architecture": "gcn", "edge_weights": True},
    "gat": {"architecture": "gat", "edge_weights": False},
    "gat_e": {"architecture": "gat", "edge_weights": True},
}
DISPLAY = {
    "baseline": "Baseline",
    "sage": "GraphSAGE",
    "gcn": "GCN",
    "gcn_e": "GCN (w/ e.)",
    "gat": "GAT",
    "gat_e": "GAT (w/ e.)",
}


def model_name(gnn_section: dict) -> str:
    for name, spec in MODELS.items():
        if gnn_section["architecture"] == spec["architecture"] and bool(gnn_section["edge_weights"]) == spec["edge_weights"]:
            return name
    raise PipelineError(f"unrecognised gnn section {gnn_section}")


@dataclass
class Cell:
    model: str
    head: str
    adjuster: str
    task: str
    per_fold: list[float]
    mean: float
    seed: int
    checkpoint_hash: str
    flagged: bool = False

    def to_json(self) -> dict:
        return asdict(self)


def dataset_id(dataset: TaskDataset) -> str:
    h = hashlib.sha256()
    h.update(json.dumps([dataset.name, dataset.metric, dataset.folds, list(dataset.fold_assignment)]).encode())
    for w in dataset.windows:
        h.update(w.key.encode())
        h.update(np.int64(w.label).tobytes())
        h.update(np.ascontiguousarray(w.samples, dtype="<f4").tobytes())
    return h.hexdigest()


def cell_key(ckpt_hash: str, ds_id: str, head: str, adjuster: str, seed: int, finetune: dict | None) -> str:
    blob = json.dumps([ckpt_hash, ds_id, head, adjuster, seed, finetune], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def flag_cells(cells: list[Cell]) -> list[Cell]:
    """Mark cells strictly above the baseline cell with the same head, adjuster and task."""
    base = {(c.head, c.adjuster, c.task): c.mean for c in cells if c.model == "baseline"}
    for c in cells:
        ref = base.get((c.head, c.adjuster, c.task))
        c.flagged = c.model != "baseline" and ref is not None and c.mean > ref
    return cells


def run_cell(ckpt: Checkpoint, dataset: TaskDataset, head: str, adjuster: str, seed: int, finetune: dict | None = None, out_dir=None) -> Cell:
    ckpt_hash = ckpt.digest()
    key = cell_key(ckpt_hash, dataset_id(dataset), head, adjuster, seed, finetune)
    path = Path(out_dir) / f"cell_{key}.json" if out_dir is not None else None
    if path is not None and path.exists():
        return Cell(**json.loads(path.read_text()))
    run = crossval(ckpt, dataset, head, adjuster, seed, finetune)
    cell = Cell(run.gnn, head, adjuster, dataset.name, run.per_fold, run.mean, seed, ckpt_hash)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(cell.to_json(), indent=1, sort_keys=True))
        tmp.replace(path)
    return cell


def _cell_job(args):
    ckpt_bytes, dataset, head, adjuster, seed, finetune, out_dir = args
    return run_cell(Checkpoint.from_bytes(ckpt_bytes), dataset, head, adjuster, seed, finetune, out_dir)


def run_grid(
    checkpoints: dict[str, Checkpoint],
    tasks: list[TaskDataset],
    heads=("bendr", "linear"),
    adjusters=("linear", "padding"),
    seed: int = 0,
    finetune: dict | None = None,
    out_dir=None,
    jobs: int = 1,
) -> list[Cell]:
    if not checkpoints or not tasks:
        raise PipelineError("grid needs at least one model and one task")
    for name, ck in checkpoints.items():
        actual = model_name(ck.config["run"]["gnn"])
        if actual != name:
            raise PipelineError(f"checkpoint for {name!r} was pre-trained as {actual!r}")
    jobs_list = [
        (ck, ds, h, a)
        for name, ck in checkpoints.items()
        for ds in tasks
        for h in heads
        for a in adjusters
    ]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        payload = [(ck.to_bytes(), ds, h, a, seed, finetune, out_dir) for ck, ds, h, a in jobs_list]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_cell_job, payload))
    else:
        cells = [run_cell(ck, ds, h, a, seed, finetune, out_dir) for ck, ds, h, a in jobs_list]
    return flag_cells(cells)
