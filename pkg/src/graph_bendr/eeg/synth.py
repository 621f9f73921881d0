"""Synthetic EEG with geometry-dependent background mixing and planted channel coupling.

Every generator is a pure function of its seed and parameters: each recording or
window draws from its own child of ``SeedSequence(seed)``.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

from ..graph import distance_matrix
from .types import EegWindow, Montage, Recording, TaskDataset, ValidationError


@dataclass(frozen=True)
class BackgroundParams:
    mix_strength: float = 0.5
    mix_length: float = 0.5  # radians of scalp angle
    noise_std: float = 0.5
    components: int = 2
    envelope_s: float = 0.25


@dataclass(frozen=True)
class TaskSpec:
    num_windows: int = 200
    window_s: float = 2.0
    sfreq: float = 256.0
    coupled_pair: tuple[str, str] = ("C3", "C4")
    class_balance: float = 0.5
    metric: str | None = None  # None: accuracy when balanced, AUROC otherwise
    folds: int = 4
    lag_s: float = 0.008
    coupling_amplitude: float = 2.0
    band: tuple[float, float] = (8.0, 12.0)
    name: str = "planted"


def metric_for(balanced: bool) -> str:
    return "accuracy" if balanced else "auroc"


def _stream(seed: int, tag: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(tag.encode())])


def _envelope(rng, T: int, sfreq: float, width_s: float) -> np.ndarray:
    e = gaussian_filter1d(rng.standard_normal(T), sigma=max(1.0, width_s * sfreq), mode="wrap")
    e /= e.std() + 1e-12
    return 1.0 + 0.4 * e


def _oscillation(rng, T: int, sfreq: float, freq: float, width_s: float) -> np.ndarray:
    t = np.arange(T) / sfreq
    return _envelope(rng, T, sfreq, width_s) * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))


def mixing_matrix(montage: Montage, params: BackgroundParams = BackgroundParams()) -> np.ndarray:
    D = distance_matrix(montage)
    M = params.mix_strength * np.exp(-D / params.mix_length)
    np.fill_diagonal(M, 1.0)
    return M


def _background(rng, montage: Montage, T: int, sfreq: float, params: BackgroundParams) -> np.ndarray:
    C = len(montage)
    # distinct per-channel base frequencies spread over 1-40 Hz
    grid = np.linspace(2.0, 38.0, C)
    spacing = grid[1] - grid[0]
    freqs = rng.permutation(grid) + rng.uniform(-0.25, 0.25, C) * spacing
    S = np.zeros((C, T))
    for c in range(C):
        S[c] += _oscillation(rng, T, sfreq, freqs[c], params.envelope_s)
        for _ in range(params.components - 1):
            S[c] += 0.5 * _oscillation(rng, T, sfreq, rng.uniform(1.0, 40.0), params.envelope_s)
    X = mixing_matrix(montage, params) @ S + params.noise_std * rng.standard_normal((C, T))
    return X


def _unit_variance(X: np.ndarray) -> np.ndarray:
    return X / (X.std(axis=1, keepdims=True) + 1e-12)


def generate_pretrain_corpus(
    seed: int,
    num_recordings: int,
    montage: Montage,
    duration_s: float,
    sfreq: float,
    params: BackgroundParams = BackgroundParams(),
) -> list[Recording]:
    if num_recordings < 1:
        raise ValidationError("num_recordings must be >= 1")
    T = int(math.floor(duration_s * sfreq))
    children = _stream(seed, "pretrain").spawn(num_recordings)
    out = []
    for i, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        X = _unit_variance(_background(rng, montage, T, sfreq, params))
        out.append(Recording(tuple(montage.labels), float(sfreq), X.astype(np.float32), f"pre{seed}-{i:04d}"))
    return out


def stratified_folds(labels, folds: int) -> np.ndarray:
    """Round-robin fold assignment within each class, in dataset order."""
    labels = np.asarray(labels)
    assignment = np.empty(len(labels), dtype=np.int64)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        assignment[idx] = np.arange(len(idx)) % folds
    return assignment


def lagged_correlation(x: np.ndarray, y: np.ndarray, lag: int) -> float:
    """Pearson correlation between x[t] and y[t + lag]."""
    if lag > 0:
        x, y = x[:-lag], y[lag:]
    return float(np.corrcoef(x, y)[0, 1])


def generate_task(
    seed: int,
    montage: Montage,
    spec: TaskSpec,
    params: BackgroundParams = BackgroundParams(),
) -> TaskDataset:
    """Binary task whose label lives only in the coupling between ``spec.coupled_pair``.

    Positive windows share one oscillation between the pair at a fixed lag; negative
    windows give the second channel an independent oscillation from the same band.
    """
    a_label, b_label = spec.coupled_pair
    a, b = montage.index(a_label), montage.index(b_label)
    if a == b:
        raise ValidationError("coupled pair must name two different channels")
    if not 0 < spec.class_balance < 1:
        raise ValidationError("class_balance must lie in (0, 1)")
    n_pos = int(round(spec.num_windows * spec.class_balance))
    n_neg = spec.num_windows - n_pos
    if min(n_pos, n_neg) < spec.folds:
        raise ValidationError("each class needs at least one window per fold")

    T = int(math.floor(spec.window_s * spec.sfreq))
    lag = max(1, int(round(spec.lag_s * spec.sfreq)))
    order_rng = np.random.default_rng(_stream(seed, "task-order"))
    labels = order_rng.permutation(np.r_[np.ones(n_pos, dtype=np.int64), np.zeros(n_neg, dtype=np.int64)])

    windows = []
    for i, (ss, y) in enumerate(zip(_stream(seed, "task").spawn(spec.num_windows), labels)):
        rng = np.random.default_rng(ss)
        X = _unit_variance(_background(rng, montage, T, spec.sfreq, params))
        f = rng.uniform(*spec.band)
        s = _oscillation(rng, T + lag, spec.sfreq, f, params.envelope_s)
        g = rng.uniform(*spec.band)
        s_other = _oscillation(rng, T + lag, spec.sfreq, g, params.envelope_s)
        X[a] += spec.coupling_amplitude * s[lag:]
        X[b] += spec.coupling_amplitude * (s[:T] if y == 1 else s_other[:T])
        X = (X - X.mean(axis=1, keepdims=True)) / (X.std(axis=1, keepdims=True) + 1e-12)
        windows.append(EegWindow(X.astype(np.float32), float(spec.sfreq), int(y), (f"task{seed}-{i:04d}", 0)))

    return TaskDataset(
        windows=windows,
        fold_assignment=stratified_folds(labels, spec.folds),
        folds=spec.folds,
        metric=spec.metric or metric_for(n_pos == n_neg),
        balanced=n_pos == n_neg,
        name=spec.name,
        channel_labels=tuple(montage.labels),
    )
