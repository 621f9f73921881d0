from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SPHERE_TOL = 1e-6


class ValidationError(ValueError):
    """Raised when EEG data or a montage violates its invariants."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Electrode:
    label: str
    x: float
    y: float
    z: float

    @property
    def xyz(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


@dataclass(frozen=True)
class Montage:
    """Named electrodes lying on a sphere of the given radius."""

    name: str
    electrodes: tuple[Electrode, ...]
    radius: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "electrodes", tuple(self.electrodes))
        if len(self.electrodes) < 2:
            raise ValidationError("a montage needs at least 2 electrodes")
        labels = [e.label for e in self.electrodes]
        dupes = sorted({l for l in labels if labels.count(l) > 1})
        if dupes:
            raise ValidationError(f"duplicate electrode labels: {dupes}")
        if not self.radius > 0:
            raise ValidationError("radius must be positive")
        for e in self.electrodes:
            norm = float(np.linalg.norm(e.xyz))
            if abs(norm - self.radius) > SPHERE_TOL * self.radius:
                raise ValidationError(
                    f"electrode {e.label} is off the sphere: |p|={norm!r}, r={self.radius!r}"
                )

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.electrodes]

    @property
    def coords(self) -> np.ndarray:
        return np.stack([e.xyz for e in self.electrodes])

    def __len__(self) -> int:
        return len(self.electrodes)

    def index(self, label: str) -> int:
        key = label.lower()
        for i, e in enumerate(self.electrodes):
            if e.label.lower() == key:
                return i
        raise ValidationError(f"electrode {label!r} not in montage {self.name!r}")


@dataclass(frozen=True, eq=False)
class Recording:
    channel_labels: tuple[str, ...]
    sfreq: float
    samples: np.ndarray
    subject_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "channel_labels", tuple(self.channel_labels))
        samples = np.asarray(self.samples)
        if samples.ndim != 2:
            raise ValidationError(f"samples must be 2-D (channels x time), got shape {samples.shape}")
        if samples.shape[0] != len(self.channel_labels):
            raise ValidationError(
                f"{samples.shape[0]} sample rows but {len(self.channel_labels)} channel labels"
            )
        if not self.sfreq > 0:
            raise ValidationError("sfreq must be positive")
        if not np.all(np.isfinite(samples)):
            raise ValidationError("recording contains non-finite samples")
        object.__setattr__(self, "samples", _frozen(samples))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True, eq=False)
class EegWindow:
    samples: np.ndarray
    sfreq: float
    label: Optional[int] = None
    source: tuple[str, int] = ("", 0)

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 2:
            raise ValidationError("window samples must be 2-D")
        if not np.all(np.isfinite(samples)):
            raise ValidationError("window contains non-finite samples")
        object.__setattr__(self, "samples", _frozen(samples))
        object.__setattr__(self, "source", (str(self.source[0]), int(self.source[1])))

    @property
    def key(self) -> str:
        """Stable identity used to route seeds and audit splits."""
        return f"{self.source[0]}@{self.source[1]}"


METRICS = ("accuracy", "auroc")


@dataclass(frozen=True, eq=False)
class TaskDataset:
    windows: tuple[EegWindow, ...]
    fold_assignment: tuple[int, ...]
    folds: int
    metric: str
    balanced: bool
    num_classes: int = 2
    name: str = "task"
    channel_labels: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "windows", tuple(self.windows))
        object.__setattr__(self, "fold_assignment", tuple(int(f) for f in self.fold_assignment))
        object.__setattr__(self, "channel_labels", tuple(self.channel_labels))
        if self.metric not in METRICS:
            raise ValidationError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if len(self.fold_assignment) != len(self.windows):
            raise ValidationError("fold assignment length does not match window count")
        if self.folds < 1:
            raise ValidationError("folds must be >= 1")
        shapes = {w.samples.shape for w in self.windows}
        if len(shapes) > 1:
            raise ValidationError(f"windows have heterogeneous shapes: {sorted(shapes)}")
        for w in self.windows:
            if w.label is None or not 0 <= w.label < self.num_classes:
                raise ValidationError(f"window {w.key} has invalid label {w.label!r}")
        labels = self.labels
        for f in range(self.folds):
            in_fold = labels[np.asarray(self.fold_assignment) == f]
            if len(set(in_fold.tolist())) < self.num_classes:
                raise ValidationError(f"fold {f} is empty or lacks a class")
        if any(not 0 <= f < self.folds for f in self.fold_assignment):
            raise ValidationError("fold index out of range")

    @property
    def labels(self) -> np.ndarray:
        return np.array([w.label for w in self.windows], dtype=np.int64)

    @property
    def shape(self) -> tuple[int, int]:
        return self.windows[0].samples.shape

    def stack(self, indices=None) -> np.ndarray:
        idx = range(len(self.windows)) if indices is None else indices
        return np.stack([self.windows[i].samples for i in idx])

    def fold_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.fold_assignment) == fold)
