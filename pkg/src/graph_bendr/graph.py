"""Fully connected channel graph weighted by reciprocal geodesic distance on the scalp sphere."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .eeg.types import SPHERE_TOL, Montage, ValidationError

DISTANCE_EPSILON = 1e-9


def geodesic_distance(a, b, r: float = 1.0) -> float:
    """Central angle (radians) between two points on a sphere of radius ``r``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    for name, p in (("a", a), ("b", b)):
        if abs(float(np.linalg.norm(p)) - r) > SPHERE_TOL * r:
            raise ValidationError(f"point {name}={p.tolist()} is not on the sphere of radius {r}")
    cos = float(np.dot(a, b)) / (r * r)
    return float(np.arccos(min(1.0, max(-1.0, cos))))


def distance_matrix(montage: Montage) -> np.ndarray:
    xyz = montage.coords
    cos = (xyz @ xyz.T) / (montage.radius**2)
    D = np.arccos(np.clip(cos, -1.0, 1.0))
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    return D


@dataclass(frozen=True, eq=False)
class EdgeWeightMatrix:
    weights: np.ndarray
    montage_name: str
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValidationError("edge weights must be square")
        if not np.array_equal(w, w.T):
            raise ValidationError("edge weights must be exactly symmetric")
        if np.any(np.diag(w) != 0):
            raise ValidationError("edge weights must have a zero diagonal")
        off = w[~np.eye(len(w), dtype=bool)]
        if not (np.all(np.isfinite(off)) and np.all(off > 0)):
            raise ValidationError("off-diagonal edge weights must be finite and positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def permuted(self, perm) -> "EdgeWeightMatrix":
        """P W P^T: same weight distribution with the geometry scrambled."""
        perm = np.asarray(perm)
        return EdgeWeightMatrix(self.weights[np.ix_(perm, perm)], self.montage_name + ":permuted", self.labels)

    def to_csv(self) -> str:
        buf = io.StringIO()
        np.savetxt(buf, self.weights, fmt="%.17g", delimiter=",")
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"labels": list(self.labels), "weights": self.weights.tolist()})


def build_edge_weights(montage: Montage) -> EdgeWeightMatrix:
    D = distance_matrix(montage)
    C = len(montage)
    iu = np.triu_indices(C, k=1)
    close = np.flatnonzero(D[iu] <= DISTANCE_EPSILON)
    if close.size:
        i, j = iu[0][close[0]], iu[1][close[0]]
        raise ValidationError(
            f"electrodes {montage.labels[i]!r} and {montage.labels[j]!r} coincide "
            f"(distance {D[i, j]:.3g} rad)"
        )
    W = np.zeros_like(D)
    off = ~np.eye(C, dtype=bool)
    W[off] = 1.0 / D[off]
    return EdgeWeightMatrix(W, montage.name, tuple(montage.labels))
