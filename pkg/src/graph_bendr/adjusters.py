"""Sequence-length adjusters mapping per-channel length m onto the pre-training length n."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

KINDS = ("linear", "padding", "identity")


class AdjusterError(ValueError):
    pass


@dataclass(frozen=True)
class AdjusterConfig:
    kind: str
    m: int
    n: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AdjusterError(f"adjuster kind must be one of {KINDS}")
        if self.n <= 0 or self.m <= 0:
            raise AdjusterError("sequence lengths must be positive")
        if self.kind == "identity" and self.m != self.n:
            raise AdjusterError("identity adjuster requires m == n")
        if self.kind == "padding" and self.m > self.n:
            raise AdjusterError(f"padding cannot shorten a sequence (m={self.m} > n={self.n})")


def select_adjuster(m: int, n: int, kind: str) -> AdjusterConfig:
    """Identity whenever m == n, otherwise the requested kind."""
    if m == n:
        return AdjusterConfig("identity", m, n)
    return AdjusterConfig(kind, m, n)


def interpolation_stencil(m: int, n: int) -> np.ndarray:
    """m x n matrix whose columns linearly interpolate m samples onto n points.

    Every column sums to one, so constant rows map to the same constant.
    """
    M = np.zeros((m, n))
    if m == 1:
        M[0, :] = 1.0
        return M
    pos = np.arange(n) * (m - 1) / max(n - 1, 1) if n > 1 else np.zeros(1)
    lo = np.minimum(np.floor(pos).astype(int), m - 2)
    frac = pos - lo
    cols = np.arange(n)
    M[lo, cols] = 1.0 - frac
    M[lo + 1, cols] += frac
    return M


def adjust_linear(X: torch.Tensor, M: torch.Tensor) -> torch.Tensor:
    if X.shape[-1] != M.shape[0]:
        raise AdjusterError(f"input length {X.shape[-1]} does not match map rows {M.shape[0]}")
    return X @ M


def adjust_padding(X, n: int):
    """Repeat each channel's last sample until the sequence reaches n."""
    m = X.shape[-1]
    if m < 1:
        raise AdjusterError("cannot pad an empty sequence")
    if m > n:
        raise AdjusterError(f"padding cannot shorten a sequence (m={m} > n={n})")
    if m == n:
        return X
    if isinstance(X, torch.Tensor):
        tail = X[..., -1:].expand(*X.shape[:-1], n - m)
        return torch.cat([X, tail], dim=-1)
    X = np.asarray(X)
    return np.concatenate([X, np.repeat(X[..., -1:], n - m, axis=-1)], axis=-1)


class LinearAdjuster(nn.Module):
    def __init__(self, m: int, n: int):
        super().__init__()
        self.m, self.n = m, n
        self.M = nn.Parameter(torch.empty(m, n))

    def reset_parameters(self, rng=None) -> None:
        with torch.no_grad():
            self.M.copy_(torch.from_numpy(interpolation_stencil(self.m, self.n)).to(self.M.dtype))

    def forward(self, X):
        return adjust_linear(X, self.M)


class PaddingAdjuster(nn.Module):
    def __init__(self, m: int, n: int):
        super().__init__()
        self.m, self.n = m, n

    def reset_parameters(self, rng=None) -> None:
        pass

    def forward(self, X):
        return adjust_padding(X, self.n)


class IdentityAdjuster(nn.Module):
    def reset_parameters(self, rng=None) -> None:
        pass

    def forward(self, X):
        return X


def build_adjuster(config: AdjusterConfig) -> nn.Module:
    if config.kind == "identity":
        return IdentityAdjuster()
    if config.kind == "padding":
        return PaddingAdjuster(config.m, config.n)
    return LinearAdjuster(config.m, config.n)
