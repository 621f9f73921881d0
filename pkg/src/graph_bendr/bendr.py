"""Convolutional encoder, span masking, transformer reconstruction, contrastive loss and heads."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .diff import uniform_init, zeros_init


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    kernels: tuple[int, ...] = (3, 3, 3, 3, 3, 3)
    strides: tuple[int, ...] = (3, 2, 2, 2, 2, 2)
    feature_dim: int = 64
    groups: int = 8

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(int(k) for k in self.kernels))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if len(self.kernels) != 6 or len(self.strides) != 6:
            raise ShapeError("the encoder has exactly 6 blocks")
        if self.feature_dim < 8:
            raise ShapeError("feature_dim must be >= 8")
        if self.feature_dim % self.groups:
            raise ShapeError("feature_dim must be divisible by groups")

    @property
    def downsample(self) -> int:
        return math.prod(self.strides)

    def output_length(self, n: int) -> int:
        for s in self.strides:
            n //= s
        return n


@dataclass(frozen=True)
class TransformerConfig:
    layers: int = 2
    heads: int = 4
    ffn_dim: int | None = None  # None -> 4 * model_dim
    dropout: float = 0.1

    def __post_init__(self):
        if self.layers < 0 or self.heads < 1:
            raise ShapeError("invalid transformer depth or head count")
        if not 0 <= self.dropout < 1:
            raise ShapeError("dropout must lie in [0, 1)")


@dataclass(frozen=True)
class HeadConfig:
    kind: str = "bendr"
    num_classes: int = 2

    def __post_init__(self):
        if self.kind not in ("bendr", "linear"):
            raise ShapeError("head kind must be 'bendr' or 'linear'")


# -- encoder -----------------------------------------------------------------

class EncoderBlock(nn.Module):
    """Conv1d -> GroupNorm -> GELU, producing floor(L / stride) output steps."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int, groups: int):
        super().__init__()
        self.kernel, self.stride = kernel, stride
        self.conv = nn.Conv1d(in_ch, out_ch, kernel, stride)
        self.norm = nn.GroupNorm(groups, out_ch)

    def reset_parameters(self, rng) -> None:
        uniform_init(self.conv.weight, self.conv.in_channels * self.kernel, rng)
        zeros_init(self.conv.bias)
        with torch.no_grad():
            self.norm.weight.fill_(1.0)
            self.norm.bias.zero_()

    def forward(self, x):
        pad = self.kernel - self.stride
        x = F.pad(x, (0, pad)) if pad >= 0 else x[..., : x.shape[-1] + pad]
        return F.gelu(self.norm(self.conv(x)))


class ConvEncoder(nn.Module):
    def __init__(self, config: EncoderConfig, in_channels: int):
        super().__init__()
        self.config = config
        chans = [in_channels] + [config.feature_dim] * 6
        self.blocks = nn.ModuleList(
            EncoderBlock(chans[i], chans[i + 1], k, s, config.groups)
            for i, (k, s) in enumerate(zip(config.kernels, config.strides))
        )

    def reset_parameters(self, rng) -> None:
        for b in self.blocks:
            b.reset_parameters(rng)

    def forward(self, x):
        """(B, C, n) -> (B, T', d), time-major."""
        need = self.config.downsample
        if x.shape[-1] < need:
            raise ShapeError(f"input length {x.shape[-1]} is below the encoder minimum of {need} samples")
        for b in self.blocks:
            x = b(x)
        return x.transpose(-1, -2)


# -- masking -----------------------------------------------------------------

def _spans(starts: np.ndarray, T: int, span: int) -> np.ndarray:
    mask = np.zeros(T, dtype=bool)
    for s in np.flatnonzero(starts):
        mask[s : s + span] = True
    return mask


def sample_mask(T: int, p_start: float, span: int, rng: np.random.Generator, max_retries: int = 10) -> np.ndarray:
    """Span mask with at least one masked and one unmasked position."""
    if not (T > span >= 1):
        raise ShapeError(f"need T' > span >= 1 (T'={T}, span={span})")
    if not 0 < p_start < 1:
        raise ShapeError("p_start must lie in (0, 1)")
    for _ in range(max_retries):
        mask = _spans(rng.random(T) < p_start, T, span)
        if 0 < mask.sum() < T:
            return mask
    start = int(rng.integers(0, T))
    mask = np.zeros(T, dtype=bool)
    mask[start : start + span] = True
    return mask


# -- transformer -------------------------------------------------------------

def _dropout(x, p: float, training: bool, generator: torch.Generator | None):
    if not training or p == 0 or generator is None:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p
    return x * keep / (1 - p)


class SelfAttention(nn.Module):
    def __init__(self, d: int, heads: int):
        super().__init__()
        if d % heads:
            raise ShapeError(f"model_dim {d} not divisible by heads {heads}")
        self.heads = heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d, bias=False)  # a key bias cancels in the softmax
        self.v = nn.Linear(d, d)
        self.out = nn.Linear(d, d)

    def reset_parameters(self, rng) -> None:
        for lin in (self.q, self.k, self.v, self.out):
            uniform_init(lin.weight, lin.in_features, rng)
            if lin.bias is not None:
                zeros_init(lin.bias)

    def attention(self, x):
        B, T, d = x.shape
        h = self.heads
        q = self.q(x).view(B, T, h, d // h).transpose(1, 2)
        k = self.k(x).view(B, T, h, d // h).transpose(1, 2)
        return torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d // h), dim=-1)

    def forward(self, x):
        B, T, d = x.shape
        h = self.heads
        attn = self.attention(x)
        v = self.v(x).view(B, T, h, d // h).transpose(1, 2)
        ctx = (attn @ v).transpose(1, 2).reshape(B, T, d)
        return self.out(ctx)


class TransformerLayer(nn.Module):
    """Pre-norm: x + Attn(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, d: int, heads: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.dropout = dropout
        self.norm1 = nn.LayerNorm(d)
        self.attn = SelfAttention(d, heads)
        self.norm2 = nn.LayerNorm(d)
        self.ff1 = nn.Linear(d, ffn_dim)
        self.ff2 = nn.Linear(ffn_dim, d)

    def reset_parameters(self, rng) -> None:
        for norm in (self.norm1, self.norm2):
            with torch.no_grad():
                norm.weight.fill_(1.0)
                norm.bias.zero_()
        self.attn.reset_parameters(rng)
        for lin in (self.ff1, self.ff2):
            uniform_init(lin.weight, lin.in_features, rng)
            zeros_init(lin.bias)

    def forward(self, x, generator=None):
        x = x + _dropout(self.attn(self.norm1(x)), self.dropout, self.training, generator)
        h = self.ff2(F.gelu(self.ff1(self.norm2(x))))
        return x + _dropout(h, self.dropout, self.training, generator)


class Transformer(nn.Module):
    def __init__(self, config: TransformerConfig, d: int, max_len: int):
        super().__init__()
        self.config = config
        self.max_len = max_len
        ffn = config.ffn_dim or 4 * d
        self.mask_embedding = nn.Parameter(torch.empty(d))
        self.pos_embedding = nn.Parameter(torch.empty(max_len, d))
        self.layers = nn.ModuleList(TransformerLayer(d, config.heads, ffn, config.dropout) for _ in range(config.layers))

    def reset_parameters(self, rng) -> None:
        d = self.mask_embedding.shape[0]
        uniform_init(self.mask_embedding, d, rng)
        uniform_init(self.pos_embedding, d, rng)
        for layer in self.layers:
            layer.reset_parameters(rng)

    def forward(self, features, mask=None, generator=None):
        """features (B, T', d); mask (B, T') bool marks positions to replace by the mask vector."""
        T = features.shape[-2]
        if T > self.max_len:
            raise ShapeError(f"sequence of {T} steps exceeds positional table of {self.max_len}")
        x = features
        if mask is not None:
            m = torch.as_tensor(mask, dtype=torch.bool).unsqueeze(-1)
            x = torch.where(m, self.mask_embedding.to(x.dtype).expand_as(x), x)
        x = x + self.pos_embedding[:T]
        for layer in self.layers:
            x = layer(x, generator)
        return x


def reconstruct(features, mask, transformer: Transformer, generator=None):
    return transformer(features, mask, generator)


# -- contrastive loss --------------------------------------------------------

def sample_negatives(masked: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """For each masked position, K distinct other masked positions (as indices into ``masked``)."""
    M = len(masked)
    if K >= M and K > 0:
        raise ShapeError(f"K={K} negatives need more than {M} masked positions")
    out = np.empty((M, K), dtype=np.int64)
    for i in range(M):
        others = np.delete(np.arange(M), i)
        out[i] = rng.choice(others, size=K, replace=False) if K else others[:0]
    return out


def contrastive_loss(reconstructed, targets, mask, K: int, temperature: float, rng: np.random.Generator):
    """InfoNCE over masked positions of one sequence; returns (loss, contrastive_accuracy)."""
    mask = np.asarray(mask, dtype=bool)
    masked = np.flatnonzero(mask)
    if masked.size < 1:
        raise ShapeError("contrastive loss needs at least one masked position")
    neg = sample_negatives(masked, K, rng)
    idx = torch.as_tensor(masked)
    rec = F.normalize(reconstructed[idx], dim=-1, eps=1e-8)
    tgt = F.normalize(targets[idx], dim=-1, eps=1e-8)
    pos_logit = (rec * tgt).sum(-1, keepdim=True)
    neg_logit = torch.einsum("md,mkd->mk", rec, tgt[torch.as_tensor(neg)])
    logits = torch.cat([pos_logit, neg_logit], dim=-1) / temperature
    loss = (torch.logsumexp(logits, dim=-1) - logits[:, 0]).mean()
    acc = float((logits.argmax(dim=-1) == 0).double().mean())
    return loss, acc


# -- heads -------------------------------------------------------------------

class ClassifierHead(nn.Module):
    """Mean over time followed by an affine map to class logits."""

    def __init__(self, d: int, num_classes: int = 2):
        super().__init__()
        self.linear = nn.Linear(d, num_classes)

    def reset_parameters(self, rng) -> None:
        uniform_init(self.linear.weight, self.linear.in_features, rng)
        zeros_init(self.linear.bias)

    def forward(self, features):
        return self.linear(features.mean(dim=-2))


def head_forward(features, head: ClassifierHead, kind: str, transformer: Transformer | None = None, generator=None):
    if kind == "bendr":
        if transformer is None:
            raise ShapeError("the bendr head needs the pre-trained transformer")
        features = transformer(features, None, generator)
    elif kind != "linear":
        raise ShapeError(f"unknown head kind {kind!r}")
    return head(features)
