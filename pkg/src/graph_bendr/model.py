"""Adjuster -> GNN -> encoder -> transformer / head, assembled from a RunConfig."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .adjusters import AdjusterConfig, build_adjuster
from .bendr import ClassifierHead, ConvEncoder, EncoderConfig, Transformer, TransformerConfig, head_forward
from .config import RunConfig
from .eeg.types import Montage
from .gnn import GnnConfig, GnnStack
from .graph import EdgeWeightMatrix, build_edge_weights


def encoder_config(cfg: RunConfig) -> EncoderConfig:
    e = cfg.encoder
    return EncoderConfig(e.kernels, e.strides, e.feature_dim, e.groups)


def transformer_config(cfg: RunConfig) -> TransformerConfig:
    t = cfg.transformer
    return TransformerConfig(t.layers, t.heads, t.ffn_dim, t.dropout)


def gnn_config(cfg: RunConfig) -> GnnConfig | None:
    g = cfg.gnn
    if g.architecture == "none":
        return None
    return GnnConfig(g.architecture, g.edge_weights, g.layers, g.hidden_dim, g.gat_heads, g.edge_dim, g.experimental)


def edge_permutation(cfg: RunConfig, C: int) -> list[int] | None:
    seed = cfg.gnn.permute_edges_seed
    if seed is None:
        return None
    return np.random.default_rng(seed).permutation(C).tolist()


def resolve_edge_weights(cfg: RunConfig, montage: Montage) -> EdgeWeightMatrix:
    W = build_edge_weights(montage)
    perm = edge_permutation(cfg, len(montage))
    return W if perm is None else W.permuted(perm)


class GraphBendr(nn.Module):
    """The full network. ``gnn`` is None for the baseline; ``adjuster`` and ``head`` exist only when fine-tuning."""

    def __init__(self, cfg: RunConfig, montage: Montage, n: int):
        super().__init__()
        self.cfg = cfg
        self.n = n
        self.channels = len(montage)
        enc = encoder_config(cfg)
        self.T = enc.output_length(n)
        gcfg = gnn_config(cfg)
        self.edge_weights = resolve_edge_weights(cfg, montage) if gcfg is not None else None
        self.gnn = GnnStack(gcfg, self.edge_weights.weights, n) if gcfg is not None else None
        self.encoder = ConvEncoder(enc, self.channels)
        self.transformer = Transformer(transformer_config(cfg), enc.feature_dim, max(self.T, 1))
        self.adjuster: nn.Module | None = None
        self.head: ClassifierHead | None = None
        self.head_kind: str | None = None

    def reset_parameters(self, rng: np.random.Generator) -> None:
        if self.gnn is not None:
            self.gnn.reset_parameters(rng)
        self.encoder.reset_parameters(rng)
        self.transformer.reset_parameters(rng)

    def attach_finetuning(self, adjuster: AdjusterConfig, head_kind: str, rng: np.random.Generator, num_classes: int = 2) -> None:
        if adjuster.n != self.n:
            raise ValueError(f"adjuster targets n={adjuster.n} but the checkpoint was pre-trained with n={self.n}")
        self.adjuster = build_adjuster(adjuster)
        self.adjuster.reset_parameters(rng)
        self.head = ClassifierHead(self.encoder.config.feature_dim, num_classes)
        self.head.reset_parameters(rng)
        self.head_kind = head_kind

    def trainable(self):
        """Named parameters the current phase updates."""
        for name, p in self.named_parameters():
            if self.head is not None and self.head_kind == "linear" and name.startswith("transformer."):
                continue
            yield name, p

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """(B, C, m) -> convolved features (B, T', d)."""
        if self.adjuster is not None:
            x = self.adjuster(x)
        if self.gnn is not None:
            x = self.gnn(x)
        return self.encoder(x)

    def logits(self, x: torch.Tensor, generator=None) -> torch.Tensor:
        z = self.features(x)
        return head_forward(z, self.head, self.head_kind, self.transformer, generator)

    def pretrained_state(self) -> dict[str, np.ndarray]:
        skip = ("adjuster.", "head.")
        return {
            n: p.detach().cpu().numpy().astype(np.float32)
            for n, p in self.named_parameters()
            if not n.startswith(skip)
        }
