"""Dense GCN, GAT and GraphSAGE layers over the fully connected channel graph.

Node features are laid out as ``(..., C, F)``: one row per channel, the time
axis acting as the feature axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .diff import uniform_init, zeros_init

ARCHITECTURES = ("gcn", "gat", "sage")
LEAKY_SLOPE = 0.2


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class GnnConfig:
    architecture: str = "gcn"
    use_edge_weights: bool = True
    layers: int = 2
    hidden_dim: int | None = None  # None -> sequence length n
    gat_heads: int = 1
    edge_dim: int = 4
    experimental: bool = False

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise GraphError(f"architecture must be one of {ARCHITECTURES}")
        if self.architecture == "sage" and self.use_edge_weights:
            raise GraphError("GraphSAGE takes no edge weights")
        if self.layers < 1:
            raise GraphError("layers must be >= 1")
        if self.layers != 2 and not self.experimental:
            raise GraphError("only two GNN layers are allowed outside experimental mode")
        if self.gat_heads < 1:
            raise GraphError("gat_heads must be >= 1")


def _double(W) -> torch.Tensor:
    if isinstance(W, torch.Tensor):
        return W.detach().to(torch.float64)
    return torch.tensor(np.array(W, dtype=np.float64))


def _adjacency(W, C: int, use_edge_weights: bool) -> torch.Tensor:
    if use_edge_weights:
        A = _double(W)
        if A.shape != (C, C):
            raise GraphError(f"edge weights are {tuple(A.shape)}, expected {(C, C)}")
        return A
    return torch.ones(C, C, dtype=torch.float64) - torch.eye(C, dtype=torch.float64)


def gcn_operator(W, C: int, use_edge_weights: bool) -> torch.Tensor:
    """Symmetric-normalised D^-1/2 (A + I) D^-1/2 in float64."""
    A_tilde = _adjacency(W, C, use_edge_weights) + torch.eye(C, dtype=torch.float64)
    deg = A_tilde.sum(dim=1)
    if torch.any(deg <= 0):
        raise GraphError("non-positive degree in GCN operator")
    d = deg.rsqrt()
    return d[:, None] * A_tilde * d[None, :]


def gcn_layer(X, W, theta, bias=None, use_edge_weights: bool = True) -> torch.Tensor:
    C = X.shape[-2]
    op = gcn_operator(W, C, use_edge_weights).to(X.dtype)
    out = op @ X @ theta
    return out if bias is None else out + bias


def gat_attention(X, W, theta, att, edge_embed=None, use_edge_weights: bool = True) -> torch.Tensor:
    """Attention coefficients, shape ``(..., heads, C, C)``; rows sum to one."""
    C = X.shape[-2]
    heads, _, fh = theta.shape
    H = torch.einsum("...cf,hfo->...hco", X, theta)
    s_src = torch.einsum("...hco,ho->...hc", H, att[:, :fh])
    s_dst = torch.einsum("...hco,ho->...hc", H, att[:, fh : 2 * fh])
    logits = s_src.unsqueeze(-1) + s_dst.unsqueeze(-2)
    if use_edge_weights:
        w = _double(W).to(X.dtype)
        if w.shape != (C, C):
            raise GraphError(f"edge weights are {tuple(w.shape)}, expected {(C, C)}")
        # a_e . (theta_e * w_ij): the scalar weight embedded into edge_dim, then scored
        edge_score = att[:, 2 * fh :] @ edge_embed  # (heads,)
        logits = logits + edge_score[:, None, None] * w
    return torch.softmax(F.leaky_relu(logits, LEAKY_SLOPE), dim=-1)


def gat_layer(X, W, theta, att, edge_embed=None, use_edge_weights: bool = True) -> torch.Tensor:
    alpha = gat_attention(X, W, theta, att, edge_embed, use_edge_weights)
    H = torch.einsum("...cf,hfo->...hco", X, theta)
    out = alpha @ H  # (..., heads, C, fh)
    return torch.cat(out.unbind(dim=-3), dim=-1)


def sage_layer(X, theta_self, theta_neigh, bias=None) -> torch.Tensor:
    C = X.shape[-2]
    if C < 2:
        raise GraphError("GraphSAGE needs at least one neighbour (C >= 2)")
    neigh = (X.sum(dim=-2, keepdim=True) - X) / (C - 1)
    out = X @ theta_self + neigh @ theta_neigh
    return out if bias is None else out + bias


class GCNLayer(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, weights, use_edge_weights: bool = True):
        super().__init__()
        C = np.asarray(weights).shape[0]
        self.use_edge_weights = use_edge_weights
        self.operator64 = gcn_operator(weights, C, use_edge_weights)
        self.weight = nn.Parameter(torch.empty(in_dim, out_dim))
        self.bias = nn.Parameter(torch.empty(out_dim))

    def reset_parameters(self, rng) -> None:
        uniform_init(self.weight, self.weight.shape[0], rng)
        zeros_init(self.bias)

    def forward(self, X):
        return self.operator64.to(X.dtype) @ X @ self.weight + self.bias


class GATLayer(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, weights, use_edge_weights: bool = True, heads: int = 1, edge_dim: int = 4):
        super().__init__()
        if out_dim % heads:
            raise GraphError(f"out_dim {out_dim} not divisible by heads {heads}")
        fh = out_dim // heads
        self.use_edge_weights = use_edge_weights
        self.weights64 = _double(weights)
        self.weight = nn.Parameter(torch.empty(heads, in_dim, fh))
        self.att = nn.Parameter(torch.empty(heads, 2 * fh + (edge_dim if use_edge_weights else 0)))
        self.edge_embed = nn.Parameter(torch.empty(edge_dim)) if use_edge_weights else None

    def reset_parameters(self, rng) -> None:
        uniform_init(self.weight, self.weight.shape[1], rng)
        uniform_init(self.att, self.att.shape[1], rng)
        if self.edge_embed is not None:
            uniform_init(self.edge_embed, 1, rng)

    def attention(self, X):
        return gat_attention(X, self.weights64, self.weight, self.att, self.edge_embed, self.use_edge_weights)

    def forward(self, X):
        return gat_layer(X, self.weights64, self.weight, self.att, self.edge_embed, self.use_edge_weights)


class SAGELayer(nn.Module):
    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.weight_self = nn.Parameter(torch.empty(in_dim, out_dim))
        self.weight_neigh = nn.Parameter(torch.empty(in_dim, out_dim))
        self.bias = nn.Parameter(torch.empty(out_dim))

    def reset_parameters(self, rng) -> None:
        uniform_init(self.weight_self, self.weight_self.shape[0], rng)
        uniform_init(self.weight_neigh, self.weight_neigh.shape[0], rng)
        zeros_init(self.bias)

    def forward(self, X):
        return sage_layer(X, self.weight_self, self.weight_neigh, self.bias)


def make_layer(config: GnnConfig, in_dim: int, out_dim: int, weights) -> nn.Module:
    if config.architecture == "gcn":
        return GCNLayer(in_dim, out_dim, weights, config.use_edge_weights)
    if config.architecture == "gat":
        return GATLayer(in_dim, out_dim, weights, config.use_edge_weights, config.gat_heads, config.edge_dim)
    return SAGELayer(in_dim, out_dim)


class GnnStack(nn.Module):
    """GNN layers with ReLU between them; maps (..., C, n) to (..., C, n)."""

    def __init__(self, config: GnnConfig, weights, n: int):
        super().__init__()
        self.config = config
        self.n = n
        hidden = config.hidden_dim or n
        dims = [n] + [hidden] * (config.layers - 1) + [n]
        self.layers = nn.ModuleList(make_layer(config, a, b, weights) for a, b in zip(dims[:-1], dims[1:]))

    def reset_parameters(self, rng) -> None:
        for layer in self.layers:
            layer.reset_parameters(rng)

    def forward(self, X):
        if X.shape[-1] != self.n:
            raise GraphError(f"GNN expects sequence length {self.n}, got {X.shape[-1]}")
        for i, layer in enumerate(self.layers):
            if i:
                X = torch.relu(X)
            X = layer(X)
        return X


def gnn_stack(X, weights, config: GnnConfig, rng=None) -> torch.Tensor:
    stack = GnnStack(config, weights, X.shape[-1]).to(X.dtype)
    if rng is not None:
        stack.reset_parameters(rng)
    return stack(X)
