"""Interaction modules. Every scorer returns one logit per candidate, shape (B, C)."""
from __future__ import annotations

import torch
from torch import nn

from .users import _mlp


class DotScorer(nn.Module):
    kind = "dot"

    def forward(self, user: torch.Tensor, cand: torch.Tensor) -> torch.Tensor:
        return torch.einsum("bd,bcd->bc", user, cand)


class CrossNetwork(nn.Module):
    def __init__(self, dim: int, layers: int):
        super().__init__()
        self.weights = nn.ModuleList(nn.Linear(dim, 1, bias=False) for _ in range(layers))
        self.biases = nn.ParameterList(nn.Parameter(torch.zeros(dim)) for _ in range(layers))

    def forward(self, x0):
        x = x0
        for w, b in zip(self.weights, self.biases):
            x = x0 * w(x) + b + x
        return x


class CrossScorer(nn.Module):
    """Cross network and deep tower in parallel over [context, candidate]."""

    kind = "cross_network"

    def __init__(self, context_dim: int, embed_dim: int, cross_layers: int = 3, hidden: list[int] | None = None,
                 dropout: float = 0.0):
        super().__init__()
        hidden = hidden or [64, 64]
        dim = context_dim + embed_dim
        self.cross = CrossNetwork(dim, cross_layers)
        self.deep = _mlp([dim, *hidden], dropout=dropout)
        self.out = nn.Linear(dim + hidden[-1], 1)

    def forward(self, context, cand):
        x = torch.cat([context, cand], dim=-1)
        return self.out(torch.cat([self.cross(x), self.deep(x)], dim=-1)).squeeze(-1)


class DinScorer(nn.Module):
    kind = "din_mlp"

    def __init__(self, context_dim: int, embed_dim: int, hidden: list[int] | None = None, dropout: float = 0.0):
        super().__init__()
        hidden = hidden or [80, 40]
        self.mlp = nn.Sequential(_mlp([context_dim + 2 * embed_dim, *hidden], nn.PReLU, dropout),
                                 nn.Linear(hidden[-1], 1))

    def forward(self, context, cand):
        return self.mlp(torch.cat([context, cand, context * cand], dim=-1)).squeeze(-1)


class BstScorer(nn.Module):
    kind = "bst_mlp"

    def __init__(self, context_dim: int, embed_dim: int, hidden: list[int] | None = None, dropout: float = 0.0):
        super().__init__()
        hidden = hidden or [64, 32]
        self.mlp = nn.Sequential(_mlp([context_dim + embed_dim, *hidden], nn.LeakyReLU, dropout),
                                 nn.Linear(hidden[-1], 1))

    def forward(self, context, cand):
        return self.mlp(torch.cat([context, cand], dim=-1)).squeeze(-1)
