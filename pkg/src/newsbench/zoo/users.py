"""History encoders.

Matching modules map (history vectors, mask) to one user vector. CTR
modules are candidate-aware and return a context per candidate, which the
matching scorer then consumes.

Histories are right-padded; `mask` is True on real positions. Users with an
empty history get a learned default instead of attending over nothing.
"""
from __future__ import annotations

import torch
from torch import nn

from .encoders import AdditiveAttention, at_least_one


def _mlp(sizes: list[int], activation=nn.ReLU, dropout: float = 0.0) -> nn.Sequential:
    layers = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        layers += [nn.Linear(a, b), activation(), nn.Dropout(dropout)]
    return nn.Sequential(*layers)


class UserModule(nn.Module):
    kind = "base"
    candidate_aware = False

    def __init__(self, embed_dim: int):
        super().__init__()
        self.embed_dim = embed_dim
        self.default = nn.Parameter(torch.zeros(embed_dim))

    def _fill_empty(self, out: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        has_history = mask.any(dim=-1)
        while has_history.dim() < out.dim():
            has_history = has_history.unsqueeze(-1)
        return torch.where(has_history, out, self.default.expand_as(out))


class AttentionUser(UserModule):
    kind = "additive_attention"

    def __init__(self, embed_dim, attention_hidden: int = 64):
        super().__init__(embed_dim)
        self.attention = AdditiveAttention(embed_dim, attention_hidden)

    def forward(self, hist, mask, user_idx=None, cand=None):
        return self._fill_empty(self.attention(hist, at_least_one(mask)), mask)


class GRULongShortUser(UserModule):
    """GRU over the history, initialised with a long-term per-user embedding."""

    kind = "gru_long_short"

    def __init__(self, embed_dim, n_users: int, long_term_dropout: float = 0.0):
        super().__init__(embed_dim)
        self.users = nn.Embedding(n_users, embed_dim)
        nn.init.normal_(self.users.weight, 0.0, 0.02)
        self.gru = nn.GRU(embed_dim, embed_dim, batch_first=True)
        self.long_term_dropout = long_term_dropout

    def forward(self, hist, mask, user_idx=None, cand=None):
        if user_idx is None:
            user_idx = torch.zeros(hist.shape[0], dtype=torch.long, device=hist.device)
        long_term = self.users(user_idx)
        if self.training and self.long_term_dropout > 0:
            keep = (torch.rand(long_term.shape[0], 1) >= self.long_term_dropout).float()
            long_term = long_term * keep
        lengths = mask.sum(1)
        packed = nn.utils.rnn.pack_padded_sequence(hist, lengths.clamp(min=1).cpu(), batch_first=True,
                                                   enforce_sorted=False)
        _, h = self.gru(packed, long_term.unsqueeze(0).contiguous())
        h = h.squeeze(0)
        return torch.where((lengths > 0).unsqueeze(-1), h, long_term)


class SelfAttentionUser(UserModule):
    kind = "multihead_self_attention"

    def __init__(self, embed_dim, heads: int = 4, attention_hidden: int = 64, dropout: float = 0.0):
        super().__init__(embed_dim)
        self.mha = nn.MultiheadAttention(embed_dim, heads, dropout=dropout, batch_first=True)
        self.attention = AdditiveAttention(embed_dim, attention_hidden)

    def forward(self, hist, mask, user_idx=None, cand=None):
        safe = at_least_one(mask)
        h, _ = self.mha(hist, hist, hist, key_padding_mask=~safe, need_weights=False)
        return self._fill_empty(self.attention(h, safe), mask)


class TransformerSeqUser(UserModule):
    """Behavior-sequence transformer over [history, candidate] for each candidate."""

    kind = "transformer_seq"
    candidate_aware = True

    def __init__(self, embed_dim, max_len: int, heads: int = 2, layers: int = 1, dropout: float = 0.0,
                 norm_first: bool = True):
        super().__init__(embed_dim)
        self.positions = nn.Embedding(max_len + 1, embed_dim)
        nn.init.normal_(self.positions.weight, 0.0, 0.02)
        layer = nn.TransformerEncoderLayer(embed_dim, heads, 2 * embed_dim, dropout=dropout, batch_first=True,
                                           norm_first=norm_first)
        self.encoder = nn.TransformerEncoder(layer, layers, enable_nested_tensor=False)

    @property
    def context_dim(self) -> int:
        return 2 * self.embed_dim

    def forward(self, hist, mask, user_idx=None, cand=None):
        b, c, d = cand.shape
        l = hist.shape[1]
        seq = torch.cat([hist.unsqueeze(1).expand(b, c, l, d), cand.unsqueeze(2)], dim=2).reshape(b * c, l + 1, d)
        seq_mask = torch.cat([mask, torch.ones(b, 1, dtype=torch.bool, device=mask.device)], dim=1)
        seq_mask = seq_mask.unsqueeze(1).expand(b, c, l + 1).reshape(b * c, l + 1)
        # candidate sits at position 0 of the position table, history counts back from it
        pos = torch.cat([torch.arange(l, 0, -1), torch.zeros(1, dtype=torch.long)]).clamp(max=self.positions.num_embeddings - 1)
        h = self.encoder(seq + self.positions(pos.to(seq.device)), src_key_padding_mask=~seq_mask)
        h = h.reshape(b, c, l + 1, d)
        m = mask.unsqueeze(1).unsqueeze(-1).float()
        pooled = (h[:, :, :l] * m).sum(2) / m.sum(2).clamp(min=1.0)
        pooled = self._fill_empty(pooled, mask.unsqueeze(1).expand(b, c, l))
        return torch.cat([pooled, h[:, :, l]], dim=-1)


class PooledContextUser(UserModule):
    """Masked mean of the history, repeated for each candidate."""

    kind = "pooled_context"
    candidate_aware = True

    @property
    def context_dim(self) -> int:
        return self.embed_dim

    def forward(self, hist, mask, user_idx=None, cand=None):
        m = mask.unsqueeze(-1).float()
        pooled = self._fill_empty((hist * m).sum(1) / m.sum(1).clamp(min=1.0), mask)
        return pooled.unsqueeze(1).expand(-1, cand.shape[1], -1)


class TargetAttentionUser(UserModule):
    """Candidate-keyed activation weights over the history (unnormalised)."""

    kind = "target_attention"
    candidate_aware = True

    def __init__(self, embed_dim, attention_hidden: list[int] | None = None):
        super().__init__(embed_dim)
        hidden = attention_hidden or [36]
        self.activation_unit = nn.Sequential(_mlp([4 * embed_dim, *hidden], nn.PReLU), nn.Linear(hidden[-1], 1))

    @property
    def context_dim(self) -> int:
        return self.embed_dim

    def forward(self, hist, mask, user_idx=None, cand=None):
        b, c, d = cand.shape
        l = hist.shape[1]
        h = hist.unsqueeze(1).expand(b, c, l, d)
        q = cand.unsqueeze(2).expand(b, c, l, d)
        w = self.activation_unit(torch.cat([h, q, h - q, h * q], dim=-1)).squeeze(-1)
        w = w * mask.unsqueeze(1).float()
        interest = (w.unsqueeze(-1) * h).sum(2)
        return self._fill_empty(interest, mask.unsqueeze(1).expand(b, c, l))
