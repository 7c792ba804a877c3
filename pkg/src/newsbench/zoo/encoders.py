"""Content encoders: article index -> content vector of width `embed_dim`.

All encoders take a 1-D tensor of article rows (row 0 is the UNK article)
and count one invocation per row. The cached lookup is the exception: a
lookup into a frozen table is not an encode, so it never counts.
"""
from __future__ import annotations

import threading

import torch
from torch import nn

from .plm import PLMAdapter


class AdditiveAttention(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.proj = nn.Linear(dim, hidden)
        self.query = nn.Linear(hidden, 1, bias=False)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        logits = self.query(torch.tanh(self.proj(x))).squeeze(-1)
        logits = logits.masked_fill(~mask, float("-inf"))
        weights = torch.softmax(logits, dim=-1)
        weights = torch.nan_to_num(weights, nan=0.0)
        return torch.bmm(weights.unsqueeze(1), x).squeeze(1)


def at_least_one(mask: torch.Tensor) -> torch.Tensor:
    """Unmask position 0 of fully-masked rows so attention never sees an empty key set."""
    empty = ~mask.any(dim=-1)
    if empty.any():
        mask = mask.clone()
        mask[empty, 0] = True
    return mask


class ContentEncoder(nn.Module):
    kind = "base"
    counts_invocations = True

    def __init__(self, embed_dim: int):
        super().__init__()
        self.embed_dim = embed_dim
        self.invocation_counter = 0
        self._lock = threading.Lock()

    def forward(self, rows: torch.Tensor) -> torch.Tensor:
        if self.counts_invocations:
            with self._lock:
                self.invocation_counter += int(rows.numel())
        return self.encode(rows)

    def encode(self, rows: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def reset_counter(self) -> None:
        with self._lock:
            self.invocation_counter = 0


class _TitleEncoder(ContentEncoder):
    """Shared plumbing for encoders that read title token ids."""

    def __init__(self, titles: torch.Tensor, vocab_size: int, embed_dim: int, word_dim: int | None = None):
        super().__init__(embed_dim)
        self.register_buffer("titles", titles.long(), persistent=False)
        self.word_dim = word_dim or embed_dim
        self.words = nn.Embedding(vocab_size, self.word_dim, padding_idx=0)

    def embed(self, rows: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        tokens = self.titles[rows]
        return self.words(tokens), tokens != 0


class CNNEncoder(_TitleEncoder):
    kind = "cnn"

    def __init__(self, titles, vocab_size, embed_dim, filters: int = 64, window: int = 3,
                 attention_hidden: int = 64, dropout: float = 0.0):
        super().__init__(titles, vocab_size, embed_dim)
        self.conv = nn.Conv1d(self.word_dim, filters, window, padding=window // 2)
        self.attention = AdditiveAttention(filters, attention_hidden)
        self.dropout = nn.Dropout(dropout)
        self.projection = nn.Linear(filters, embed_dim) if filters != embed_dim else nn.Identity()

    def encode(self, rows):
        x, mask = self.embed(rows)
        x = torch.relu(self.conv(self.dropout(x).transpose(1, 2))).transpose(1, 2)
        return self.projection(self.attention(self.dropout(x), at_least_one(mask)))


class SelfAttentionEncoder(_TitleEncoder):
    kind = "self_attention"

    def __init__(self, titles, vocab_size, embed_dim, heads: int = 4, attention_hidden: int = 64,
                 dropout: float = 0.0):
        super().__init__(titles, vocab_size, embed_dim)
        self.mha = nn.MultiheadAttention(self.word_dim, heads, dropout=dropout, batch_first=True)
        self.attention = AdditiveAttention(self.word_dim, attention_hidden)
        self.dropout = nn.Dropout(dropout)

    def encode(self, rows):
        x, mask = self.embed(rows)
        mask = at_least_one(mask)
        x = self.dropout(x)
        h, _ = self.mha(x, x, x, key_padding_mask=~mask, need_weights=False)
        return self.attention(self.dropout(h), mask)


class PoolingEncoder(_TitleEncoder):
    """Masked mean over title word embeddings."""

    kind = "pooling"

    def encode(self, rows):
        x, mask = self.embed(rows)
        m = mask.unsqueeze(-1).float()
        return (x * m).sum(1) / m.sum(1).clamp(min=1.0)


class PLMContentEncoder(ContentEncoder):
    kind = "plm_adapter"

    def __init__(self, adapter: PLMAdapter, texts: list[str], embed_dim: int, freeze_backbone: bool = False):
        super().__init__(embed_dim)
        self.adapter = adapter
        ids, mask = adapter.tokenize(texts)
        self.register_buffer("plm_ids", ids, persistent=False)
        self.register_buffer("plm_mask", mask, persistent=False)
        self.projection = nn.Linear(adapter.out_dim, embed_dim)
        if freeze_backbone:
            for p in adapter.parameters():
                p.requires_grad_(False)

    def encode(self, rows):
        ids, mask = self.plm_ids[rows], self.plm_mask[rows]
        width = max(int(mask.sum(1).max()), 1) if rows.numel() else 1
        return self.projection(self.adapter(ids[:, :width], mask[:, :width]))


class RandomLookupEncoder(ContentEncoder):
    """Trainable per-article embedding, N(0, 0.02) init. No text is read."""

    kind = "lookup_random"

    def __init__(self, n_rows: int, embed_dim: int, std: float = 0.02):
        super().__init__(embed_dim)
        self.table = nn.Embedding(n_rows, embed_dim)
        nn.init.normal_(self.table.weight, 0.0, std)

    def encode(self, rows):
        return self.table(rows)


class CachedLookupEncoder(ContentEncoder):
    """Frozen cached table plus a learnable projection to `embed_dim`."""

    kind = "lookup_cached"
    counts_invocations = False

    def __init__(self, table: torch.Tensor, embed_dim: int):
        super().__init__(embed_dim)
        self.register_buffer("table", table.float().contiguous())
        self.projection = nn.Linear(table.shape[1], embed_dim)

    def encode(self, rows):
        return self.projection(self.table[rows])

    def table_bytes(self) -> bytes:
        return self.table.detach().cpu().numpy().tobytes()
