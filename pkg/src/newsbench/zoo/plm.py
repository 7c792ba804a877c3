"""Pretrained-language-model adapter.

Two backends: a Hugging Face model (optional, needs local weights) and a
small deterministic stub whose weights are seeded from `stub_seed` and whose
tokenizer hashes words into buckets. The stub keeps the whole test suite
runnable offline and can be throttled to imitate an expensive encoder.
"""
from __future__ import annotations

import time
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from ..data import NewsArticle, tokenize


class PLMConfigError(RuntimeError):
    pass


@dataclass(frozen=True)
class PLMConfig:
    backend: str = "stub"  # "stub" or a Hugging Face model name / path
    d_plm: int = 768
    max_subwords: int = 30
    stub_seed: int = 0
    stub_buckets: int = 8192
    stub_heads: int = 4
    allow_stub: bool = True
    sleep_per_encode: float = 0.0  # seconds per article, stub only

    def to_dict(self) -> dict:
        return dict(self.__dict__)


PAD_ID, CLS_ID, MASK_ID = 0, 1, 2
_FIRST_WORD_ID = 3


def stub_token_ids(text: str, max_subwords: int, buckets: int) -> list[int]:
    words = tokenize(text)[:max_subwords]
    return [CLS_ID] + [_FIRST_WORD_ID + zlib.crc32(w.encode("utf-8")) % (buckets - _FIRST_WORD_ID) for w in words]


class StubBackbone(nn.Module):
    """Hashed-token embeddings, one transformer layer, CLS-position pooling."""

    def __init__(self, cfg: PLMConfig):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(cfg.stub_seed)
        self.tokens = nn.Embedding(cfg.stub_buckets, cfg.d_plm, padding_idx=PAD_ID)
        self.positions = nn.Embedding(cfg.max_subwords + 1, cfg.d_plm)
        self.layer = nn.TransformerEncoderLayer(cfg.d_plm, cfg.stub_heads, 2 * cfg.d_plm, dropout=0.0,
                                                batch_first=True)
        with torch.no_grad():
            for p in self.parameters():
                if p.dim() > 1:
                    p.copy_(torch.randn(p.shape, generator=gen) * (1.0 / p.shape[-1] ** 0.5))
                else:
                    p.zero_()
            self.tokens.weight.copy_(torch.randn(self.tokens.weight.shape, generator=gen))
            self.tokens.weight[PAD_ID].zero_()
            for norm in (self.layer.norm1, self.layer.norm2):
                norm.weight.fill_(1.0)

    def tokenize(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        rows = [stub_token_ids(t, self.cfg.max_subwords, self.cfg.stub_buckets) for t in texts]
        width = max(len(r) for r in rows) if rows else 1
        ids = torch.zeros(len(rows), width, dtype=torch.long)
        for i, r in enumerate(rows):
            ids[i, : len(r)] = torch.tensor(r)
        return ids, ids != PAD_ID

    @property
    def vocab_size(self) -> int:
        return self.cfg.stub_buckets

    @property
    def mask_id(self) -> int:
        return MASK_ID

    def forward(self, ids: torch.Tensor, mask: torch.Tensor, return_all: bool = False):
        if self.cfg.sleep_per_encode > 0:
            time.sleep(self.cfg.sleep_per_encode * ids.shape[0])
        pos = torch.arange(ids.shape[1], device=ids.device)
        h = self.tokens(ids) + self.positions(pos)
        h = self.layer(h, src_key_padding_mask=~mask)
        return h if return_all else h[:, 0]


class HFBackbone(nn.Module):
    def __init__(self, cfg: PLMConfig):
        super().__init__()
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as e:  # pragma: no cover - transformers is optional
            raise PLMConfigError("transformers is not installed") from e
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(cfg.backend)
            self.model = AutoModel.from_pretrained(cfg.backend)
        except Exception as e:
            raise PLMConfigError(f"cannot load PLM backend {cfg.backend!r}: {e}") from e
        self.cfg = cfg

    def tokenize(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        enc = self.tokenizer(list(texts), padding=True, truncation=True, max_length=self.cfg.max_subwords + 2,
                             return_tensors="pt")
        return enc["input_ids"], enc["attention_mask"].bool()

    @property
    def vocab_size(self) -> int:
        return self.model.config.vocab_size

    @property
    def mask_id(self) -> int:
        return self.tokenizer.mask_token_id

    def forward(self, ids: torch.Tensor, mask: torch.Tensor, return_all: bool = False):
        out = self.model(input_ids=ids, attention_mask=mask.long()).last_hidden_state
        return out if return_all else out[:, 0]


def make_backbone(cfg: PLMConfig) -> nn.Module:
    if cfg.backend == "stub":
        if not cfg.allow_stub:
            raise PLMConfigError("stub backend requested but allow_stub is False")
        return StubBackbone(cfg)
    try:
        backbone = HFBackbone(cfg)
    except PLMConfigError:
        if not cfg.allow_stub:
            raise
        return StubBackbone(cfg)
    if backbone.model.config.hidden_size != cfg.d_plm:
        raise PLMConfigError(f"backend width {backbone.model.config.hidden_size} != d_plm {cfg.d_plm}")
    return backbone


class PLMAdapter(nn.Module):
    """Turns article titles into fixed-width vectors with a PLM backbone."""

    def __init__(self, cfg: PLMConfig | None = None):
        super().__init__()
        self.cfg = cfg or PLMConfig()
        self.backbone = make_backbone(self.cfg)
        self.invocation_counter = 0

    @property
    def out_dim(self) -> int:
        return self.cfg.d_plm

    def tokenize(self, texts: Sequence[str]):
        return self.backbone.tokenize(texts)

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        self.invocation_counter += ids.shape[0]
        return self.backbone(ids, mask)

    @torch.no_grad()
    def encode_articles(self, articles: Sequence[NewsArticle], batch_size: int = 256) -> np.ndarray:
        was_training = self.training
        self.eval()
        chunks = []
        for i in range(0, len(articles), batch_size):
            ids, mask = self.tokenize([a.raw_title for a in articles[i: i + batch_size]])
            chunks.append(self(ids, mask).float().numpy())
        self.train(was_training)
        if not chunks:
            return np.zeros((0, self.out_dim), dtype=np.float32)
        return np.concatenate(chunks).astype(np.float32)


def plm_encode(adapter: PLMAdapter, article: NewsArticle) -> np.ndarray:
    return adapter.encode_articles([article])[0]
