"""The 6 x 5 variant grid and assembly of three-component recommenders."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Mapping, Sequence

import torch
import yaml
from torch import nn

from ..data import DEFAULT_L_MAX, DatasetBundle
from .encoders import (
    CachedLookupEncoder,
    CNNEncoder,
    ContentEncoder,
    PLMContentEncoder,
    PoolingEncoder,
    RandomLookupEncoder,
    SelfAttentionEncoder,
)
from .plm import PLMAdapter, PLMConfig
from .scorers import BstScorer, CrossScorer, DinScorer, DotScorer
from .table import EmbeddingTable
from .users import (
    AttentionUser,
    GRULongShortUser,
    PooledContextUser,
    SelfAttentionUser,
    TargetAttentionUser,
    TransformerSeqUser,
)

BASE_MODELS = ("NAML", "LSTUR", "NRMS", "BST", "DCN", "DIN")
MATCHING_MODELS = ("NAML", "LSTUR", "NRMS")
CTR_MODELS = ("BST", "DCN", "DIN")
VARIANT_KINDS = ("ID", "TEXT", "PLM_NR", "BERT_OLEO", "PREC")
OLEO_KINDS = ("BERT_OLEO", "PREC")
END_TO_END_KINDS = ("ID", "TEXT", "PLM_NR")

TEXT_ENCODER = {"NAML": "cnn", "LSTUR": "cnn", "NRMS": "self_attention",
                "BST": "pooling", "DCN": "pooling", "DIN": "pooling"}


class AssemblyError(ValueError):
    pass


class LookupMissError(KeyError):
    def __str__(self):
        return f"news id {self.args[0]!r} is not in the model's lookup table"


@dataclass(frozen=True)
class VariantSpec:
    base_model: str
    variant_kind: str
    embed_dim: int = 64
    overrides: Mapping[str, Any] = field(default_factory=dict, hash=False, compare=True)

    def __post_init__(self):
        if self.base_model not in BASE_MODELS:
            raise AssemblyError(f"unknown base model {self.base_model!r}")
        if self.variant_kind not in VARIANT_KINDS:
            raise AssemblyError(f"unknown variant kind {self.variant_kind!r}")
        if self.embed_dim <= 0:
            raise AssemblyError("embed_dim must be positive")

    @property
    def name(self) -> str:
        return f"{self.base_model}-{self.variant_kind}"

    @property
    def task(self) -> str:
        return "matching" if self.base_model in MATCHING_MODELS else "ctr"

    @property
    def is_oleo(self) -> bool:
        return self.variant_kind in OLEO_KINDS

    def to_dict(self) -> dict:
        return {"base_model": self.base_model, "variant_kind": self.variant_kind, "embed_dim": self.embed_dim,
                "overrides": copy.deepcopy(dict(self.overrides))}

    @classmethod
    def from_dict(cls, d: Mapping) -> "VariantSpec":
        return cls(d["base_model"], d["variant_kind"], d.get("embed_dim", 64), dict(d.get("overrides", {})))


def enumerate_grid(embed_dim: int = 64) -> list[VariantSpec]:
    return [VariantSpec(b, k, embed_dim) for k in VARIANT_KINDS for b in BASE_MODELS]


def model_config(base_model: str) -> dict:
    text = resources.files("newsbench.zoo").joinpath("models", f"{base_model}.yaml").read_text(encoding="utf-8")
    cfg = yaml.safe_load(text) or {}
    return {k: dict(cfg.get(k) or {}) for k in ("content", "user", "scorer")}


def _component_config(spec: VariantSpec) -> dict:
    cfg = model_config(spec.base_model)
    for part in ("content", "user", "scorer"):
        cfg[part].update(spec.overrides.get(part, {}))
    return cfg


@dataclass
class Batch:
    hist: torch.Tensor  # (B, L) article rows, right-padded
    hist_mask: torch.Tensor
    cand: torch.Tensor  # (B, C)
    cand_mask: torch.Tensor
    user: torch.Tensor  # (B,)
    labels: torch.Tensor | None = None

    @property
    def n_candidates(self) -> int:
        return int(self.cand_mask.sum())

    @property
    def n_history(self) -> int:
        return int(self.hist_mask.sum())


class RecModel(nn.Module):
    def __init__(self, spec: VariantSpec, content: ContentEncoder, user: nn.Module, scorer: nn.Module,
                 news_index: Mapping[str, int], user_index: Mapping[str, int]):
        super().__init__()
        self.spec = spec
        self.content = content
        self.user = user
        self.scorer = scorer
        self.news_index = dict(news_index)
        self.user_index = dict(user_index)
        self.strict_lookup = content.kind in ("lookup_random", "lookup_cached")
        self.user_module_calls = 0
        self.scorer_calls = 0

    @property
    def task(self) -> str:
        return self.spec.task

    @property
    def n_rows(self) -> int:
        return len(self.news_index)

    def component_kinds(self) -> tuple[str, str, str]:
        return self.content.kind, self.user.kind, self.scorer.kind

    def parameter_count(self, trainable_only: bool = False) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad or not trainable_only)

    def row(self, news_id: str) -> int:
        r = self.news_index.get(news_id)
        if r is None:
            if self.strict_lookup:
                raise LookupMissError(news_id)
            return 0
        return r

    def make_batch(self, histories: Sequence[Sequence[str]], candidates: Sequence[Sequence[str]],
                   user_ids: Sequence[str], labels: Sequence[Sequence[int]] | None = None,
                   l_max: int = DEFAULT_L_MAX) -> Batch:
        b = len(candidates)
        histories = [tuple(h)[-l_max:] if l_max > 0 else () for h in histories]
        l = max([len(h) for h in histories] + [1])
        c = max(len(x) for x in candidates)
        hist = torch.zeros(b, l, dtype=torch.long)
        hist_mask = torch.zeros(b, l, dtype=torch.bool)
        cand = torch.zeros(b, c, dtype=torch.long)
        cand_mask = torch.zeros(b, c, dtype=torch.bool)
        lab = torch.zeros(b, c) if labels is not None else None
        for i in range(b):
            h = histories[i]
            if h:
                hist[i, : len(h)] = torch.tensor([self.row(n) for n in h])
                hist_mask[i, : len(h)] = True
            cand[i, : len(candidates[i])] = torch.tensor([self.row(n) for n in candidates[i]])
            cand_mask[i, : len(candidates[i])] = True
            if lab is not None:
                lab[i, : len(labels[i])] = torch.tensor(labels[i], dtype=torch.float)
        users = torch.tensor([self.user_index.get(u, 0) for u in user_ids], dtype=torch.long)
        return Batch(hist, hist_mask, cand, cand_mask, users, lab)

    def forward(self, batch: Batch) -> torch.Tensor:
        """Encode every history item and candidate once, then score. Returns (B, C) logits."""
        n_h = batch.n_history
        rows = torch.cat([batch.hist[batch.hist_mask], batch.cand[batch.cand_mask]])
        vecs = self.content(rows)
        d = vecs.shape[-1]
        h = vecs.new_zeros(*batch.hist.shape, d)
        h[batch.hist_mask] = vecs[:n_h]
        c = vecs.new_zeros(*batch.cand.shape, d)
        c[batch.cand_mask] = vecs[n_h:]
        return self.score_vectors(h, batch.hist_mask, c, batch.user, batch.cand_mask)

    def score_vectors(self, h, hist_mask, c, user_idx, cand_mask=None) -> torch.Tensor:
        self.user_module_calls += h.shape[0]
        self.scorer_calls += int(cand_mask.sum()) if cand_mask is not None else c.shape[0] * c.shape[1]
        if self.task == "matching":
            return self.scorer(self.user(h, hist_mask, user_idx), c)
        return self.scorer(self.user(h, hist_mask, user_idx, cand=c), c)

    @torch.no_grad()
    def encode_all(self, chunk: int = 1024) -> torch.Tensor:
        """Content vectors for every article row (one encode per row)."""
        rows = torch.arange(self.n_rows)
        return torch.cat([self.content(rows[i: i + chunk]) for i in range(0, self.n_rows, chunk)])

    def forward_cached(self, vectors: torch.Tensor, batch: Batch) -> torch.Tensor:
        h = vectors[batch.hist] * batch.hist_mask.unsqueeze(-1)
        c = vectors[batch.cand] * batch.cand_mask.unsqueeze(-1)
        return self.score_vectors(h, batch.hist_mask, c, batch.user, batch.cand_mask)


def score_batch(model: RecModel, batch: Batch) -> torch.Tensor:
    """One score per real candidate, in row-major order.

    Matching models return raw dot-product logits; CTR models return click
    probabilities.
    """
    logits = model(batch)
    if model.task == "ctr":
        logits = torch.sigmoid(logits)
    return logits[batch.cand_mask]


def _titles(data: DatasetBundle) -> torch.Tensor:
    width = max([len(a.title_tokens) for a in data.articles.values()] + [1])
    titles = torch.zeros(len(data.news_index), width, dtype=torch.long)
    for nid, row in data.news_index.items():
        art = data.articles.get(nid)
        if art is not None and art.title_tokens:
            titles[row, : len(art.title_tokens)] = torch.tensor(art.title_tokens)
    return titles


def table_tensor(table: EmbeddingTable, data: DatasetBundle) -> torch.Tensor:
    for nid in data.articles:
        if nid not in table:
            raise AssemblyError(f"cached table has no entry for news id {nid!r}")
    return torch.from_numpy(table.rows_for(data.news_index, len(data.news_index)))


def build_content_encoder(spec: VariantSpec, data: DatasetBundle, cached_table: EmbeddingTable | None = None,
                          plm: PLMConfig | PLMAdapter | None = None, cfg: dict | None = None) -> ContentEncoder:
    cfg = dict(cfg if cfg is not None else _component_config(spec)["content"])
    d = spec.embed_dim
    kind = spec.variant_kind
    if kind == "ID":
        return RandomLookupEncoder(len(data.news_index), d, std=cfg.get("init_std", 0.02))
    if kind in OLEO_KINDS:
        if cached_table is None:
            raise AssemblyError(f"{spec.name} needs a cached embedding table")
        return CachedLookupEncoder(table_tensor(cached_table, data), d)
    if kind == "PLM_NR":
        adapter = plm if isinstance(plm, PLMAdapter) else PLMAdapter(plm or PLMConfig())
        texts = [""] * len(data.news_index)
        for nid, row in data.news_index.items():
            if nid in data.articles:
                texts[row] = data.articles[nid].raw_title
        return PLMContentEncoder(adapter, texts, d, freeze_backbone=cfg.get("freeze_backbone", False))
    titles = _titles(data)
    vocab_size = len(data.vocab)
    enc = TEXT_ENCODER[spec.base_model]
    if enc == "cnn":
        return CNNEncoder(titles, vocab_size, d, **cfg)
    if enc == "self_attention":
        return SelfAttentionEncoder(titles, vocab_size, d, **cfg)
    return PoolingEncoder(titles, vocab_size, d)


def _build_user(spec: VariantSpec, data: DatasetBundle, cfg: dict, l_max: int):
    d = spec.embed_dim
    base = spec.base_model
    if base == "NAML":
        return AttentionUser(d, **cfg)
    if base == "LSTUR":
        return GRULongShortUser(d, len(data.user_index), **cfg)
    if base == "NRMS":
        return SelfAttentionUser(d, **cfg)
    if base == "BST":
        return TransformerSeqUser(d, l_max, **cfg)
    if base == "DCN":
        return PooledContextUser(d)
    return TargetAttentionUser(d, **cfg)


def _build_scorer(spec: VariantSpec, user, cfg: dict):
    base = spec.base_model
    if base in MATCHING_MODELS:
        return DotScorer()
    cls = {"BST": BstScorer, "DCN": CrossScorer, "DIN": DinScorer}[base]
    return cls(user.context_dim, spec.embed_dim, **cfg)


def assemble_variant(spec: VariantSpec, data: DatasetBundle, cached_table: EmbeddingTable | None = None,
                     plm: PLMConfig | PLMAdapter | None = None, seed: int | None = None,
                     l_max: int = DEFAULT_L_MAX) -> RecModel:
    if spec.is_oleo and cached_table is None:
        raise AssemblyError(f"{spec.name} needs a cached embedding table")
    if not spec.is_oleo and cached_table is not None:
        raise AssemblyError(f"{spec.name} is trained end to end and takes no cached table")
    if seed is not None:
        torch.manual_seed(seed)
    cfg = _component_config(spec)
    content = build_content_encoder(spec, data, cached_table, plm, cfg["content"])
    user = _build_user(spec, data, cfg["user"], l_max)
    scorer = _build_scorer(spec, user, cfg["scorer"])
    return RecModel(spec, content, user, scorer, data.news_index, data.user_index)
