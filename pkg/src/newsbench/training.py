"""End-to-end and only-encode-once (OLEO) training with encode accounting.

End to end, the content encoder sits in the gradient path and re-encodes
every history item and candidate of every sample. OLEO pretrains an encoder
once, caches one vector per article, and trains the remaining components
against the frozen cache.
"""
from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import (
    DEFAULT_K_NEG,
    DEFAULT_L_MAX,
    DatasetBundle,
    Impression,
    NewsArticle,
    make_ctr_samples,
    make_matching_samples,
)
from .green import EmissionLedger, EmissionRecord
from .metrics import MetricReport, RankedImpression, evaluate_ranking
from .zoo import (
    END_TO_END_KINDS,
    OLEO_KINDS,
    EmbeddingTable,
    PLMAdapter,
    PLMConfig,
    RecModel,
    VariantSpec,
    assemble_variant,
)

logger = logging.getLogger(__name__)

LEARNING_RATES = (1e-5, 2e-5, 5e-5, 1e-4, 2e-4, 5e-4)
BATCH_SIZES = (64, 128, 256, 500, 1000, 5000)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 10
    patience: int = 3
    seed: int = 0
    task: str | None = None  # defaults to the base model's task
    k_neg: int = DEFAULT_K_NEG
    l_max: int = DEFAULT_L_MAX
    eval_batch_size: int = 256
    weight_decay: float = 0.0
    plm_lr_scale: float = 1.0  # learning-rate multiplier for a fine-tuned PLM backbone

    def __post_init__(self):
        if self.learning_rate not in LEARNING_RATES:
            logger.warning("learning rate %g is outside the default grid %s", self.learning_rate, LEARNING_RATES)
        if self.batch_size not in BATCH_SIZES:
            logger.warning("batch size %d is outside the default grid %s", self.batch_size, BATCH_SIZES)
        if self.task not in (None, "matching", "ctr"):
            raise TrainingError(f"unknown task {self.task!r}")
        if self.max_epochs < 1 or self.patience < 1:
            raise TrainingError("max_epochs and patience must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def grid_configs(base: TrainConfig | None = None) -> list[TrainConfig]:
    """Every (learning rate, batch size) pair from the default grids."""
    base = base or TrainConfig()
    return [TrainConfig(**{**base.to_dict(), "learning_rate": lr, "batch_size": bs})
            for lr in LEARNING_RATES for bs in BATCH_SIZES]


@dataclass(frozen=True)
class EncodeStats:
    total_content_encodes: int
    distinct_articles: int
    per_article_mean: float
    user_module_calls: int = 0
    scorer_calls: int = 0


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val: dict
    total_content_encodes: int
    user_module_calls: int
    scorer_calls: int
    n_samples: int
    train_seconds: float
    eval_seconds: float


@dataclass
class RunTrace:
    spec: str
    paradigm: str
    epochs: list[EpochRecord] = field(default_factory=list)
    phase_seconds: dict = field(default_factory=dict)
    best_epoch: int | None = None
    checkpoint: str | None = None
    corpus_size: int = 0

    def add_phase(self, phase: str, seconds: float) -> None:
        self.phase_seconds[phase] = self.phase_seconds.get(phase, 0.0) + max(seconds, 0.0)

    @property
    def best(self) -> EpochRecord:
        return self.epochs[self.best_epoch - 1]

    def events(self) -> list[dict]:
        out = [{"event": "run", "spec": self.spec, "paradigm": self.paradigm, "corpus_size": self.corpus_size}]
        out += [{"event": "epoch", **asdict(e)} for e in self.epochs]
        out.append({"event": "end", "best_epoch": self.best_epoch, "checkpoint": self.checkpoint,
                    "phase_seconds": self.phase_seconds})
        return out

    def to_ndjson(self) -> str:
        return "".join(json.dumps(e) + "\n" for e in self.events())

    @classmethod
    def from_ndjson(cls, text: str) -> "RunTrace":
        events = [json.loads(line) for line in text.splitlines() if line.strip()]
        head, tail = events[0], events[-1]
        trace = cls(head["spec"], head["paradigm"], corpus_size=head["corpus_size"])
        for e in events[1:-1]:
            e = dict(e)
            e.pop("event")
            trace.epochs.append(EpochRecord(**e))
        trace.best_epoch = tail["best_epoch"]
        trace.checkpoint = tail["checkpoint"]
        trace.phase_seconds = tail["phase_seconds"]
        return trace


def count_encodes(epoch: EpochRecord, corpus_size: int) -> EncodeStats:
    if corpus_size <= 0:
        raise TrainingError("corpus_size must be positive")
    total = epoch.total_content_encodes
    return EncodeStats(total, corpus_size, total / corpus_size, epoch.user_module_calls, epoch.scorer_calls)


# -- evaluation ----------------------------------------------------------------


@torch.no_grad()
def predict(model: RecModel, impressions: Sequence[Impression], batch_size: int = 256,
            l_max: int = DEFAULT_L_MAX) -> list[RankedImpression]:
    """Score every candidate of every impression. Each article is encoded once up front."""
    was_training = model.training
    model.eval()
    vectors = model.encode_all()
    out = []
    for i in range(0, len(impressions), batch_size):
        chunk = impressions[i: i + batch_size]
        batch = model.make_batch([imp.history for imp in chunk], [[n for n, _ in imp.candidates] for imp in chunk],
                                 [imp.user_id for imp in chunk], l_max=l_max)
        scores = model.forward_cached(vectors, batch)
        for j, imp in enumerate(chunk):
            k = len(imp.candidates)
            out.append(RankedImpression(imp.impression_id, scores[j, :k].tolist(), [lab for _, lab in imp.candidates]))
    model.train(was_training)
    return out


def evaluate_model(model: RecModel, impressions: Sequence[Impression], batch_size: int = 256,
                   l_max: int = DEFAULT_L_MAX) -> MetricReport:
    return evaluate_ranking(predict(model, impressions, batch_size, l_max))


# -- the shared loop -----------------------------------------------------------------


def matching_loss(logits: torch.Tensor) -> torch.Tensor:
    """Softmax cross-entropy with the positive in column 0."""
    return F.cross_entropy(logits, torch.zeros(logits.shape[0], dtype=torch.long))


def ctr_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(logits, labels)


def _epoch_batches(model: RecModel, data: DatasetBundle, cfg: TrainConfig, task: str, epoch: int):
    rng = np.random.default_rng([cfg.seed, epoch])
    if task == "matching":
        samples = make_matching_samples(data.train, cfg.k_neg, cfg.l_max, seed=cfg.seed * 100_003 + epoch)
    else:
        samples = make_ctr_samples(data.train, cfg.l_max)
    order = rng.permutation(len(samples))
    for i in range(0, len(order), cfg.batch_size):
        chunk = [samples[j] for j in order[i: i + cfg.batch_size]]
        if task == "matching":
            batch = model.make_batch([s.history for s in chunk], [s.group for s in chunk],
                                     [s.user_id for s in chunk], l_max=cfg.l_max)
        else:
            batch = model.make_batch([s.history for s in chunk], [[s.candidate] for s in chunk],
                                     [s.user_id for s in chunk], labels=[[s.label] for s in chunk], l_max=cfg.l_max)
        yield len(chunk), batch


def _param_groups(model: RecModel, cfg: TrainConfig) -> list[dict]:
    adapter = getattr(model.content, "adapter", None)
    plm_ids = {id(p) for p in adapter.parameters()} if adapter is not None else set()
    plm = [p for p in model.parameters() if p.requires_grad and id(p) in plm_ids]
    rest = [p for p in model.parameters() if p.requires_grad and id(p) not in plm_ids]
    groups = [{"params": rest}]
    if plm:
        groups.append({"params": plm, "lr": cfg.learning_rate * cfg.plm_lr_scale})
    return groups


def _fit(model: RecModel, data: DatasetBundle, cfg: TrainConfig, trace: RunTrace,
         ledger: EmissionLedger | None, checkpoint_dir=None, config_hash: str = "") -> RecModel:
    task = cfg.task or model.task
    if not data.val:
        raise TrainingError("validation split is empty")
    torch.manual_seed(cfg.seed)
    opt = torch.optim.Adam(_param_groups(model, cfg), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    best_auc, best_state, stale = -1.0, None, 0

    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        enc0, user0, scorer0 = model.content.invocation_counter, model.user_module_calls, model.scorer_calls
        losses, n_samples = [], 0
        t0 = time.perf_counter()
        for n, batch in _epoch_batches(model, data, cfg, task, epoch):
            logits = model(batch)
            loss = matching_loss(logits) if task == "matching" else ctr_loss(logits, batch.labels)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item() * n)
            n_samples += n
        train_s = time.perf_counter() - t0
        encodes = model.content.invocation_counter - enc0
        user_calls, scorer_calls = model.user_module_calls - user0, model.scorer_calls - scorer0

        t1 = time.perf_counter()
        report = evaluate_model(model, data.val, cfg.eval_batch_size, cfg.l_max)
        eval_s = time.perf_counter() - t1
        if ledger is not None:
            ledger.append(EmissionRecord.from_duration("train", train_s / 3600, ledger.profile, ledger.intensity))
            ledger.append(EmissionRecord.from_duration("evaluate", eval_s / 3600, ledger.profile, ledger.intensity))
        trace.add_phase("train", train_s)
        trace.add_phase("evaluate", eval_s)
        trace.epochs.append(EpochRecord(epoch, sum(losses) / max(n_samples, 1), report.as_dict(), encodes,
                                        user_calls, scorer_calls, n_samples, train_s, eval_s))
        logger.info("%s epoch %d loss %.4f val auc %.2f", model.spec.name, epoch, trace.epochs[-1].loss, report.auc)

        if report.auc > best_auc:
            best_auc, stale = report.auc, 0
            trace.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    model.load_state_dict(best_state)
    model.eval()
    if checkpoint_dir is not None:
        trace.checkpoint = str(save_checkpoint(model, checkpoint_dir, config_hash, trace.best_epoch,
                                               trace.best.val))
    return model


def save_checkpoint(model: RecModel, directory, config_hash: str, epoch: int, metrics: Mapping) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{model.spec.name}-{config_hash[:12] or 'run'}.pt"
    torch.save({"config_hash": config_hash, "epoch": epoch, "spec": model.spec.to_dict(),
                "state_dict": model.state_dict(), "metrics": dict(metrics)}, path)
    return path


def load_checkpoint(path) -> dict:
    return torch.load(path, map_location="cpu", weights_only=False)


def train_end_to_end(spec: VariantSpec, data: DatasetBundle, cfg: TrainConfig, plm: PLMConfig | None = None,
                     ledger: EmissionLedger | None = None, checkpoint_dir=None,
                     config_hash: str = "") -> tuple[RecModel, RunTrace]:
    if spec.variant_kind not in END_TO_END_KINDS:
        raise TrainingError(f"{spec.name} uses cached embeddings; train it with train_oleo")
    model = assemble_variant(spec, data, plm=plm, seed=cfg.seed, l_max=cfg.l_max)
    trace = RunTrace(spec.name, "end_to_end", corpus_size=len(data.articles))
    return _fit(model, data, cfg, trace, ledger, checkpoint_dir, config_hash), trace


def train_oleo(spec: VariantSpec, table: EmbeddingTable, data: DatasetBundle, cfg: TrainConfig,
               ledger: EmissionLedger | None = None, checkpoint_dir=None,
               config_hash: str = "") -> tuple[RecModel, RunTrace]:
    if spec.variant_kind not in OLEO_KINDS:
        raise TrainingError(f"{spec.name} is trained end to end; use train_end_to_end")
    model = assemble_variant(spec, data, cached_table=table, seed=cfg.seed, l_max=cfg.l_max)
    trace = RunTrace(spec.name, "oleo", corpus_size=len(data.articles))
    return _fit(model, data, cfg, trace, ledger, checkpoint_dir, config_hash), trace


# -- content-encoder pretraining and the encode-once step ------------------------------


@dataclass(frozen=True)
class PretrainConfig:
    plm: PLMConfig = PLMConfig(d_plm=128)
    epochs: int = 2
    batch_size: int = 32
    learning_rate: float = 1e-3
    mask_prob: float = 0.15
    objective: str = "mlm_contrastive"
    contrastive_weight: float = 1.0
    temperature: float = 0.1
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["plm"] = self.plm.to_dict()
        return d


class PretrainModel(nn.Module):
    def __init__(self, cfg: PretrainConfig, n_categories: int):
        super().__init__()
        self.adapter = PLMAdapter(cfg.plm)
        d = cfg.plm.d_plm
        self.mlm_head = nn.Linear(d, self.adapter.backbone.vocab_size)
        self.title_head = nn.Linear(d, d)
        self.categories = nn.Embedding(max(n_categories, 1), d)


def _mask_tokens(ids, mask, prob, mask_id, gen):
    candidates = mask.clone()
    candidates[:, 0] = False  # never the pooled position
    chosen = (torch.rand(ids.shape, generator=gen) < prob) & candidates
    # guarantee at least one masked token per row that has any
    none = ~chosen.any(1) & candidates.any(1)
    if none.any():
        first = candidates.float().argmax(1)
        chosen[none, first[none]] = True
    return ids.masked_fill(chosen, mask_id), chosen


def mlm_loss(model: PretrainModel, ids, mask, categories, cfg: PretrainConfig, gen) -> torch.Tensor:
    masked, chosen = _mask_tokens(ids, mask, cfg.mask_prob, model.adapter.backbone.mask_id, gen)
    h = model.adapter.backbone(masked, mask, return_all=True)
    if not chosen.any():
        return h.sum() * 0.0
    return F.cross_entropy(model.mlm_head(h[chosen]), ids[chosen])


def contrastive_loss(model: PretrainModel, ids, mask, categories, cfg: PretrainConfig, gen) -> torch.Tensor:
    """InfoNCE between pooled title vectors and all category embeddings."""
    z = F.normalize(model.title_head(model.adapter.backbone(ids, mask)), dim=-1)
    c = F.normalize(model.categories.weight, dim=-1)
    return F.cross_entropy(z @ c.T / cfg.temperature, categories)


def mlm_contrastive_loss(model, ids, mask, categories, cfg, gen) -> torch.Tensor:
    return mlm_loss(model, ids, mask, categories, cfg, gen) + cfg.contrastive_weight * contrastive_loss(
        model, ids, mask, categories, cfg, gen)


PRETRAIN_OBJECTIVES: dict[str, Callable] = {
    "mlm": mlm_loss,
    "contrastive": contrastive_loss,
    "mlm_contrastive": mlm_contrastive_loss,
}


class PretrainedEncoder:
    """A finalized content encoder: parameters frozen, encoding deterministic."""

    provenance = "pretrained_encoder"

    def __init__(self, adapter: PLMAdapter, losses: list[float], config: PretrainConfig):
        self.adapter = adapter.eval()
        for p in self.adapter.parameters():
            p.requires_grad_(False)
        self.losses = losses
        self.config = config

    @property
    def invocation_counter(self) -> int:
        return self.adapter.invocation_counter

    @property
    def out_dim(self) -> int:
        return self.adapter.out_dim

    def encode_articles(self, articles: Sequence[NewsArticle]) -> np.ndarray:
        return self.adapter.encode_articles(articles)

    def encode(self, article: NewsArticle) -> np.ndarray:
        return self.encode_articles([article])[0]


def pretrain_content_encoder(articles: Sequence[NewsArticle], cfg: PretrainConfig | None = None,
                             ledger: EmissionLedger | None = None,
                             objective: Callable | None = None) -> PretrainedEncoder:
    """Self-supervised pretraining on article titles.

    `objective` overrides `cfg.objective`; it is called as
    objective(model, ids, mask, category_ids, cfg, generator) -> loss.
    """
    cfg = cfg or PretrainConfig()
    articles = list(articles)
    if not articles:
        raise TrainingError("empty corpus")
    if len(articles) < cfg.batch_size:
        raise TrainingError(f"corpus of {len(articles)} articles is smaller than one batch ({cfg.batch_size})")
    loss_fn = objective or PRETRAIN_OBJECTIVES[cfg.objective]

    def work():
        torch.manual_seed(cfg.seed)
        gen = torch.Generator().manual_seed(cfg.seed)
        cats = sorted({a.category for a in articles})
        cat_idx = torch.tensor([cats.index(a.category) for a in articles])
        model = PretrainModel(cfg, len(cats))
        ids, mask = model.adapter.tokenize([a.raw_title for a in articles])
        opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
        losses = []
        for epoch in range(cfg.epochs):
            order = torch.randperm(len(articles), generator=gen)
            total = 0.0
            for i in range(0, len(order), cfg.batch_size):
                idx = order[i: i + cfg.batch_size]
                loss = loss_fn(model, ids[idx], mask[idx], cat_idx[idx], cfg, gen)
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            losses.append(total / len(articles))
            logger.info("pretrain epoch %d loss %.4f", epoch + 1, losses[-1])
        model.adapter.invocation_counter = 0
        return PretrainedEncoder(model.adapter, losses, cfg)

    if ledger is None:
        return work()
    return ledger.track("pretrain", work)


def save_pretrained(encoder: PretrainedEncoder, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"config": encoder.config.to_dict(), "losses": encoder.losses,
                "state_dict": encoder.adapter.state_dict()}, path)
    return path


def load_pretrained(path) -> PretrainedEncoder:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    raw = dict(blob["config"])
    cfg = PretrainConfig(**{**raw, "plm": PLMConfig(**raw["plm"])})
    adapter = PLMAdapter(cfg.plm)
    adapter.load_state_dict(blob["state_dict"])
    return PretrainedEncoder(adapter, list(blob["losses"]), cfg)


def encode_once(encoder, articles: Sequence[NewsArticle], ledger: EmissionLedger | None = None,
                provenance: str | None = None) -> EmbeddingTable:
    """Encode each article exactly once into an immutable lookup table."""
    ids = [a.news_id for a in articles]
    seen = set()
    for nid in ids:
        if nid in seen:
            raise TrainingError(f"duplicate news id {nid!r}; deduplicate the corpus first")
        seen.add(nid)
    prov = provenance or getattr(encoder, "provenance", "plm_direct")

    def work():
        return EmbeddingTable(ids, encoder.encode_articles(list(articles)), prov)

    if ledger is None:
        return work()
    return ledger.track("encode_once", work)


def build_plm_table(articles: Sequence[NewsArticle], plm: PLMConfig | None = None,
                    ledger: EmissionLedger | None = None) -> EmbeddingTable:
    """Cache raw PLM vectors, no task pretraining."""
    return encode_once(PLMAdapter(plm or PLMConfig()), articles, ledger, provenance="plm_direct")


# -- multi-seed runs ---------------------------------------------------------------------


@dataclass
class SeedResult:
    seed: int
    test: MetricReport
    val_auc: float
    trace: RunTrace
    emissions: list[EmissionRecord]


@dataclass
class AggregatedResult:
    spec: VariantSpec
    per_seed: list[SeedResult]
    mean: dict
    std: dict


class AggregateError(RuntimeError):
    def __init__(self, failed: Mapping[int, BaseException]):
        self.failed = dict(failed)
        super().__init__(f"runs failed for seeds {sorted(self.failed)}: "
                         + "; ".join(f"{s}: {e}" for s, e in self.failed.items()))


METRIC_KEYS = ("auc", "mrr", "ndcg5", "val_auc", "co2e_train", "co2e_total")


def train_variant(spec: VariantSpec, data: DatasetBundle, cfg: TrainConfig, table: EmbeddingTable | None = None,
                  plm: PLMConfig | None = None, ledger: EmissionLedger | None = None, checkpoint_dir=None,
                  config_hash: str = "") -> tuple[RecModel, RunTrace]:
    if spec.is_oleo:
        if table is None:
            raise TrainingError(f"{spec.name} needs a cached table")
        return train_oleo(spec, table, data, cfg, ledger, checkpoint_dir, config_hash)
    return train_end_to_end(spec, data, cfg, plm, ledger, checkpoint_dir, config_hash)


def run_seeds(spec: VariantSpec, data: DatasetBundle, cfg: TrainConfig, seeds: Sequence[int] = (0, 1, 2, 3, 4),
              table: EmbeddingTable | None = None, plm: PLMConfig | None = None,
              ledger_factory: Callable[[], EmissionLedger] = EmissionLedger, checkpoint_dir=None,
              config_hash: str = "") -> AggregatedResult:
    if not seeds:
        raise TrainingError("at least one seed is required")
    results, failed = [], {}
    for seed in seeds:
        ledger = ledger_factory()
        try:
            seed_cfg = TrainConfig(**{**cfg.to_dict(), "seed": seed})
            model, trace = train_variant(spec, data, seed_cfg, table, plm, ledger, checkpoint_dir,
                                         f"{config_hash}-s{seed}" if config_hash else "")
            report = ledger.track("evaluate", lambda: evaluate_model(model, data.test, cfg.eval_batch_size,
                                                                      cfg.l_max))
        except Exception as e:  # noqa: BLE001 - collected and re-raised as AggregateError
            logger.exception("%s seed %d failed", spec.name, seed)
            failed[seed] = e
            continue
        results.append(SeedResult(seed, report, trace.best.val["auc"], trace, list(ledger.records)))
    if failed:
        raise AggregateError(failed)
    return aggregate(spec, results)


def seed_metrics(r: SeedResult) -> dict:
    return {"auc": r.test.auc, "mrr": r.test.mrr, "ndcg5": r.test.ndcg5, "val_auc": r.val_auc,
            "co2e_train": sum(e.co2e_grams for e in r.emissions if e.phase == "train"),
            "co2e_total": sum(e.co2e_grams for e in r.emissions)}


def aggregate(spec: VariantSpec, results: list[SeedResult]) -> AggregatedResult:
    rows = [seed_metrics(r) for r in results]
    mean = {k: float(np.mean([row[k] for row in rows])) for k in METRIC_KEYS}
    std = {k: float(np.std([row[k] for row in rows])) for k in METRIC_KEYS}
    return AggregatedResult(spec, results, mean, std)
