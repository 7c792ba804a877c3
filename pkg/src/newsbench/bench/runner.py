"""Grid execution: prepare data once, build cached tables lazily, persist each result as it lands."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from ..data import DatasetBundle, dataset_stats, load_mind, merge_articles, read_behaviors_file, read_news_file
from ..green import EmissionLedger, EmissionRecord, get_intensity, get_profile
from ..synthetic import make_synthetic_bundle
from ..training import (
    AggregatedResult,
    build_plm_table,
    count_encodes,
    encode_once,
    pretrain_content_encoder,
    run_seeds,
)
from ..zoo import EmbeddingTable, VariantSpec
from .config import ExperimentConfig
from .reference import EXPECTED_STATS
from .store import RunResult, persist, read_store

logger = logging.getLogger(__name__)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def prepare_data(cfg: ExperimentConfig) -> DatasetBundle:
    ds = cfg.dataset
    if ds.synthetic is not None:
        kw = dict(ds.synthetic)
        return make_synthetic_bundle(seed=kw.pop("seed", 0), split_seed=ds.split_seed, **kw)
    return load_mind(ds.train_dir, ds.dev_dir, ds.split_seed, ds.split_method, ds.min_freq, ds.max_title_len,
                     ds.name)


class TableCache:
    """Builds each OLEO table at most once per experiment and remembers what it cost."""

    def __init__(self, cfg: ExperimentConfig, data: DatasetBundle):
        self.cfg, self.data = cfg, data
        self._tables: dict[str, tuple[EmbeddingTable, list[EmissionRecord]]] = {}
        self.builds = 0

    def _ledger(self) -> EmissionLedger:
        return EmissionLedger(get_profile(self.cfg.hardware_profile), get_intensity(self.cfg.carbon_intensity))

    def preload(self, kind: str, table: EmbeddingTable) -> None:
        self._tables[kind] = (table, [])

    def get(self, kind: str) -> tuple[EmbeddingTable, list[EmissionRecord]]:
        if kind not in self._tables:
            ledger = self._ledger()
            articles = self.data.article_list()
            if kind == "BERT_OLEO":
                table = build_plm_table(articles, self.cfg.plm, ledger)
            elif kind == "PREC":
                encoder = pretrain_content_encoder(articles, self.cfg.pretrain, ledger)
                table = encode_once(encoder, articles, ledger)
            else:
                raise KeyError(kind)
            self.builds += 1
            self._tables[kind] = (table, list(ledger.records))
        return self._tables[kind]


def to_run_result(agg: AggregatedResult, cfg: ExperimentConfig, h: str, dataset: str,
                  shared: list[EmissionRecord], started: str) -> RunResult:
    per_seed = []
    for r in agg.per_seed:
        stats = count_encodes(r.trace.best, r.trace.corpus_size)
        per_seed.append({"seed": r.seed, "auc": r.test.auc, "mrr": r.test.mrr, "ndcg5": r.test.ndcg5,
                         "val_auc": r.val_auc, "best_epoch": r.trace.best_epoch,
                         "emissions": [e.to_dict() for e in r.emissions],
                         "encode_stats": asdict(stats)})
    return RunResult(agg.spec, dataset, h, per_seed, list(shared), cfg.train.to_dict(), started, _now())


@dataclass
class ExperimentOutcome:
    results: list[RunResult] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failures: dict[str, str] = field(default_factory=dict)
    tables_built: int = 0

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        lines = [f"{len(self.results)} run, {len(self.skipped)} already in store, {len(self.failures)} failed"]
        lines += [f"  FAILED {name}: {err}" for name, err in self.failures.items()]
        return "\n".join(lines)


def run_experiment(cfg: ExperimentConfig, store_path=None, data: DatasetBundle | None = None,
                   on_result: Callable[[RunResult], None] | None = None,
                   checkpoint_dir=None, tables: dict[str, EmbeddingTable] | None = None) -> ExperimentOutcome:
    """Run every resolved spec not already in the store.

    A failing spec is recorded and the grid moves on. Each result is
    persisted before `on_result` sees it, so an interruption loses at most
    the spec in flight. `tables` supplies prebuilt OLEO tables by variant kind.
    """
    store_path = Path(store_path or cfg.store_path)
    done = read_store(store_path)
    outcome = ExperimentOutcome()
    pending: list[tuple[VariantSpec, str]] = []
    for spec in cfg.variants:
        h = cfg.spec_hash(spec)
        if h in done:
            outcome.skipped.append(spec.name)
        else:
            pending.append((spec, h))
    if not pending:
        return outcome

    data = data or prepare_data(cfg)
    cache = TableCache(cfg, data)
    for kind, table in (tables or {}).items():
        cache.preload(kind, table)
    profile, intensity = get_profile(cfg.hardware_profile), get_intensity(cfg.carbon_intensity)
    for spec, h in pending:
        started = _now()
        try:
            table, shared = cache.get(spec.variant_kind) if spec.is_oleo else (None, [])
            agg = run_seeds(spec, data, cfg.train, cfg.seeds, table=table, plm=cfg.plm,
                            ledger_factory=lambda: EmissionLedger(profile, intensity),
                            checkpoint_dir=checkpoint_dir, config_hash=h)
            result = to_run_result(agg, cfg, h, data.name, shared, started)
        except Exception as e:  # noqa: BLE001 - per-spec failures must not stop the grid
            logger.exception("%s failed", spec.name)
            outcome.failures[spec.name] = f"{type(e).__name__}: {e}"
            continue
        persist(result, store_path)
        outcome.results.append(result)
        logger.info("%s auc %.2f", spec.name, result.mean["auc"])
        if on_result is not None:
            on_result(result)
    outcome.tables_built = cache.builds
    return outcome


# -- dataset verification --------------------------------------------------------------

@dataclass
class VerifyReport:
    stats: object
    dataset: str | None
    expected: object | None
    mismatches: dict

    @property
    def passed(self) -> bool | None:
        """None when the dataset is not one with known statistics."""
        if self.expected is None:
            return None
        return not self.mismatches

    def format(self) -> str:
        lines = [self.stats.format()]
        if self.expected is None:
            lines.append("dataset not identified as MIND-small or MIND-large; comparison skipped")
        elif self.passed:
            lines.append(f"matches the published {self.dataset} statistics: PASS")
        else:
            lines.append(f"differs from the published {self.dataset} statistics: FAIL")
            lines += [f"  {k}: got {got}, expected {want}" for k, (got, want) in self.mismatches.items()]
        return "\n".join(lines)


def identify_dataset(train_dir, dev_dir, n_news: int, name: str | None = None) -> str | None:
    if name in EXPECTED_STATS:
        return name
    joined = f"{train_dir} {dev_dir}".lower().replace("-", "").replace("_", "")
    for known in EXPECTED_STATS:
        if known.lower().replace("-", "") in joined:
            return known
    for known, stats in EXPECTED_STATS.items():
        if stats.n_news == n_news:
            return known
    return None


def verify_dataset(train_dir, dev_dir, name: str | None = None, echo: Callable[[str], None] | None = print
                   ) -> VerifyReport:
    """Statistics over the union of the train and dev releases, checked against known values."""
    try:
        articles = merge_articles(read_news_file(Path(train_dir) / "news.tsv"),
                                  read_news_file(Path(dev_dir) / "news.tsv"))
        impressions = (read_behaviors_file(Path(train_dir) / "behaviors.tsv")
                       + read_behaviors_file(Path(dev_dir) / "behaviors.tsv"))
    except OSError as e:
        raise OSError(f"cannot read dataset files: {e}") from e
    stats = dataset_stats(len(articles), impressions)
    known = identify_dataset(train_dir, dev_dir, stats.n_news, name)
    expected = EXPECTED_STATS.get(known) if known else None
    mismatches = {}
    if expected is not None:
        for key in ("n_news", "n_users", "n_interactions", "n_samples"):
            if getattr(stats, key) != getattr(expected, key):
                mismatches[key] = (getattr(stats, key), getattr(expected, key))
        if round(stats.density * 100, 4) != round(expected.density * 100, 4):
            mismatches["density"] = (stats.density, expected.density)
    report = VerifyReport(stats, known, expected, mismatches)
    if echo is not None:
        echo(report.format())
    return report
