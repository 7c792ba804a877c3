"""Impression-grouped ranking metrics (AUC, MRR, nDCG@k).

Every metric is computed per impression and averaged uniformly over the
impressions it can score, then reported on a 0-100 scale.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from os import PathLike
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

logger = logging.getLogger(__name__)


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class RankedImpression:
    impression_id: str
    scores: Sequence[float]
    labels: Sequence[int]

    def __post_init__(self):
        if len(self.scores) != len(self.labels):
            raise MetricError(
                f"impression {self.impression_id}: {len(self.scores)} scores vs {len(self.labels)} labels"
            )


@dataclass(frozen=True)
class MetricReport:
    auc: float
    mrr: float
    ndcg5: float
    n_impressions_scored: int
    n_impressions_skipped: int

    def as_dict(self) -> dict:
        return {
            "auc": self.auc,
            "mrr": self.mrr,
            "ndcg5": self.ndcg5,
            "n_impressions_scored": self.n_impressions_scored,
            "n_impressions_skipped": self.n_impressions_skipped,
        }


def _arrays(imp: RankedImpression) -> tuple[np.ndarray, np.ndarray]:
    return np.asarray(imp.scores, dtype=np.float64), np.asarray(imp.labels, dtype=np.int64)


def _rank_order(scores: np.ndarray) -> np.ndarray:
    # descending by score, ties broken by original index
    return np.argsort(-scores, kind="stable")


def impression_auc(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Rank-sum AUC for one impression; ties get half credit. None if one class is missing."""
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def impression_mrr(scores: np.ndarray, labels: np.ndarray) -> float | None:
    n_pos = int(labels.sum())
    if n_pos == 0:
        return None
    ordered = labels[_rank_order(scores)]
    ranks = np.nonzero(ordered)[0] + 1
    return float(np.sum(1.0 / ranks) / n_pos)


def impression_ndcg(scores: np.ndarray, labels: np.ndarray, k: int = 5) -> float | None:
    if int(labels.sum()) == 0:
        return None
    discounts = np.log2(np.arange(2, k + 2))
    top = labels[_rank_order(scores)][:k]
    dcg = np.sum((2.0 ** top - 1) / discounts[: len(top)])
    ideal = np.sort(labels)[::-1][:k]
    idcg = np.sum((2.0 ** ideal - 1) / discounts[: len(ideal)])
    return float(dcg / idcg)


def _grouped(impressions: Iterable[RankedImpression], fn, name: str) -> tuple[float, int, int]:
    values = []
    skipped = 0
    for imp in impressions:
        v = fn(*_arrays(imp))
        if v is None:
            skipped += 1
        else:
            values.append(v)
    if not values:
        raise MetricError(f"no impression can be scored for {name}")
    if skipped:
        logger.debug("%s: skipped %d impressions", name, skipped)
    return 100.0 * float(np.mean(values)), len(values), skipped


def grouped_auc(impressions: Sequence[RankedImpression]) -> float:
    return _grouped(impressions, impression_auc, "auc")[0]


def mrr(impressions: Sequence[RankedImpression]) -> float:
    return _grouped(impressions, impression_mrr, "mrr")[0]


def ndcg_at_k(impressions: Sequence[RankedImpression], k: int = 5) -> float:
    return _grouped(impressions, lambda s, l: impression_ndcg(s, l, k), f"ndcg@{k}")[0]


def evaluate_ranking(impressions: Sequence[RankedImpression]) -> MetricReport:
    """All three metrics in one pass.

    The scored/skipped counts follow AUC, the strictest of the three
    (it needs both a click and a non-click).
    """
    if not impressions:
        raise MetricError("empty impression list")
    aucs, mrrs, ndcgs = [], [], []
    skipped = 0
    for imp in impressions:
        s, l = _arrays(imp)
        a = impression_auc(s, l)
        if a is None:
            skipped += 1
        else:
            aucs.append(a)
        m = impression_mrr(s, l)
        if m is not None:
            mrrs.append(m)
            ndcgs.append(impression_ndcg(s, l, 5))
    if not aucs:
        raise MetricError("no impression has both a positive and a negative candidate")
    return MetricReport(
        auc=100.0 * float(np.mean(aucs)),
        mrr=100.0 * float(np.mean(mrrs)),
        ndcg5=100.0 * float(np.mean(ndcgs)),
        n_impressions_scored=len(aucs),
        n_impressions_skipped=skipped,
    )


def read_predictions(path: str | PathLike) -> dict[str, list[float]]:
    """Read `impression_id<TAB>s1 s2 ...` lines (a single space also separates the id)."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            imp_id, _, rest = line.replace("\t", " ", 1).partition(" ")
            try:
                out[imp_id] = [float(x) for x in rest.split()]
            except ValueError as e:
                raise MetricError(f"{path}:{lineno}: bad score list") from e
    return out


def score_prediction_file(predictions_path, behaviors_path) -> MetricReport:
    """Score an external system's predictions against a MIND behaviors file."""
    from .data import parse_behaviors

    preds = read_predictions(predictions_path)
    with open(behaviors_path, encoding="utf-8") as f:
        impressions = parse_behaviors(f)
    ranked = []
    for imp in impressions:
        if imp.impression_id not in preds:
            raise MetricError(f"no prediction for impression {imp.impression_id}")
        ranked.append(
            RankedImpression(imp.impression_id, preds[imp.impression_id], [lab for _, lab in imp.candidates])
        )
    return evaluate_ranking(ranked)
