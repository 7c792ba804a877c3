"""Published reference numbers for MIND-small and MIND-large.

`REFERENCE_TABLE` holds the printed per-variant results (AUC, MRR, nDCG@5,
CO2E in grams, ApC) and the printed ApC improvement of PREC over PLM_NR.
Injecting it into a results store lets the leaderboard and the ApC
arithmetic be checked without training anything.
"""
from __future__ import annotations

from ..data import StatsReport
from ..green import EmissionRecord, get_intensity, get_profile
from ..zoo import BASE_MODELS, VariantSpec
from .config import config_hash
from .store import RunResult

DATASETS = ("MIND-small", "MIND-large")

# (dataset, kind) -> {metric: values in BASE_MODELS order}
_ROWS = {
    ("MIND-small", "ID"): dict(
        auc=[50.13, 51.04, 54.84, 50.09, 53.92, 55.95], mrr=[23.01, 22.90, 26.53, 22.13, 25.18, 25.88],
        ndcg5=[22.35, 22.31, 26.34, 21.59, 24.43, 25.95], co2e=[19, 20, 28, 38, 60, 84],
        apc=[0.68, 5.20, 17.29, 0.24, 6.53, 7.08]),
    ("MIND-small", "TEXT"): dict(
        auc=[60.14, 61.27, 62.21, 60.51, 62.63, 62.90], mrr=[28.93, 29.64, 30.19, 28.59, 29.73, 30.06],
        ndcg5=[29.33, 30.28, 31.10, 29.09, 30.52, 30.65], co2e=[42, 58, 62, 53, 63, 90],
        apc=[24.14, 19.43, 19.69, 19.83, 20.05, 14.33]),
    ("MIND-small", "PLM_NR"): dict(
        auc=[62.06, 63.64, 62.53, 64.40, 63.32, 63.26], mrr=[31.66, 31.74, 30.74, 32.21, 32.00, 31.83],
        ndcg5=[32.25, 32.72, 31.31, 33.34, 32.58, 32.40], co2e=[178, 202, 252, 505, 1752, 1839],
        apc=[6.78, 6.75, 4.97, 2.85, 0.76, 0.72]),
    ("MIND-small", "BERT_OLEO"): dict(
        auc=[60.62, 61.09, 60.94, 60.81, 62.65, 62.40], mrr=[29.31, 29.26, 29.31, 29.04, 30.92, 30.75],
        ndcg5=[29.71, 29.60, 29.65, 29.38, 31.37, 32.44], co2e=[22, 23, 33, 38, 62, 86],
        apc=[48.27, 48.22, 33.15, 28.45, 20.40, 14.41]),
    ("MIND-small", "PREC"): dict(
        auc=[62.95, 62.16, 62.95, 62.43, 64.57, 63.12], mrr=[31.26, 31.00, 31.18, 30.42, 32.60, 31.28],
        ndcg5=[32.01, 31.79, 32.10, 30.94, 33.48, 32.01], co2e=[22, 23, 33, 38, 62, 86],
        apc=[58.86, 52.87, 39.24, 32.71, 23.50, 15.25]),
    ("MIND-large", "ID"): dict(
        auc=[52.98, 54.98, 57.59, 52.10, 57.41, 57.36], mrr=[24.52, 25.99, 27.41, 24.81, 26.76, 26.70],
        ndcg5=[24.12, 25.64, 27.05, 24.63, 26.90, 26.84], co2e=[294, 353, 471, 555, 926, 1294],
        apc=[1.01, 1.41, 1.61, 0.38, 0.80, 0.57]),
    ("MIND-large", "TEXT"): dict(
        auc=[63.03, 63.89, 64.12, 63.28, 63.88, 64.02], mrr=[30.40, 31.24, 31.77, 30.73, 31.65, 31.98],
        ndcg5=[31.82, 32.15, 32.64, 31.95, 32.40, 33.00], co2e=[648, 892, 1010, 1212, 972, 1386],
        apc=[2.01, 1.56, 1.40, 1.09, 1.43, 1.01]),
    ("MIND-large", "PLM_NR"): dict(
        auc=[65.19, 65.73, 65.57, 66.03, 65.42, 65.31], mrr=[32.74, 33.18, 32.94, 33.40, 32.85, 32.68],
        ndcg5=[33.77, 34.26, 34.13, 34.70, 33.99, 33.70], co2e=[2527, 3032, 4043, 8086, 27036, 28329],
        apc=[0.60, 0.52, 0.39, 0.20, 0.06, 0.05]),
    ("MIND-large", "BERT_OLEO"): dict(
        auc=[63.02, 63.62, 63.40, 62.94, 64.29, 63.75], mrr=[31.23, 31.59, 31.38, 30.56, 32.60, 31.58],
        ndcg5=[31.79, 32.30, 32.16, 31.83, 33.63, 32.43], co2e=[353, 404, 505, 640, 956, 956],
        apc=[3.69, 3.37, 2.65, 2.02, 1.49, 1.44]),
    ("MIND-large", "PREC"): dict(
        auc=[64.78, 64.88, 64.34, 65.33, 65.44, 64.53], mrr=[32.64, 32.94, 32.93, 33.29, 33.04, 32.72],
        ndcg5=[33.66, 34.00, 33.95, 34.35, 34.03, 33.58], co2e=[353, 404, 505, 640, 956, 956],
        apc=[4.19, 3.68, 2.84, 2.40, 1.61, 1.52]),
}

# (dataset, base model) -> printed ApC improvement of PREC over PLM_NR, percent
APC_IMPROVEMENT = {
    **dict(zip((("MIND-small", b) for b in BASE_MODELS), (768, 683, 690, 1048, 2992, 2018))),
    **dict(zip((("MIND-large", b) for b in BASE_MODELS), (598, 608, 628, 1100, 2583, 2940))),
}


def reference_rows() -> list[dict]:
    """One dict per (dataset, base model, variant kind): 60 rows."""
    rows = []
    for (dataset, kind), cols in _ROWS.items():
        for i, base in enumerate(BASE_MODELS):
            rows.append({"dataset": dataset, "base_model": base, "variant_kind": kind,
                         **{k: v[i] for k, v in cols.items()}})
    return rows


def reconciled_co2e(auc: float, co2e: float, apc: float) -> float:
    """A CO2E value that displays as the printed integer and whose ApC displays as the printed ApC.

    The printed ApC was evidently computed before CO2E was rounded for print,
    so a few rows disagree with ApC recomputed from the printed integers. The
    midpoint of the interval satisfying both constraints stands in for the
    unrounded measurement; when the interval is empty the printed value is kept.
    """
    gain = (auc - 50.0) * 100.0
    lo = max(co2e - 0.5, gain / (apc + 0.005))
    hi = min(co2e + 0.5, gain / (apc - 0.005)) if apc > 0.005 else co2e + 0.5
    if lo >= hi:
        return float(co2e)
    return (lo + hi) / 2.0


def reference_results(profile: str = "rtx3090", intensity: str = "rtx3090") -> list[RunResult]:
    """The reference rows as single-seed RunResults; train-phase CO2E follows `reconciled_co2e`."""
    prof, inten = get_profile(profile), get_intensity(intensity)
    grams_per_hour = prof.power_watts / 1000.0 * inten.grams_per_kwh
    out = []
    for row in reference_rows():
        spec = VariantSpec(row["base_model"], row["variant_kind"])
        grams = reconciled_co2e(row["auc"], row["co2e"], row["apc"])
        record = EmissionRecord.from_duration("train", grams / grams_per_hour, prof, inten)
        seed = {"seed": 0, "auc": row["auc"], "mrr": row["mrr"], "ndcg5": row["ndcg5"], "val_auc": row["auc"],
                "emissions": [record.to_dict()], "encode_stats": {}}
        h = config_hash({"reference": True, "dataset": row["dataset"], "spec": spec.to_dict()})
        out.append(RunResult(spec, row["dataset"], h, [seed], train_config={"source": "reference"}))
    return out


EXPECTED_STATS = {
    "MIND-small": StatsReport(65_238, 94_057, 347_727, 8_381_093, 8_381_093 / (65_238 * 94_057),
                              347_727 / (65_238 * 94_057)),
    "MIND-large": StatsReport(104_151, 750_434, 3_958_501, 95_447_571, 95_447_571 / (104_151 * 750_434),
                              3_958_501 / (104_151 * 750_434)),
}

EXPECTED_DENSITY_PERCENT = {"MIND-small": 0.1366, "MIND-large": 0.1221}
