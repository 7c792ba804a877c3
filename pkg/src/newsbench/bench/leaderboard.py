"""Leaderboard rendering: variant families as rows, (dataset, base model) as columns."""
from __future__ import annotations

from dataclasses import dataclass

from ..green import apc_improvement, compute_apc
from ..zoo import BASE_MODELS, VARIANT_KINDS
from .store import RunResult, read_store

FAMILY_LABELS = {"ID": "ID-based", "TEXT": "Text-based", "PLM_NR": "PLM-NR", "BERT_OLEO": "BERT (OLEO)",
                 "PREC": "PREC (OLEO)"}
ROW_METRICS = (("auc", "AUC"), ("mrr", "MRR"), ("ndcg5", "N@5"), ("co2e", "CO2E"), ("apc", "ApC"))
LOWER_IS_BETTER = {"co2e"}


class LeaderboardError(RuntimeError):
    pass


@dataclass
class Cell:
    auc: float
    mrr: float
    ndcg5: float
    co2e: float
    apc: float | None
    val_auc: float
    config_hash: str

    def value(self, metric: str) -> float | None:
        return getattr(self, metric)


def select_best(results: list[RunResult], mode: str = "train_only") -> dict[tuple[str, str, str], Cell]:
    """Best run per (dataset, base model, kind) by mean validation AUC."""
    best: dict[tuple[str, str, str], RunResult] = {}
    for r in results:
        key = (r.dataset, r.spec.base_model, r.spec.variant_kind)
        if key not in best or r.mean["val_auc"] > best[key].mean["val_auc"]:
            best[key] = r
    cells = {}
    for key, r in best.items():
        m = r.mean
        co2e = r.co2e(mode)
        cells[key] = Cell(m["auc"], m["mrr"], m["ndcg5"], co2e, compute_apc(m["auc"], co2e) if co2e > 0 else None,
                          m["val_auc"], r.config_hash)
    return cells


def format_value(metric: str, value: float | None) -> str:
    if value is None:
        return "n/a"
    if metric == "co2e":
        if value >= 1:
            return f"{value:,.0f}"
        return f"{value:.3g}"
    return f"{value:.2f}"


def displayed(metric: str, value: float | None) -> float | None:
    """The number a reader sees, which is what rankings and improvements are computed from."""
    if value is None:
        return None
    return float(format_value(metric, value).replace(",", ""))


def improvement_row(cells: dict, columns: list[tuple[str, str]]) -> dict[tuple[str, str], int]:
    """Integer percent ApC gain of PREC over PLM_NR, from the displayed (2-decimal) ApC values."""
    out = {}
    for ds, base in columns:
        prec, plm = cells.get((ds, base, "PREC")), cells.get((ds, base, "PLM_NR"))
        if prec is None or plm is None or prec.apc is None or plm.apc is None:
            continue
        base_apc = displayed("apc", plm.apc)
        if base_apc is None or base_apc <= 0:
            continue
        out[(ds, base)] = round(apc_improvement(displayed("apc", prec.apc), base_apc))
    return out


def _ranks(values: dict[str, float | None], lower_better: bool) -> tuple[set, set, bool]:
    present = {k: v for k, v in values.items() if v is not None}
    if len(present) < 2:
        return set(), set(), False
    distinct = sorted(set(present.values()), reverse=not lower_better)
    best = {k for k, v in present.items() if v == distinct[0]}
    second = {k for k, v in present.items() if len(distinct) > 1 and v == distinct[1]}
    return best, second, len(best) > 1


def render_leaderboard(store_path=None, mode: str = "train_only", results: list[RunResult] | None = None,
                       markup: str = "markdown") -> str:
    """Render a results store as a markdown table.

    Best values are wrapped in `**`, second-best in `_`; ties share the mark.
    """
    if results is None:
        results = list(read_store(store_path).values()) if store_path is not None else []
    if not results:
        raise LeaderboardError("results store is empty")
    cells = select_best(results, mode)
    datasets = list(dict.fromkeys(r.dataset for r in results))
    columns = [(ds, b) for ds in datasets for b in BASE_MODELS if any(k[:2] == (ds, b) for k in cells)]
    kinds = [k for k in VARIANT_KINDS if any(key[2] == k for key in cells)]

    marks: dict[tuple, str] = {}
    notes = []
    for col in columns:
        for metric, label in ROW_METRICS:
            vals = {k: displayed(metric, cells[(*col, k)].value(metric)) if (*col, k) in cells else None
                    for k in kinds}
            best, second, tie = _ranks(vals, metric in LOWER_IS_BETTER)
            for k in best:
                marks[(col, metric, k)] = "best"
            for k in second:
                marks[(col, metric, k)] = "second"
            if tie:
                notes.append(f"tie for best {label} in {col[0]}/{col[1]}: "
                             + ", ".join(FAMILY_LABELS[k] for k in kinds if k in best))

    def fmt(col, metric, kind):
        cell = cells.get((*col, kind))
        if cell is None:
            return ""
        text = format_value(metric, cell.value(metric))
        mark = marks.get((col, metric, kind))
        if markup == "markdown":
            if mark == "best":
                return f"**{text}**"
            if mark == "second":
                return f"_{text}_"
        return text

    header = ["Family", "Metric"] + [f"{ds} {b}" for ds, b in columns]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for kind in kinds:
        for metric, label in ROW_METRICS:
            row = [FAMILY_LABELS[kind], label] + [fmt(col, metric, kind) for col in columns]
            lines.append("| " + " | ".join(row) + " |")
    imp = improvement_row(cells, columns)
    if imp:
        row = ["ApC Imp. (%)", ""] + [f"{imp[col]}%" if col in imp else "" for col in columns]
        lines.append("| " + " | ".join(row) + " |")
    footer = [f"Cells show the best run per variant by validation AUC; CO2E in grams ({mode})."]
    footer += [f"Note: {n}" for n in notes]
    return "\n".join(lines + [""] + footer) + "\n"
