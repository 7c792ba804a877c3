"""Run results and the append-only NDJSON results store."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from ..green import PHASES, EmissionRecord, aggregate_emissions
from ..zoo import VariantSpec

METRICS = ("auc", "mrr", "ndcg5", "val_auc")


class StoreError(RuntimeError):
    pass


@dataclass
class RunResult:
    spec: VariantSpec
    dataset: str
    config_hash: str
    per_seed: list[dict]  # {"seed", "auc", "mrr", "ndcg5", "val_auc", "emissions": [...], "encode_stats": {...}}
    shared_emissions: list[EmissionRecord] = field(default_factory=list)  # fixed OLEO cost, counted once
    train_config: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""

    def _metric(self, key: str) -> list[float]:
        return [float(s[key]) for s in self.per_seed]

    @property
    def mean(self) -> dict:
        return {k: float(np.mean(self._metric(k))) for k in METRICS}

    @property
    def std(self) -> dict:
        return {k: float(np.std(self._metric(k))) for k in METRICS}

    def seed_emissions(self, i: int) -> list[EmissionRecord]:
        return [EmissionRecord.from_dict(e) for e in self.per_seed[i]["emissions"]]

    @property
    def emissions(self) -> list[EmissionRecord]:
        return [e for i in range(len(self.per_seed)) for e in self.seed_emissions(i)]

    def co2e(self, mode: str = "train_only") -> float:
        """Mean per-seed emissions (grams). `total` adds every phase plus the shared fixed cost."""
        if mode == "train_only":
            phases = ("train",)
        elif mode == "total":
            phases = PHASES
        else:
            raise StoreError(f"unknown emission mode {mode!r}")
        per_seed = [aggregate_emissions(self.seed_emissions(i), phases) for i in range(len(self.per_seed))]
        value = float(np.mean(per_seed))
        if mode == "total":
            value += aggregate_emissions(self.shared_emissions, phases)
        return value

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "dataset": self.dataset,
            "config_hash": self.config_hash,
            "per_seed": self.per_seed,
            "mean": self.mean,
            "std": self.std,
            "shared_emissions": [e.to_dict() for e in self.shared_emissions],
            "train_config": self.train_config,
            "started": self.started,
            "finished": self.finished,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        return cls(
            spec=VariantSpec.from_dict(d["spec"]),
            dataset=d["dataset"],
            config_hash=d["config_hash"],
            per_seed=d["per_seed"],
            shared_emissions=[EmissionRecord.from_dict(e) for e in d.get("shared_emissions", [])],
            train_config=d.get("train_config", {}),
            started=d.get("started", ""),
            finished=d.get("finished", ""),
        )

    def __eq__(self, other):
        return isinstance(other, RunResult) and self.to_dict() == other.to_dict()


def persist(result: RunResult, store_path) -> None:
    """Append one result as a single line; a later line with the same hash wins on read."""
    path = Path(store_path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        line = (json.dumps(result.to_dict(), sort_keys=True) + "\n").encode("utf-8")
        fd = os.open(path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
        try:
            os.write(fd, line)
        finally:
            os.close(fd)
    except OSError as e:
        raise StoreError(f"cannot write results store {path}: {e}") from e


def read_store(store_path) -> dict[str, RunResult]:
    path = Path(store_path)
    if not path.exists():
        return {}
    out: dict[str, RunResult] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                r = RunResult.from_dict(json.loads(line))
                out.pop(r.config_hash, None)
                out[r.config_hash] = r
    return out


def persist_many(results: Iterable[RunResult], store_path) -> None:
    for r in results:
        persist(r, store_path)
