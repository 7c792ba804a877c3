"""Energy and carbon accounting for benchmark runs.

CO2E (grams) = power (kW) x running time (h) x grid intensity (g/kWh)
ApC          = (AUC - 50) / CO2E x 100
"""
from __future__ import annotations

import json
import threading
import time
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, TypeVar

PHASES = ("pretrain", "encode_once", "train", "evaluate")

T = TypeVar("T")


class AccountingError(ValueError):
    pass


@dataclass(frozen=True)
class HardwareProfile:
    name: str
    power_watts: float

    def __post_init__(self):
        if not self.power_watts > 0:
            raise AccountingError(f"power_watts must be > 0, got {self.power_watts}")


@dataclass(frozen=True)
class CarbonIntensity:
    region: str
    grams_per_kwh: float

    def __post_init__(self):
        if not self.grams_per_kwh > 0:
            raise AccountingError(f"grams_per_kwh must be > 0, got {self.grams_per_kwh}")


HARDWARE_PROFILES = {
    "rtx3090": HardwareProfile("rtx3090", 350.0),
    "a100-40gb": HardwareProfile("a100-40gb", 400.0),
    "v100": HardwareProfile("v100", 300.0),
    "cpu-desktop": HardwareProfile("cpu-desktop", 65.0),
}

CARBON_INTENSITIES = {
    "rtx3090": CarbonIntensity("rtx3090", 722.0),
    "world-average": CarbonIntensity("world-average", 475.0),
    "eu-average": CarbonIntensity("eu-average", 276.0),
}

DEFAULT_PROFILE = "rtx3090"
DEFAULT_INTENSITY = "rtx3090"


def get_profile(name: str) -> HardwareProfile:
    try:
        return HARDWARE_PROFILES[name]
    except KeyError:
        raise AccountingError(f"unknown hardware profile {name!r}; known: {sorted(HARDWARE_PROFILES)}") from None


def get_intensity(name: str) -> CarbonIntensity:
    try:
        return CARBON_INTENSITIES[name]
    except KeyError:
        raise AccountingError(f"unknown carbon intensity {name!r}; known: {sorted(CARBON_INTENSITIES)}") from None


def compute_co2e(power_watts: float, duration_hours: float, grams_per_kwh: float) -> float:
    if power_watts < 0 or duration_hours < 0 or grams_per_kwh < 0:
        raise AccountingError("power, duration and intensity must be non-negative")
    return power_watts / 1000.0 * duration_hours * grams_per_kwh


def compute_apc(auc_percent: float, co2e_grams: float) -> float:
    if co2e_grams == 0:
        raise AccountingError("ApC is undefined for zero emissions")
    return (auc_percent - 50.0) / co2e_grams * 100.0


def apc_improvement(apc_new: float, apc_base: float) -> float:
    """Relative ApC gain in percent. Display code rounds this to an integer."""
    if apc_base <= 0:
        raise AccountingError(f"baseline ApC must be positive, got {apc_base}")
    return (apc_new - apc_base) / apc_base * 100.0


@dataclass(frozen=True)
class EmissionRecord:
    phase: str
    duration_hours: float
    energy_kwh: float
    co2e_grams: float
    unit: str = "g"

    @classmethod
    def from_duration(cls, phase: str, duration_hours: float, profile: HardwareProfile,
                      intensity: CarbonIntensity) -> "EmissionRecord":
        if phase not in PHASES:
            raise AccountingError(f"unknown phase {phase!r}")
        energy = profile.power_watts / 1000.0 * duration_hours
        return cls(phase, duration_hours, energy, compute_co2e(profile.power_watts, duration_hours,
                                                                intensity.grams_per_kwh))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EmissionRecord":
        return cls(**d)


def track_phase(phase: str, profile: HardwareProfile, intensity: CarbonIntensity,
                work: Callable[[], T], clock: Callable[[], float] = time.perf_counter,
                ledger: "EmissionLedger | None" = None) -> tuple[T, EmissionRecord]:
    """Run `work`, timing it with `clock` (seconds).

    When `work` raises, the record is still appended to `ledger` (if given)
    before the exception propagates.
    """
    start = clock()
    try:
        result = work()
    finally:
        elapsed = max(clock() - start, 0.0)
        record = EmissionRecord.from_duration(phase, elapsed / 3600.0, profile, intensity)
        if ledger is not None:
            ledger.append(record)
    return result, record


def aggregate_emissions(records: Iterable[EmissionRecord], include_phases: Iterable[str]) -> float:
    include = set(include_phases)
    return sum(r.co2e_grams for r in records if r.phase in include)


class EmissionLedger:
    """Append-only list of emission records for one run."""

    def __init__(self, profile: HardwareProfile | None = None, intensity: CarbonIntensity | None = None,
                 clock: Callable[[], float] = time.perf_counter):
        self.profile = profile or get_profile(DEFAULT_PROFILE)
        self.intensity = intensity or get_intensity(DEFAULT_INTENSITY)
        self.clock = clock
        self.records: list[EmissionRecord] = []
        self._lock = threading.Lock()

    def append(self, record: EmissionRecord) -> None:
        with self._lock:
            self.records.append(record)

    def track(self, phase: str, work: Callable[[], T]) -> T:
        result, _ = track_phase(phase, self.profile, self.intensity, work, self.clock, ledger=self)
        return result

    def total(self, include_phases: Iterable[str] = PHASES) -> float:
        return aggregate_emissions(self.records, include_phases)

    def to_ndjson(self) -> str:
        return "".join(json.dumps(r.to_dict()) + "\n" for r in self.records)
