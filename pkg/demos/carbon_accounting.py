"""
Grams of CO2 and AUC per gram
=============================

Emissions come from power draw, wall time and grid intensity.
"""

from newsbench.bench import reference_results, render_leaderboard
from newsbench.green import (EmissionLedger, apc_improvement, compute_apc, compute_co2e, get_intensity,
                             get_profile)

# one hour on the default GPU profile and grid
print(compute_co2e(350, 1.0, 722), "g")

# AUC gained over chance per 100 g
print(round(compute_apc(63.2, 22.43), 2))
print(round(apc_improvement(7.0, 1.0)), "%")

# the ledger times any block of work and keeps one record per phase
ledger = EmissionLedger(get_profile("rtx3090"), get_intensity("rtx3090"))
ledger.track("train", lambda: sum(i * i for i in range(10**6)))
for rec in ledger.records:
    print(rec.phase, f"{rec.duration_hours * 3600:.3f}s", f"{rec.co2e_grams:.5f}g")

# the reference comparison, rendered from its stored rows
print(render_leaderboard(results=reference_results()))
