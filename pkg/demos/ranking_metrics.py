"""
Scoring ranked impressions
==========================

Every impression is scored on its own and the results are averaged.
"""

import numpy as np
from newsbench.metrics import RankedImpression, evaluate_ranking

# two impressions: one ranked perfectly, one with the click in second place
imps = [
    RankedImpression("1", [0.9, 0.2, 0.1], [1, 0, 0]),
    RankedImpression("2", [0.7, 0.6, 0.1], [0, 1, 0]),
]
print(evaluate_ranking(imps))

# an impression with only clicks (or none) has no AUC and is skipped
imps.append(RankedImpression("3", [0.5, 0.4], [1, 1]))
report = evaluate_ranking(imps)
print("scored", report.n_impressions_scored, "skipped", report.n_impressions_skipped)

# random scores land near chance
rng = np.random.default_rng(0)
noise = [RankedImpression(str(i), rng.random(10), rng.permutation([1, 1] + [0] * 8)) for i in range(2000)]
print("random AUC", round(evaluate_ranking(noise).auc, 2))
