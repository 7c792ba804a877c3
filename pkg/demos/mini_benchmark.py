"""
A small benchmark run
=====================

Six variants on the synthetic corpus, persisted to a results store and
rendered as a leaderboard.  Rerunning skips what is already stored.
"""

import tempfile

from newsbench.bench import config_from_dict, render_leaderboard, run_experiment

out = tempfile.mkdtemp()
cfg = config_from_dict({
    "dataset": {"name": "synthetic", "synthetic": {}},
    "variants": ["NAML-ID", "NAML-TEXT", "NAML-PREC", "DIN-ID", "DIN-TEXT", "DIN-BERT_OLEO"],
    "train": {"learning_rate": 5e-3, "max_epochs": 3},
    "seeds": [0, 1],
    "plm": {"d_plm": 32},
    "pretrain": {"plm": {"d_plm": 32}, "epochs": 2},
    "output_dir": out,
})

outcome = run_experiment(cfg, on_result=lambda r: print("done", r.spec.name, round(r.mean["auc"], 2)))
print(outcome.summary())
print(run_experiment(cfg).summary())

print(render_leaderboard(cfg.store_path))
