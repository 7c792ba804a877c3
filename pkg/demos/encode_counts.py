"""
End to end versus encode once
=============================

An end-to-end model runs its content encoder on every history item and
candidate of every sample.  The OLEO variant encodes each article once up
front and trains on table lookups.
"""

from newsbench.synthetic import make_synthetic_bundle
from newsbench.training import TrainConfig, build_plm_table, count_encodes, train_end_to_end, train_oleo
from newsbench.zoo import PLMConfig, VariantSpec

bundle = make_synthetic_bundle(seed=0)
plm = PLMConfig(d_plm=32)
cfg = TrainConfig(learning_rate=5e-4, max_epochs=2)

_, e2e = train_end_to_end(VariantSpec("NRMS", "PLM_NR"), bundle, cfg, plm=plm)
stats = count_encodes(e2e.best, len(bundle.articles))
print("end to end:", stats.total_content_encodes, "encodes per epoch,",
      round(stats.per_article_mean, 1), "per article")

# the table costs one encode per article, paid once
table = build_plm_table(bundle.article_list(), plm)
_, oleo = train_oleo(VariantSpec("NRMS", "BERT_OLEO"), table, bundle, cfg)
print("OLEO:", len(table), "encodes up front,", oleo.best.total_content_encodes, "per epoch")

for name, trace in (("end to end", e2e), ("OLEO", oleo)):
    print(f"{name:>10}: {trace.best.train_seconds:.2f}s per epoch, val AUC {trace.best.val['auc']:.1f}")
