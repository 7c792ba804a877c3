"""
A synthetic news corpus
=======================

Topics own disjoint vocabularies and users click within their favourite topic,
so any model that reads titles or learns IDs can separate clicks from skips.
"""

from newsbench.data import dataset_stats, make_ctr_samples, make_matching_samples
from newsbench.synthetic import make_synthetic_bundle

bundle = make_synthetic_bundle(seed=0)
art = bundle.article_list()[0]
print(art.news_id, art.category, art.raw_title)
print(len(bundle.articles), "articles;", len(bundle.train), "train,", len(bundle.val), "val,",
      len(bundle.test), "test impressions")

stats = dataset_stats(bundle.article_list(), bundle.train + bundle.val + bundle.test)
print(stats)

# matching models see one click against k skips; CTR models see every candidate
imp = bundle.train[0]
print(make_matching_samples([imp], k_neg=4, seed=0)[0])
print(len(make_ctr_samples([imp])), "CTR samples from", len(imp.candidates), "candidates")
