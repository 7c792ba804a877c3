import numpy as np
import pytest

from newsbench.synthetic import make_synthetic_bundle
from newsbench.zoo import EmbeddingTable, PLMConfig

SMALL_PLM = PLMConfig(d_plm=32, stub_heads=4)


@pytest.fixture(scope="session")
def small_bundle():
    return make_synthetic_bundle(seed=0, n_topics=3, articles_per_topic=12, n_users=30, n_train=90, n_dev=40)


@pytest.fixture(scope="session")
def small_plm():
    return SMALL_PLM


def random_table(bundle, d=16, seed=0, provenance="plm_direct"):
    ids = list(bundle.articles)
    vecs = np.random.default_rng(seed).normal(size=(len(ids), d)).astype(np.float32)
    return EmbeddingTable(ids, vecs, provenance)


@pytest.fixture
def table_for():
    return random_table
