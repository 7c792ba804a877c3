"""Small synthetic MIND-format corpora with a single latent topic driving clicks.

Each article belongs to one topic and its title is drawn mostly from that
topic's words. Each user likes one topic: their history and clicks come
from it, and non-clicked candidates come from the other topics. Any model
that can relate a candidate to the history is able to rank perfectly.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import (
    DatasetBundle,
    Impression,
    NewsArticle,
    bundle_from_parts,
    format_article,
    format_impression,
    tokenize,
)


def make_synthetic_corpus(n_topics: int = 4, articles_per_topic: int = 30, n_users: int = 120,
                          n_train: int = 600, n_dev: int = 200, history_len: tuple[int, int] = (3, 10),
                          n_negatives: tuple[int, int] = (4, 8), title_len: int = 6,
                          cold_user_frac: float = 0.0, seed: int = 0):
    """Return (articles, train_impressions, dev_impressions)."""
    rng = np.random.default_rng(seed)
    common = [f"common{j}" for j in range(10)]
    articles = []
    by_topic: list[list[str]] = [[] for _ in range(n_topics)]
    for t in range(n_topics):
        words = [f"t{t}w{j}" for j in range(12)]
        for i in range(articles_per_topic):
            nid = f"N{t}_{i}"
            n_common = 1
            title = [*rng.choice(words, title_len - n_common), *rng.choice(common, n_common)]
            rng.shuffle(title)
            text = " ".join(title)
            articles.append(NewsArticle(nid, f"topic{t}", f"sub{t}_{i % 3}", text, tuple(tokenize(text))))
            by_topic[t].append(nid)

    prefs = rng.integers(0, n_topics, size=n_users)
    cold = rng.random(n_users) < cold_user_frac
    histories = []
    for u in range(n_users):
        if cold[u]:
            histories.append(())
            continue
        k = int(rng.integers(history_len[0], history_len[1] + 1))
        histories.append(tuple(rng.choice(by_topic[prefs[u]], size=k, replace=False)))

    def impressions(n: int, offset: int, day: int) -> list[Impression]:
        out = []
        for i in range(n):
            u = int(rng.integers(0, n_users))
            liked = by_topic[prefs[u]]
            others = [nid for t in range(n_topics) if t != prefs[u] for nid in by_topic[t]]
            n_pos = int(rng.integers(1, 3))
            n_neg = int(rng.integers(n_negatives[0], n_negatives[1] + 1))
            cands = [(str(x), 1) for x in rng.choice(liked, n_pos, replace=False)]
            cands += [(str(x), 0) for x in rng.choice(others, n_neg, replace=False)]
            order = rng.permutation(len(cands))
            minute = i % 60
            ts = f"11/{day:02d}/2019 {1 + (i // 60) % 12}:{minute:02d}:00 AM"
            out.append(Impression(str(offset + i + 1), f"U{u}", ts, tuple(str(h) for h in histories[u]),
                                  tuple(cands[j] for j in order)))
        return out

    train = impressions(n_train, 0, 9)
    dev = impressions(n_dev, n_train, 15)
    return articles, train, dev


def make_synthetic_bundle(seed: int = 0, split_seed: int = 0, **kwargs) -> DatasetBundle:
    articles, train, dev = make_synthetic_corpus(seed=seed, **kwargs)
    from .data import split_validation

    val, test = split_validation(dev, split_seed)
    return bundle_from_parts(articles, train, val, test, name="synthetic")


def write_synthetic_mind(root, seed: int = 0, **kwargs) -> tuple[Path, Path]:
    """Write `train/` and `dev/` directories in MIND file layout under `root`."""
    articles, train, dev = make_synthetic_corpus(seed=seed, **kwargs)
    root = Path(root)
    dirs = []
    for name, imps in (("train", train), ("dev", dev)):
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        (d / "news.tsv").write_text("".join(format_article(a) + "\n" for a in articles), encoding="utf-8")
        (d / "behaviors.tsv").write_text("".join(format_impression(i) + "\n" for i in imps), encoding="utf-8")
        dirs.append(d)
    return dirs[0], dirs[1]
