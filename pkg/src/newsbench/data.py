"""MIND-format parsing, validation re-splitting, vocabularies and training samples."""
from __future__ import annotations

import json
import logging
import re
import struct
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
UNK_NEWS = "<unk-news>"

DEFAULT_K_NEG = 4
DEFAULT_L_MAX = 30
DEFAULT_MAX_TITLE_LEN = 30

_WORD = re.compile(r"[a-z0-9]+")


class ParseError(ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)


class DataError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return _WORD.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    def __len__(self):
        return len(self.tokens)

    def __getitem__(self, token: str) -> int:
        return self._index.get(token, 1)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def as_dict(self) -> dict[str, int]:
        return dict(self._index)

    def encode(self, words: Sequence[str], max_len: int) -> tuple[int, ...]:
        ids = [self[w] for w in words[:max_len]]
        return tuple(ids + [0] * (max_len - len(ids)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(list(self.tokens)), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls(tuple(json.loads(Path(path).read_text(encoding="utf-8"))))


@dataclass(frozen=True)
class TokenizerConfig:
    max_title_len: int = DEFAULT_MAX_TITLE_LEN
    vocab: Vocabulary | None = None
    use_abstract: bool = False


@dataclass(frozen=True)
class NewsArticle:
    news_id: str
    category: str
    subcategory: str
    raw_title: str
    title_words: tuple[str, ...] = ()
    title_tokens: tuple[int, ...] = ()
    abstract_tokens: tuple[int, ...] = ()
    abstract: str = ""


@dataclass(frozen=True)
class Impression:
    impression_id: str
    user_id: str
    timestamp: str
    history: tuple[str, ...]
    candidates: tuple[tuple[str, int], ...]


@dataclass(frozen=True)
class MatchingSample:
    user_id: str
    history: tuple[str, ...]
    positive: str
    negatives: tuple[str, ...]

    @property
    def group(self) -> tuple[str, ...]:
        return (self.positive,) + self.negatives


@dataclass(frozen=True)
class CtrSample:
    user_id: str
    history: tuple[str, ...]
    candidate: str
    label: int


@dataclass(frozen=True)
class StatsReport:
    n_news: int
    n_users: int
    n_interactions: int
    n_samples: int
    density: float  # samples / (news x users), as a fraction
    density_interactions: float  # interactions / (news x users)

    def as_dict(self) -> dict:
        return asdict(self)

    def format(self) -> str:
        return (
            f"# News {self.n_news:,} | # Users {self.n_users:,} | # Interactions {self.n_interactions:,} | "
            f"# Samples {self.n_samples:,} | Density {self.density * 100:.4f}% "
            f"(interaction density {self.density_interactions * 100:.4f}%)"
        )


@dataclass
class DatasetBundle:
    articles: dict[str, NewsArticle]
    train: list[Impression]
    val: list[Impression]
    test: list[Impression]
    vocab: Vocabulary
    stats: StatsReport | None = None
    name: str = "custom"
    news_index: dict[str, int] = field(default_factory=dict)
    user_index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.news_index:
            # index 0 is the reserved UNK article
            self.news_index = {UNK_NEWS: 0}
            for nid in self.articles:
                self.news_index[nid] = len(self.news_index)
        if not self.user_index:
            self.user_index = {"<unk-user>": 0}
            for imp in self.train:
                self.user_index.setdefault(imp.user_id, len(self.user_index))

    def news_ids(self, ids: Iterable[str]) -> list[int]:
        return [self.news_index.get(n, 0) for n in ids]

    def article_list(self) -> list[NewsArticle]:
        return list(self.articles.values())


# -- parsing -------------------------------------------------------------------


def parse_news(tsv_stream: Iterable[str], tokenizer_cfg: TokenizerConfig | None = None) -> list[NewsArticle]:
    cfg = tokenizer_cfg or TokenizerConfig()
    by_id: dict[str, NewsArticle] = {}
    for lineno, line in enumerate(tsv_stream, 1):
        line = line.rstrip("\r\n")
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 8:
            raise ParseError(f"expected 8 tab-separated fields, got {len(fields)}", lineno)
        news_id, category, subcategory, title, abstract = fields[:5]
        words = tuple(tokenize(title))
        article = NewsArticle(news_id, category, subcategory, title, words, abstract=abstract)
        if cfg.vocab is not None:
            article = apply_vocab_one(article, cfg.vocab, cfg.max_title_len, cfg.use_abstract)
        if news_id in by_id:
            logger.warning("duplicate news id %s at line %d; keeping the last one", news_id, lineno)
            del by_id[news_id]
        by_id[news_id] = article
    return list(by_id.values())


def apply_vocab_one(article: NewsArticle, vocab: Vocabulary, max_title_len: int,
                    use_abstract: bool = False) -> NewsArticle:
    abstract = vocab.encode(tokenize(article.abstract), max_title_len) if use_abstract else ()
    return replace(article, title_tokens=vocab.encode(article.title_words, max_title_len), abstract_tokens=abstract)


def apply_vocab(articles: Iterable[NewsArticle], vocab: Vocabulary, max_title_len: int = DEFAULT_MAX_TITLE_LEN,
                use_abstract: bool = False) -> list[NewsArticle]:
    return [apply_vocab_one(a, vocab, max_title_len, use_abstract) for a in articles]


def parse_behaviors(tsv_stream: Iterable[str]) -> list[Impression]:
    out = []
    for lineno, line in enumerate(tsv_stream, 1):
        line = line.rstrip("\r\n")
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise ParseError(f"expected 5 tab-separated fields, got {len(fields)}", lineno)
        imp_id, user_id, ts, history, cands = fields
        candidates = []
        for tok in cands.split():
            nid, sep, lab = tok.rpartition("-")
            if not sep or lab not in ("0", "1") or not nid:
                raise ParseError(f"candidate {tok!r} lacks a -0/-1 label suffix", lineno)
            candidates.append((nid, int(lab)))
        if not candidates:
            raise ParseError("impression has no candidates", lineno)
        out.append(Impression(imp_id, user_id, ts, tuple(history.split()), tuple(candidates)))
    return out


def format_impression(imp: Impression) -> str:
    cands = " ".join(f"{n}-{lab}" for n, lab in imp.candidates)
    return f"{imp.impression_id}\t{imp.user_id}\t{imp.timestamp}\t{' '.join(imp.history)}\t{cands}"


def format_article(a: NewsArticle) -> str:
    return f"{a.news_id}\t{a.category}\t{a.subcategory}\t{a.raw_title}\t{a.abstract}\t\t[]\t[]"


# -- splitting and vocabulary ----------------------------------------------------


def _parse_time(ts: str) -> datetime:
    for fmt in ("%m/%d/%Y %I:%M:%S %p", "%m/%d/%Y %I:%M %p"):
        try:
            return datetime.strptime(ts, fmt)
        except ValueError:
            pass
    raise DataError(f"unrecognised timestamp {ts!r}")


def split_validation(impressions: Sequence[Impression], seed: int,
                     method: str = "random") -> tuple[list[Impression], list[Impression]]:
    """Halve a validation set into new validation and test sets.

    `random` shuffles by seed before halving; `temporal` puts the earlier
    half into validation. Each half keeps the input order.
    """
    n = len(impressions)
    if n == 0:
        raise DataError("nothing to split")
    n_val = (n + 1) // 2
    if method == "random":
        perm = np.random.default_rng(seed).permutation(n)
    elif method == "temporal":
        perm = np.array(sorted(range(n), key=lambda i: (_parse_time(impressions[i].timestamp), i)))
    else:
        raise DataError(f"unknown split method {method!r}")
    val_idx = np.sort(perm[:n_val])
    test_idx = np.sort(perm[n_val:])
    return [impressions[i] for i in val_idx], [impressions[i] for i in test_idx]


def build_vocab(articles: Iterable[NewsArticle], min_freq: int = 1) -> Vocabulary:
    counts = Counter()
    for a in articles:
        counts.update(a.title_words)
    kept = sorted((w for w, c in counts.items() if c >= min_freq), key=lambda w: (-counts[w], w))
    return Vocabulary((PAD_TOKEN, UNK_TOKEN, *kept))


# -- samples -----------------------------------------------------------------------


def _truncate(history: Sequence[str], l_max: int) -> tuple[str, ...]:
    return tuple(history[-l_max:]) if l_max > 0 else ()


def make_matching_samples(impressions: Sequence[Impression], k_neg: int = DEFAULT_K_NEG,
                          l_max: int = DEFAULT_L_MAX, seed: int = 0) -> list[MatchingSample]:
    """One sample per clicked candidate, with `k_neg` negatives from the same impression.

    With fewer than `k_neg` negatives available, every one is used once and
    the rest are drawn with replacement. Impressions without any negative
    borrow from the split-wide negative pool.
    """
    if k_neg < 1:
        raise DataError("k_neg must be >= 1")
    rng = np.random.default_rng(seed)
    pool = sorted({n for imp in impressions for n, lab in imp.candidates if lab == 0})
    out = []
    borrowed = 0
    for imp in impressions:
        pos = [n for n, lab in imp.candidates if lab == 1]
        if not pos:
            continue
        negs = [n for n, lab in imp.candidates if lab == 0]
        if not negs:
            if not pool:
                raise DataError("no negatives anywhere in the split")
            negs = pool
            borrowed += 1
        hist = _truncate(imp.history, l_max)
        for p in pos:
            if len(negs) >= k_neg:
                idx = rng.choice(len(negs), size=k_neg, replace=False)
            else:
                extra = rng.choice(len(negs), size=k_neg - len(negs), replace=True)
                idx = rng.permutation(np.concatenate([np.arange(len(negs)), extra]))
            out.append(MatchingSample(imp.user_id, hist, p, tuple(negs[i] for i in idx)))
    if borrowed:
        logger.info("%d impressions had no negatives; sampled from the split-wide pool", borrowed)
    return out


def make_ctr_samples(impressions: Sequence[Impression], l_max: int = DEFAULT_L_MAX) -> list[CtrSample]:
    out = []
    for imp in impressions:
        hist = _truncate(imp.history, l_max)
        out.extend(CtrSample(imp.user_id, hist, n, lab) for n, lab in imp.candidates)
    return out


def dataset_stats(articles: Iterable[NewsArticle] | int, impressions: Iterable[Impression]) -> StatsReport:
    n_news = articles if isinstance(articles, int) else len({a.news_id for a in articles})
    users = set()
    n_int = n_samples = 0
    for imp in impressions:
        users.add(imp.user_id)
        n_samples += len(imp.candidates)
        n_int += sum(lab for _, lab in imp.candidates)
    denom = n_news * len(users)
    return StatsReport(
        n_news=n_news,
        n_users=len(users),
        n_interactions=n_int,
        n_samples=n_samples,
        density=n_samples / denom if denom else 0.0,
        density_interactions=n_int / denom if denom else 0.0,
    )


# -- sample shards -------------------------------------------------------------------

_SAMPLE_TYPES = {"matching": MatchingSample, "ctr": CtrSample}


def _sample_record(s) -> dict:
    kind = "matching" if isinstance(s, MatchingSample) else "ctr"
    d = asdict(s)
    d["kind"] = kind
    return d


def _sample_from_record(d: dict):
    d = dict(d)
    cls = _SAMPLE_TYPES[d.pop("kind")]
    for key in ("history", "negatives"):
        if key in d:
            d[key] = tuple(d[key])
    return cls(**d)


def write_samples(samples: Iterable, path, fmt: str = "ndjson") -> int:
    """Write samples as newline-delimited JSON or as u32-length-prefixed binary frames."""
    n = 0
    if fmt == "ndjson":
        with open(path, "w", encoding="utf-8") as f:
            for s in samples:
                f.write(json.dumps(_sample_record(s), separators=(",", ":")) + "\n")
                n += 1
    elif fmt == "binary":
        with open(path, "wb") as f:
            for s in samples:
                payload = json.dumps(_sample_record(s), separators=(",", ":")).encode("utf-8")
                f.write(struct.pack("<I", len(payload)))
                f.write(payload)
                n += 1
    else:
        raise DataError(f"unknown shard format {fmt!r}")
    return n


def read_samples(path, fmt: str = "ndjson") -> Iterator:
    if fmt == "ndjson":
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    yield _sample_from_record(json.loads(line))
    elif fmt == "binary":
        with open(path, "rb") as f:
            while header := f.read(4):
                (size,) = struct.unpack("<I", header)
                yield _sample_from_record(json.loads(f.read(size).decode("utf-8")))
    else:
        raise DataError(f"unknown shard format {fmt!r}")


# -- dataset assembly -------------------------------------------------------------------


def read_news_file(path, tokenizer_cfg: TokenizerConfig | None = None) -> list[NewsArticle]:
    with open(path, encoding="utf-8") as f:
        return parse_news(f, tokenizer_cfg)


def read_behaviors_file(path) -> list[Impression]:
    with open(path, encoding="utf-8") as f:
        return parse_behaviors(f)


def merge_articles(*corpora: Iterable[NewsArticle]) -> dict[str, NewsArticle]:
    out: dict[str, NewsArticle] = {}
    for corpus in corpora:
        for a in corpus:
            out[a.news_id] = a
    return out


def load_mind(train_dir, dev_dir, seed: int = 0, split_method: str = "random", min_freq: int = 1,
              max_title_len: int = DEFAULT_MAX_TITLE_LEN, name: str = "custom") -> DatasetBundle:
    """Load a MIND release: train behaviors train, dev behaviors are halved into val/test."""
    train_dir, dev_dir = Path(train_dir), Path(dev_dir)
    articles = merge_articles(read_news_file(train_dir / "news.tsv"), read_news_file(dev_dir / "news.tsv"))
    train = read_behaviors_file(train_dir / "behaviors.tsv")
    dev = read_behaviors_file(dev_dir / "behaviors.tsv")
    val, test = split_validation(dev, seed, split_method)
    return bundle_from_parts(articles, train, val, test, min_freq, max_title_len, name)


def bundle_from_parts(articles: dict[str, NewsArticle] | Sequence[NewsArticle], train, val, test,
                      min_freq: int = 1, max_title_len: int = DEFAULT_MAX_TITLE_LEN,
                      name: str = "custom") -> DatasetBundle:
    if not isinstance(articles, dict):
        articles = merge_articles(articles)
    vocab = build_vocab(articles.values(), min_freq)
    tokenized = {k: apply_vocab_one(a, vocab, max_title_len) for k, a in articles.items()}
    stats = dataset_stats(tokenized.values(), [*train, *val, *test])
    missing = {n for imp in [*train, *val, *test] for n in [*imp.history, *(c for c, _ in imp.candidates)]} - set(tokenized)
    if missing:
        logger.warning("%d referenced news ids are not in the corpus; mapped to the UNK article", len(missing))
    return DatasetBundle(tokenized, list(train), list(val), list(test), vocab, stats, name)
