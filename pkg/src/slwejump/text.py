"""Keyword-based topic tracking on token streams.

Each topic owns a disjoint keyword list.  A token stream is reduced to the
keywords it contains, and every keyword becomes one categorical observation
(its topic's index).  Online trackers are scored against the offline
per-article keyword proportions.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .detect import TestConfig
from .envs import make_rng
from .estimators import VectorMeanState, VectorSlweState
from .tracker import JumpPolicy, MultinomialTracker

_TOKEN = re.compile(r"[^\W_]+")

BUNDLED_TOPICS = ("eu", "economy", "sports", "entertainment")
BUNDLED_SEED = 2018


class NoKeywordsError(ValueError):
    """Raised when an article or stream contains no keyword at all."""


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class KeywordLists:
    topics: tuple[str, ...]
    keywords: tuple[frozenset[str], ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        topics = tuple(self.topics)
        kws = tuple(frozenset(w.lower() for w in ks) for ks in self.keywords)
        object.__setattr__(self, "topics", topics)
        object.__setattr__(self, "keywords", kws)
        if len(topics) < 2:
            raise ValueError("need at least two topics")
        if len(set(topics)) != len(topics):
            raise ValueError("duplicate topic names")
        if len(kws) != len(topics):
            raise ValueError("one keyword set per topic")
        index: dict[str, int] = {}
        for i, ks in enumerate(kws):
            for w in ks:
                if w in index:
                    raise ValueError(f"keyword {w!r} listed for both "
                                     f"{topics[index[w]]!r} and {topics[i]!r}")
                index[w] = i
        object.__setattr__(self, "index", index)

    @property
    def r(self) -> int:
        return len(self.topics)

    @classmethod
    def from_mapping(cls, mapping: dict[str, Iterable[str]]) -> KeywordLists:
        return cls(tuple(mapping), tuple(frozenset(v) for v in mapping.values()))

    @classmethod
    def from_files(cls, paths: Sequence[str | os.PathLike]) -> KeywordLists:
        """One file per topic (topic name = file stem), one word per line, ``#`` comments."""
        topics, sets = [], []
        for path in paths:
            words = set()
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    word = line.split("#", 1)[0].strip().lower()
                    if word:
                        words.add(word)
            topics.append(Path(path).stem)
            sets.append(frozenset(words))
        return cls(tuple(topics), tuple(sets))

    @classmethod
    def from_dir(cls, directory: str | os.PathLike, topics: Sequence[str] | None = None) -> KeywordLists:
        d = Path(directory)
        if topics is None:
            paths = sorted(d.glob("*.txt"))
        else:
            paths = [d / f"{t}.txt" for t in topics]
        if not paths:
            raise ValueError(f"no keyword files in {d}")
        return cls.from_files(paths)

    def write_dir(self, directory: str | os.PathLike) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        out = []
        for topic, words in zip(self.topics, self.keywords):
            p = d / f"{topic}.txt"
            with open(p, "w", encoding="utf-8") as fh:
                fh.write(f"# keywords for topic {topic}\n")
                for w in sorted(words):
                    fh.write(w + "\n")
            out.append(p)
        return out


@dataclass(frozen=True)
class Article:
    label: str
    tokens: tuple[str, ...]


@dataclass
class LabeledCorpus:
    articles: list[Article]

    def __len__(self) -> int:
        return len(self.articles)

    def __iter__(self) -> Iterator[Article]:
        return iter(self.articles)

    def labels(self) -> list[str]:
        """Distinct labels in order of first appearance."""
        return list(dict.fromkeys(a.label for a in self.articles))

    @classmethod
    def read_jsonl(cls, path: str | os.PathLike) -> LabeledCorpus:
        with open(path, encoding="utf-8") as fh:
            return cls.parse_jsonl(fh)

    @classmethod
    def parse_jsonl(cls, lines: Iterable[str]) -> LabeledCorpus:
        articles = []
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "label" not in obj:
                raise ValueError(f"line {lineno}: missing label")
            if "tokens" in obj:
                tokens = tuple(str(t).lower() for t in obj["tokens"])
            elif "text" in obj:
                tokens = tuple(tokenize(obj["text"]))
            else:
                raise ValueError(f"line {lineno}: need tokens or text")
            articles.append(Article(str(obj["label"]), tokens))
        return cls(articles)

    def to_jsonl(self) -> str:
        return "".join(json.dumps({"label": a.label, "tokens": list(a.tokens)},
                                  ensure_ascii=False) + "\n" for a in self.articles)

    def write_jsonl(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    def split_parity(self) -> tuple[LabeledCorpus, LabeledCorpus]:
        """Even- and odd-indexed articles, for two-fold cross-validation."""
        return LabeledCorpus(self.articles[0::2]), LabeledCorpus(self.articles[1::2])


# keyword selection -------------------------------------------------------------


def word_topic_counts(corpus: LabeledCorpus, topics: Sequence[str]) -> tuple[list[str], np.ndarray]:
    pos = {t: i for i, t in enumerate(topics)}
    counts: dict[str, np.ndarray] = {}
    for art in corpus:
        if art.label not in pos:
            raise ValueError(f"article label {art.label!r} not among topics")
        j = pos[art.label]
        for tok in art.tokens:
            row = counts.get(tok)
            if row is None:
                row = counts[tok] = np.zeros(len(topics))
            row[j] += 1
    vocab = sorted(counts)
    table = np.array([counts[w] for w in vocab]) if vocab else np.zeros((0, len(topics)))
    return vocab, table


def pmi_table(corpus: LabeledCorpus, topics: Sequence[str],
              smoothing: float = 1.0) -> tuple[list[str], np.ndarray]:
    """``log P(w, t) / (P(w) P(t))`` over the (smoothed) word-by-topic count table."""
    vocab, counts = word_topic_counts(corpus, topics)
    c = counts + smoothing
    total = c.sum()
    with np.errstate(divide="ignore"):
        pmi = np.log(c * total / (c.sum(axis=1, keepdims=True) * c.sum(axis=0, keepdims=True)))
    return vocab, pmi


def pmi_keywords(corpus: LabeledCorpus, k: int, topics: Sequence[str] | None = None,
                 smoothing: float = 1.0) -> KeywordLists:
    """Top-``k`` words by PMI for each topic.

    Every word competes only for the topic where its PMI is highest (ties go to
    the earlier topic), which keeps the lists disjoint.  Within a topic, ties
    in PMI are broken alphabetically.
    """
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    if k < 1:
        raise ValueError("k must be >= 1")
    topics = tuple(topics) if topics is not None else tuple(corpus.labels())
    present = {a.label for a in corpus}
    missing = [t for t in topics if t not in present]
    if missing:
        raise ValueError(f"topics without articles: {missing}")
    vocab, pmi = pmi_table(corpus, topics, smoothing)
    if k > len(vocab):
        raise ValueError(f"k={k} exceeds vocabulary size {len(vocab)}")
    owner = np.argmax(pmi, axis=1)
    lists = []
    for j in range(len(topics)):
        cand = [(-pmi[i, j], vocab[i]) for i in np.flatnonzero(owner == j)]
        cand.sort()
        lists.append(frozenset(w for _, w in cand[:k]))
    return KeywordLists(topics, tuple(lists))


# mapping and scoring -----------------------------------------------------------


def map_stream(tokens: Iterable[str], lists: KeywordLists) -> list[int]:
    """Topic index of every keyword token, in order; other tokens are dropped."""
    index = lists.index
    return [index[t] for t in tokens if t in index]


def offline_estimate(tokens: Iterable[str], lists: KeywordLists) -> list[float]:
    mapped = map_stream(tokens, lists)
    if not mapped:
        raise NoKeywordsError("article contains no keywords")
    counts = [0] * lists.r
    for k in mapped:
        counts[k] += 1
    n = len(mapped)
    return [c / n for c in counts]


@dataclass(frozen=True)
class TrackRecord:
    word_idx: int
    topic: int
    article: int
    jump: tuple[float, ...]
    slwe: tuple[float, ...]
    offline: tuple[float, ...]


@dataclass
class TrackResult:
    topics: tuple[str, ...]
    records: list[TrackRecord]
    mae_jump: float
    mae_slwe: float
    mae_mean: float
    skipped_articles: int
    jumps: int
    settings: dict

    def errors(self, which: str) -> np.ndarray:
        """Per-word mean absolute componentwise error against the offline vector."""
        off = np.array([r.offline for r in self.records])
        est = np.array([getattr(r, which) for r in self.records])
        return np.abs(est - off).mean(axis=1)

    def to_csv(self) -> str:
        r = len(self.topics)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["word_idx", "topic",
                    *[f"jump_est_{i + 1}" for i in range(r)],
                    *[f"slwe_est_{i + 1}" for i in range(r)],
                    *[f"offline_{i + 1}" for i in range(r)]])
        for rec in self.records:
            w.writerow([rec.word_idx, self.topics[rec.topic],
                        *map(repr, rec.jump), *map(repr, rec.slwe), *map(repr, rec.offline)])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"topics": list(self.topics), "words": len(self.records),
                "mae_jump": self.mae_jump, "mae_slwe": self.mae_slwe, "mae_mean": self.mae_mean,
                "skipped_articles": self.skipped_articles, "jumps": self.jumps,
                "settings": self.settings}


def track_and_score(articles: Iterable[Article], lists: KeywordLists, lam: float = 0.96,
                    threshold: float = 30.0, slwe_lam: float = 0.99, cadence: int = 10,
                    warmup: int = 2, policy: JumpPolicy | None = None) -> TrackResult:
    """Run the jump tracker and a plain weak estimator over the keyword stream."""
    r = lists.r
    tracker = MultinomialTracker(r, lam, TestConfig(threshold=threshold, cadence=cadence,
                                                    warmup=warmup), policy)
    slwe = VectorSlweState(slwe_lam, r)
    mean = VectorMeanState(r)
    records: list[TrackRecord] = []
    skipped = 0
    err_j = err_s = err_m = 0.0
    for a_idx, art in enumerate(articles):
        mapped = map_stream(art.tokens, lists)
        if not mapped:
            skipped += 1
            continue
        off = offline_estimate(art.tokens, lists)
        for k in mapped:
            est_j = tracker.step(k).estimate
            est_s = slwe.update(k)
            est_m = mean.update(k)
            err_j += sum(abs(a - b) for a, b in zip(est_j, off)) / r
            err_s += sum(abs(a - b) for a, b in zip(est_s, off)) / r
            err_m += sum(abs(a - b) for a, b in zip(est_m, off)) / r
            records.append(TrackRecord(len(records) + 1, k, a_idx, tuple(est_j), tuple(est_s),
                                       tuple(off)))
    if not records:
        raise NoKeywordsError("mapped stream is empty: no keywords in any article")
    n = len(records)
    settings = {"lambda": lam, "threshold": threshold, "slwe_lambda": slwe_lam,
                "cadence": cadence, "warmup": warmup, "policy": tracker.policy.to_dict()}
    return TrackResult(lists.topics, records, err_j / n, err_s / n, err_m / n, skipped,
                       len(tracker.jumps), settings)


def cross_validate(corpus: LabeledCorpus, k: int, topics: Sequence[str] | None = None,
                   **track_kwargs) -> list[TrackResult]:
    """Two folds split by article parity: keywords from one half, tracking on the other."""
    even, odd = corpus.split_parity()
    topics = tuple(topics) if topics is not None else tuple(corpus.labels())
    out = []
    for train, test in ((even, odd), (odd, even)):
        lists = pmi_keywords(train, k, topics)
        out.append(track_and_score(test.articles, lists, **track_kwargs))
    return out


# synthetic corpus --------------------------------------------------------------

_ONSETS = ("b", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "sk", "st", "tr")
_VOWELS = ("a", "e", "i", "o", "u", "y", "ø", "å")


def _pseudo_words(rng: np.random.Generator, n: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < n:
        syll = int(rng.integers(2, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(syll))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def _zipf(n: int, s: float = 1.0) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def synthetic_corpus(seed: int = BUNDLED_SEED, topics: Sequence[str] = BUNDLED_TOPICS,
                     n_articles: int = 160, words_per_topic: int = 80, filler_words: int = 200,
                     length_range: tuple[int, int] = (150, 450), filler_share: float = 0.55,
                     own_share: float = 0.8, mean_run: float = 3.0) -> LabeledCorpus:
    """Topic-skewed pseudo-word news feed.

    Each topic has its own Zipf-distributed vocabulary; a shared filler
    vocabulary supplies the rest of every article.  An article's non-filler
    words come from its own topic with probability around ``own_share`` (with
    per-article Dirichlet variation) and from the other topics otherwise.
    Consecutive articles keep the same topic for a geometric number of
    articles with mean ``mean_run``.
    """
    rng = make_rng(np.random.SeedSequence(seed))
    taken: set[str] = set()
    filler = _pseudo_words(rng, filler_words, taken)
    vocab = [_pseudo_words(rng, words_per_topic, taken) for _ in topics]
    r = len(topics)
    filler_p = _zipf(filler_words, 1.1)
    topic_p = _zipf(words_per_topic, 0.9)
    articles = []
    label = int(rng.integers(r))
    while len(articles) < n_articles:
        run = int(rng.geometric(1.0 / mean_run))
        for _ in range(run):
            if len(articles) >= n_articles:
                break
            length = int(rng.integers(length_range[0], length_range[1] + 1))
            spill = rng.dirichlet(np.ones(r - 1))
            own = float(np.clip(rng.normal(own_share, 0.08), 0.5, 0.98))
            mix = np.empty(r)
            mix[label] = own
            mix[np.arange(r) != label] = (1.0 - own) * spill
            is_filler = rng.random(length) < filler_share
            topic_of = rng.choice(r, size=length, p=mix)
            f_idx = rng.choice(filler_words, size=length, p=filler_p)
            t_idx = rng.choice(words_per_topic, size=length, p=topic_p)
            tokens = tuple(filler[f] if fl else vocab[t][w]
                           for fl, t, f, w in zip(is_filler, topic_of, f_idx, t_idx))
            articles.append(Article(topics[label], tokens))
        others = [j for j in range(r) if j != label]
        label = others[int(rng.integers(len(others)))]
    return LabeledCorpus(articles)


def bundled_corpus_path() -> Path:
    return Path(str(resources.files("slwejump") / "data" / "synthetic_news.jsonl"))


def bundled_corpus() -> LabeledCorpus:
    """The synthetic corpus shipped with the package (``synthetic_corpus()`` output)."""
    return LabeledCorpus.read_jsonl(bundled_corpus_path())
