"""Corpus statistics: caption lengths, word frequencies, score histograms."""

from __future__ import annotations

import re
from collections import Counter
from typing import Any, Sequence

import numpy as np

STOPWORDS = frozenset(
    """a an the and or of in on at to with by for from is are was were be been this that these those
    it its as there their which while into onto over under near along some several many few its
    image images photo picture shows showing can has have also other such""".split()
)
_WORD = re.compile(r"[a-z][a-z'-]*")


class StatsError(ValueError):
    pass


def histogram_table(values: Sequence[float], bins: int | Sequence[float] = 10, value_range=None) -> list[dict[str, Any]]:
    counts, edges = np.histogram(np.asarray(values, dtype=np.float64), bins=bins, range=value_range)
    return [
        {"lo": float(edges[i]), "hi": float(edges[i + 1]), "count": int(counts[i])}
        for i in range(len(counts))
    ]


def caption_stats(
    captions: Sequence[str],
    bins: int | Sequence[float] | None = None,
    top_k: int = 20,
    stopwords: frozenset[str] = STOPWORDS,
) -> dict[str, Any]:
    """Mean/median word count, length histogram and top words without stopwords.

    Default bins are 5 words wide starting at zero.
    """
    if not captions:
        raise StatsError("no captions")
    lengths = np.array([len(c.split()) for c in captions])
    if bins is None:
        bins = np.arange(0, lengths.max() + 6, 5)
    words: Counter = Counter()
    for c in captions:
        words.update(w for w in _WORD.findall(c.lower()) if w not in stopwords)
    top = sorted(words.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    return {
        "count": len(captions),
        "mean_words": float(lengths.mean()),
        "median_words": float(np.median(lengths)),
        "length_histogram": histogram_table(lengths, bins),
        "top_words": [[w, n] for w, n in top],
    }


def similarity_histogram(scores: Sequence[float], bins: int | Sequence[float] = 20, value_range=None) -> list[dict[str, Any]]:
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise StatsError("no scores")
    if not np.isfinite(s).all():
        raise StatsError("scores must be finite")
    return histogram_table(s, bins, value_range)
