"""Cross-modal retrieval recall from a precomputed image x text score matrix."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .. import _accel

I2T, T2I = "I2T", "T2I"
TIE_BREAK = "ascending index"


class RetrievalError(ValueError):
    pass


@dataclass
class SimilarityMatrix:
    """``scores[i, t]`` is the similarity of image ``i`` and text ``t``;
    ``caption_map[t]`` is the image that owns text ``t``."""

    scores: np.ndarray
    caption_map: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.caption_map = np.asarray(self.caption_map, dtype=np.int64)
        if self.scores.ndim != 2:
            raise RetrievalError("scores must be a 2-D matrix")
        n_img, n_txt = self.scores.shape
        if self.caption_map.shape != (n_txt,):
            raise RetrievalError(f"caption_map needs {n_txt} entries, got {self.caption_map.shape}")
        if not np.isfinite(self.scores).all():
            raise RetrievalError("scores must be finite")
        if n_txt and (self.caption_map.min() < 0 or self.caption_map.max() >= n_img):
            raise RetrievalError("caption_map points outside the image range")
        orphans = np.setdiff1d(np.arange(n_img), self.caption_map)
        if orphans.size:
            raise RetrievalError(f"images without captions: {orphans[:10].tolist()}")

    @property
    def n_images(self) -> int:
        return self.scores.shape[0]

    @property
    def n_texts(self) -> int:
        return self.scores.shape[1]

    @cached_property
    def ranks_i2t(self) -> np.ndarray:
        order = np.argsort(self.caption_map, kind="stable")
        counts = np.bincount(self.caption_map, minlength=self.n_images)
        ptr = np.concatenate([[0], np.cumsum(counts)])
        return _accel.best_ranks(self.scores, ptr, order)

    @cached_property
    def ranks_t2i(self) -> np.ndarray:
        ptr = np.arange(self.n_texts + 1)
        return _accel.best_ranks(self.scores.T, ptr, self.caption_map)


def recall_at_k(m: SimilarityMatrix, k: int, direction: str = I2T) -> float:
    """Percentage of queries whose ground truth appears in the top ``k``.

    I2T queries are images (hit if any owned caption is retrieved); T2I
    queries are texts. Ties are ranked by ascending index.
    """
    if k < 1:
        raise RetrievalError("k must be >= 1")
    if direction == I2T:
        if k > m.n_texts:
            raise RetrievalError(f"k={k} exceeds {m.n_texts} texts")
        ranks = m.ranks_i2t
    elif direction == T2I:
        if k > m.n_images:
            raise RetrievalError(f"k={k} exceeds {m.n_images} images")
        ranks = m.ranks_t2i
    else:
        raise RetrievalError(f"direction must be I2T or T2I, got {direction!r}")
    return 100.0 * float(np.count_nonzero(ranks < k)) / ranks.size


def mean_recall(m: SimilarityMatrix, ks: tuple[int, ...] = (1, 5, 10)) -> float:
    vals = [recall_at_k(m, k, d) for d in (I2T, T2I) for k in ks]
    return sum(vals) / len(vals)


def retrieval_report(m: SimilarityMatrix, ks: tuple[int, ...] = (1, 5, 10)) -> dict[str, float]:
    out = {f"{d.lower()}_r{k}": recall_at_k(m, k, d) for d in (I2T, T2I) for k in ks}
    out["mean_recall"] = sum(out.values()) / len(out)
    return out
