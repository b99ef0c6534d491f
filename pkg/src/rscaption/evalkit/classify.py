"""Zero-shot and few-shot classification from precomputed embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SETTINGS = ("A", "B", "C", "D")
CLASSIFIER = "nearest centroid, cosine, unit-normalized supports"


class ClassifyError(ValueError):
    pass


@dataclass
class EmbeddingSet:
    vectors: np.ndarray
    labels: np.ndarray
    norm_flag: bool = False
    # optional per-row "is in the test subset" mask, used by settings A and B
    test_mask: np.ndarray | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.vectors.ndim != 2:
            raise ClassifyError("vectors must be N x D")
        if self.labels.shape != (self.vectors.shape[0],):
            raise ClassifyError("one label per vector required")
        if self.labels.size and self.labels.min() < 0:
            raise ClassifyError("labels must be non-negative class indices")
        if self.test_mask is not None:
            self.test_mask = np.asarray(self.test_mask, dtype=bool)
            if self.test_mask.shape != self.labels.shape:
                raise ClassifyError("test_mask must match labels")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def unit(self) -> np.ndarray:
        return _unit(self.vectors)


def _unit(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(n == 0, 1.0, n)


def zero_shot_top1(images: EmbeddingSet, class_texts: np.ndarray) -> float:
    """Top-1 accuracy (percent) of argmax cosine similarity against class-prompt embeddings.

    Ties go to the lowest class index.
    """
    texts = np.asarray(class_texts, dtype=np.float64)
    if texts.ndim != 2 or texts.shape[1] != images.dim:
        raise ClassifyError(f"dimension mismatch: images D={images.dim}, class texts {texts.shape}")
    if images.labels.size and images.labels.max() >= texts.shape[0]:
        raise ClassifyError("labels exceed the number of class prompts")
    sims = images.unit() @ _unit(texts).T
    pred = np.argmax(sims, axis=1)
    return 100.0 * float(np.mean(pred == images.labels))


@dataclass(frozen=True)
class EpisodeConfig:
    n_way: int = 5
    k_shot: int = 1
    n_query: int = 15
    n_episodes: int = 600
    seed: int = 0
    setting: str = "A"

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ClassifyError(f"setting must be one of {SETTINGS}")
        if min(self.n_way, self.k_shot, self.n_query, self.n_episodes) < 1:
            raise ClassifyError("n_way, k_shot, n_query and n_episodes must be >= 1")


def _pool(e: EmbeddingSet, cfg: EpisodeConfig) -> tuple[np.ndarray, np.ndarray]:
    if cfg.setting in ("A", "B") and e.test_mask is not None:
        keep = e.test_mask
        return e.vectors[keep], e.labels[keep]
    return e.vectors, e.labels


def few_shot_eval(e: EmbeddingSet, cfg: EpisodeConfig) -> tuple[float, float]:
    """Mean episode accuracy (percent) and its 95% half-width ``1.96 * std / sqrt(E)``.

    Settings A and B draw from the test subset, C and D from everything; B and
    D use every class in each episode, A and C sample ``n_way`` classes.
    """
    vectors, labels = _pool(e, cfg)
    vectors = _unit(vectors)
    classes = np.unique(labels)
    need = cfg.k_shot + cfg.n_query
    members = {int(c): np.flatnonzero(labels == c) for c in classes}
    for c, idx in members.items():
        if idx.size < need:
            raise ClassifyError(f"class {c} has {idx.size} samples, needs {need} (k_shot + n_query)")
    all_classes = cfg.setting in ("B", "D")
    n_way = classes.size if all_classes else cfg.n_way
    if n_way > classes.size:
        raise ClassifyError(f"n_way={n_way} exceeds {classes.size} available classes")

    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_episodes)
    accs = np.empty(cfg.n_episodes)
    for ep, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        chosen = classes if all_classes else rng.choice(classes, size=n_way, replace=False)
        protos, queries, q_labels = [], [], []
        for way, c in enumerate(chosen):
            pick = rng.choice(members[int(c)], size=need, replace=False)
            protos.append(vectors[pick[: cfg.k_shot]].mean(axis=0))
            queries.append(vectors[pick[cfg.k_shot :]])
            q_labels.append(np.full(cfg.n_query, way))
        centroids = _unit(np.stack(protos))
        q = np.concatenate(queries)
        pred = np.argmax(q @ centroids.T, axis=1)
        accs[ep] = np.mean(pred == np.concatenate(q_labels))
    mean = 100.0 * float(accs.mean())
    half = 100.0 * 1.96 * float(accs.std()) / np.sqrt(cfg.n_episodes)
    return mean, float(half)
