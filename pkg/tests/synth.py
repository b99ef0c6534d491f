"""Synthetic corpora and configs shared by the tests."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

LABELS = ["car", "truck", "ship", "airplane", "storage_tank"]
CLASSES = ["forest", "harbor", "runway"]


def texture(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Smooth random image; distinct seeds give far-apart perceptual hashes."""
    coarse = rng.uniform(0, 255, (8, 8))
    img = Image.fromarray(coarse.astype(np.uint8)).resize((size, size), Image.BILINEAR)
    return np.asarray(img)


def save_png(path: Path, pixels: np.ndarray) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(path)
    return path


def make_detection_corpus(root: Path, n: int, seed: int = 0, size: int = 64) -> Path:
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        save_png(root / "images" / f"img{i:03d}.png", texture(rng, size))
        boxes = []
        for _ in range(int(rng.integers(1, 5))):
            x0, y0 = rng.integers(0, size - 8, 2)
            w, h = rng.integers(4, 8, 2)
            boxes.append({"label": LABELS[int(rng.integers(len(LABELS)))],
                          "xmin": int(x0), "ymin": int(y0), "xmax": int(x0 + w), "ymax": int(y0 + h)})
        rows.append({"id": f"det/{i:03d}", "source": "det", "path": f"images/img{i:03d}.png",
                     "width": size, "height": size, "split": "train", "bboxes": boxes})
    manifest = root / "manifest.jsonl"
    manifest.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return manifest


def make_class_corpus(root: Path, per_class: int, seed: int = 1, size: int = 64) -> Path:
    rng = np.random.default_rng(seed)
    for c in CLASSES:
        for i in range(per_class):
            save_png(root / c / f"{c}_{i}.png", texture(rng, size))
    return root


def mock_profile(**kw) -> dict:
    return {"kind": "mock", "max_in_flight": 4, **kw}


def write_config(tmp: Path, corpus: list[dict], out: str = "out", **extra) -> Path:
    cfg = {
        "seed": 7,
        "output_dir": out,
        "corpus": corpus,
        "backends": {"mllm_a": mock_profile(), "mllm_b": mock_profile(), "llm": mock_profile()},
        "fusion": {"alpha": 0.5, "seed": 3},
        **extra,
    }
    path = tmp / "run.yaml"
    path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    return path


def jpeg_gamma(pixels: np.ndarray, gamma: float, quality: int = 90) -> np.ndarray:
    """Re-upload style copy: gamma-corrected and JPEG re-encoded."""
    import io

    adjusted = (255.0 * (pixels / 255.0) ** gamma).round().astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(adjusted).save(buf, "JPEG", quality=quality)
    buf.seek(0)
    return np.asarray(Image.open(buf).convert("L"))


def make_dedup_corpus(root: Path, seed: int = 0, n_unique: int = 60, n_exact: int = 20, n_near: int = 20):
    """Unique textures plus injected byte-identical copies and near-duplicates.

    A near-duplicate is a gamma + JPEG re-encode of an original whose hash is
    not identical to it (a copy with an identical hash cannot be told apart
    from an exact copy by any hash threshold). Originals whose hash survives
    every drawn gamma are skipped in favour of the next candidate.
    Returns ``(records, exact_ids, near_ids)``; injected copies follow all originals.
    """
    from rscaption.ingest import ImageRecord, phash

    rng = np.random.default_rng(seed)
    originals = [texture(rng, 128) for _ in range(n_unique)]
    records = []
    for i, px in enumerate(originals):
        p = save_png(root / f"u{i:03d}.png", px)
        records.append(ImageRecord(f"u{i:03d}", "synth", str(p), 128, 128, class_label="scene"))
    exact_ids, near_ids = [], []
    order = rng.permutation(n_unique)
    for k, src in enumerate(order[:n_exact]):
        p = save_png(root / f"x{k:03d}.png", originals[src])
        records.append(ImageRecord(f"x{k:03d}", "synth", str(p), 128, 128, class_label="scene"))
        exact_ids.append(f"x{k:03d}")
    candidates = iter(order[n_exact:])
    while len(near_ids) < n_near:
        src = next(candidates)
        h0 = phash(originals[src].astype(float))
        for _ in range(20):
            near = jpeg_gamma(originals[src], float(rng.uniform(1.1, 1.4)))
            if phash(near.astype(float)) != h0:
                break
        else:
            continue
        k = len(near_ids)
        p = save_png(root / f"n{k:03d}.png", near)
        records.append(ImageRecord(f"n{k:03d}", "synth", str(p), 128, 128, class_label="scene"))
        near_ids.append(f"n{k:03d}")
    return records, exact_ids, near_ids


# five reference captions of one dense-residential scene: (1) and (3) say nearly
# the same thing, (4) and (5) are identical and ungrammatical, as is common in
# crowd-written retrieval test sets
LONGRET_FIVE = [
    "Many buildings and some green trees are in a dense residential area.",
    "Lots of houses with gray roofs are arranged neatly along the road.",
    "Many buildings and several trees are in this dense residential area.",
    "many building are in dense residential area .",
    "many building are in dense residential area .",
]
