"""Corpus loading, annotation cleaning, tiling and perceptual-hash dedup."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.fft import dctn

from . import _accel

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".tif", ".tiff", ".bmp", ".webp", ".gif"}
DEFAULT_MIN_AREA_FRACTION = 0.25


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class BBox:
    label: str
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise IngestError("degenerate bbox")

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    @property
    def center(self) -> tuple[float, float]:
        return (self.xmin + self.xmax) / 2, (self.ymin + self.ymax) / 2

    def to_dict(self) -> dict[str, Any]:
        return {"label": self.label, "xmin": self.xmin, "ymin": self.ymin, "xmax": self.xmax, "ymax": self.ymax}


@dataclass
class ImageRecord:
    id: str
    source_dataset: str
    path: str
    width: int
    height: int
    split: str = "train"
    bboxes: list[BBox] = field(default_factory=list)
    class_label: str | None = None
    parent_id: str | None = None
    # tile position (row, col) and crop window in parent pixels
    tile_index: tuple[int, int] | None = None
    crop: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise IngestError(f"{self.id}: non-positive image size {self.width}x{self.height}")
        if self.split not in SPLITS:
            raise IngestError(f"{self.id}: unknown split {self.split!r}")
        for b in self.bboxes:
            if b.xmin < 0 or b.ymin < 0 or b.xmax > self.width or b.ymax > self.height:
                raise IngestError(f"{self.id}: bbox {b.to_dict()} outside {self.width}x{self.height}")

    @property
    def annotated(self) -> bool:
        return bool(self.bboxes) or bool(self.class_label)

    @property
    def image_ref(self) -> str:
        """Path string handed to generative backends; tiles carry their crop."""
        if self.crop is None:
            return self.path
        return f"{self.path}#crop={','.join(str(v) for v in self.crop)}"

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "id": self.id,
            "source": self.source_dataset,
            "path": self.path,
            "width": self.width,
            "height": self.height,
            "split": self.split,
            "class": self.class_label,
            "bboxes": [b.to_dict() for b in self.bboxes],
            "parent_id": self.parent_id,
        }
        if self.tile_index is not None:
            d["tile_index"] = list(self.tile_index)
            d["crop"] = list(self.crop)
        return d

    @classmethod
    def from_dict(cls, row: dict[str, Any]) -> "ImageRecord":
        missing = [k for k in ("id", "source", "path", "width", "height") if k not in row]
        if missing:
            raise IngestError(f"missing field(s): {', '.join(missing)}")
        bboxes = []
        for b in row.get("bboxes") or []:
            bboxes.append(BBox(str(b["label"]), b["xmin"], b["ymin"], b["xmax"], b["ymax"]))
        tile = row.get("tile_index")
        crop = row.get("crop")
        return cls(
            id=str(row["id"]),
            source_dataset=str(row["source"]),
            path=str(row["path"]),
            width=int(row["width"]),
            height=int(row["height"]),
            split=row.get("split") or "train",
            bboxes=bboxes,
            class_label=row.get("class"),
            parent_id=row.get("parent_id"),
            tile_index=tuple(tile) if tile is not None else None,
            crop=tuple(crop) if crop is not None else None,
        )


@dataclass
class CleaningRules:
    drop_labels: set[str] = field(default_factory=set)
    rename_map: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.drop_labels = set(self.drop_labels)
        overlap = self.drop_labels & set(self.rename_map)
        if overlap:
            raise IngestError(f"labels both dropped and renamed: {sorted(overlap)}")
        for start in self.rename_map:
            seen = {start}
            cur = self.rename_map[start]
            while cur in self.rename_map:
                if cur in seen:
                    raise IngestError(f"rename cycle through {start!r}")
                seen.add(cur)
                cur = self.rename_map[cur]

    def resolve(self, label: str) -> str:
        while label in self.rename_map:
            label = self.rename_map[label]
        return label

    @classmethod
    def from_dict(cls, d: dict[str, Any] | None) -> "CleaningRules":
        d = d or {}
        return cls(set(d.get("drop_labels") or ()), dict(d.get("rename_map") or {}))


@dataclass
class Exclusion:
    id: str
    reason: str
    detail: str = ""

    def to_dict(self) -> dict[str, str]:
        return {"id": self.id, "reason": self.reason, "detail": self.detail}


@dataclass
class ParsedCorpus:
    records: list[ImageRecord]
    errors: list[dict[str, Any]] = field(default_factory=list)
    excluded: list[Exclusion] = field(default_factory=list)


# --------------------------------------------------------------------------
# parsing


def _image_size(path: Path) -> tuple[int, int]:
    try:
        with Image.open(path) as im:
            return im.size
    except (OSError, UnidentifiedImageError) as exc:
        raise IngestError("unreadable image") from exc


def parse_corpus(root: str | Path, layout: str = "annotation-manifest", source: str | None = None) -> ParsedCorpus:
    """Load a corpus into normalized records.

    ``class-folders``: one subdirectory per class, every image file inside
    becomes a record labeled with the folder name. ``annotation-manifest``:
    ``root`` is a JSONL file (or a directory holding ``manifest.jsonl``).
    Bad rows land in ``errors``; unannotated images land in ``excluded``.
    """
    root = Path(root)
    if not root.exists():
        raise FileNotFoundError(f"corpus root does not exist: {root}")
    if layout == "class-folders":
        return _parse_class_folders(root, source or root.name)
    if layout == "annotation-manifest":
        manifest = root / "manifest.jsonl" if root.is_dir() else root
        return _parse_manifest(manifest)
    raise IngestError(f"unknown layout {layout!r}")


def _parse_class_folders(root: Path, source: str) -> ParsedCorpus:
    out = ParsedCorpus(records=[])
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for img in sorted(class_dir.iterdir()):
            if img.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            rid = f"{source}/{class_dir.name}/{img.stem}"
            try:
                w, h = _image_size(img)
                out.records.append(
                    ImageRecord(rid, source, str(img), w, h, class_label=class_dir.name)
                )
            except IngestError as exc:
                out.errors.append({"id": rid, "path": str(img), "error": str(exc)})
    return out


def _parse_manifest(manifest: Path) -> ParsedCorpus:
    out = ParsedCorpus(records=[])
    base = manifest.parent
    with open(manifest, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                if not isinstance(row, dict):
                    raise IngestError("row is not an object")
                row = dict(row)
                if row.get("mask"):
                    row["bboxes"] = list(row.get("bboxes") or []) + _mask_bboxes(row, base)
                rec = ImageRecord.from_dict(row)
            except (IngestError, KeyError, TypeError, ValueError) as exc:
                msg = str(exc) if not isinstance(exc, KeyError) else f"missing key {exc}"
                out.errors.append({"line": lineno, "id": _safe_id(line), "error": msg})
                continue
            if not Path(rec.path).is_absolute():
                rec.path = str(base / rec.path)
            if not rec.annotated:
                out.excluded.append(Exclusion(rec.id, "unannotated"))
                continue
            out.records.append(rec)
    return out


def _safe_id(line: str) -> str | None:
    try:
        return json.loads(line).get("id")
    except Exception:
        return None


def read_label_table(path: str | Path) -> dict[int, str]:
    """``index<TAB>class name`` per line."""
    table: dict[int, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        idx, name = line.split("\t", 1)
        table[int(idx)] = name.strip()
    return table


def _mask_bboxes(row: dict[str, Any], base: Path) -> list[dict[str, Any]]:
    from .rulegen import m2b

    mask_path = base / row["mask"]
    table_path = base / row["mask_labels"]
    mask = np.asarray(Image.open(mask_path))
    if mask.ndim != 2:
        raise IngestError("mask must be single-channel")
    return [b.to_dict() for b in m2b(mask, read_label_table(table_path))]


def write_records(records: Iterable[ImageRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")


def read_records(path: str | Path) -> list[ImageRecord]:
    with open(path, encoding="utf-8") as fh:
        return [ImageRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


# --------------------------------------------------------------------------
# cleaning


def clean_annotations(records: Sequence[ImageRecord], rules: CleaningRules) -> tuple[list[ImageRecord], list[Exclusion]]:
    kept, excluded = [], []
    for rec in records:
        boxes = [replace(b, label=rules.resolve(b.label)) for b in rec.bboxes]
        boxes = [b for b in boxes if b.label and b.label not in rules.drop_labels]
        cls = rec.class_label
        if cls is not None:
            cls = rules.resolve(cls)
            if cls in rules.drop_labels:
                cls = None
        new = replace(rec, bboxes=boxes, class_label=cls)
        if not new.annotated:
            excluded.append(Exclusion(rec.id, "empty after cleaning"))
            continue
        kept.append(new)
    return kept, excluded


# --------------------------------------------------------------------------
# tiling


def tile_image(
    record: ImageRecord,
    window_w: int,
    window_h: int,
    min_area_fraction: float = DEFAULT_MIN_AREA_FRACTION,
) -> list[ImageRecord]:
    """Split an image into non-overlapping windows anchored at (0, 0).

    Edge tiles keep their reduced size. Boxes are clipped per tile and kept
    when at least ``min_area_fraction`` of their original area survives.
    """
    if window_w <= 0 or window_h <= 0:
        raise IngestError("window must be positive")
    if record.parent_id is not None:
        raise IngestError(f"{record.id}: already a tile")
    if window_w >= record.width and window_h >= record.height:
        return [record]
    tiles = []
    n_rows = math.ceil(record.height / window_h)
    n_cols = math.ceil(record.width / window_w)
    for r in range(n_rows):
        y0 = r * window_h
        y1 = min(y0 + window_h, record.height)
        for c in range(n_cols):
            x0 = c * window_w
            x1 = min(x0 + window_w, record.width)
            boxes = []
            for b in record.bboxes:
                cx0, cy0 = max(b.xmin, x0), max(b.ymin, y0)
                cx1, cy1 = min(b.xmax, x1), min(b.ymax, y1)
                if cx0 >= cx1 or cy0 >= cy1:
                    continue
                if (cx1 - cx0) * (cy1 - cy0) < min_area_fraction * b.area:
                    continue
                boxes.append(BBox(b.label, cx0 - x0, cy0 - y0, cx1 - x0, cy1 - y0))
            tiles.append(
                ImageRecord(
                    id=f"{record.id}#r{r}c{c}",
                    source_dataset=record.source_dataset,
                    path=record.path,
                    width=x1 - x0,
                    height=y1 - y0,
                    split=record.split,
                    bboxes=boxes,
                    class_label=record.class_label,
                    parent_id=record.id,
                    tile_index=(r, c),
                    crop=(x0, y0, x1, y1),
                )
            )
    return tiles


# --------------------------------------------------------------------------
# perceptual hash


def phash(pixels: np.ndarray) -> int:
    """64-bit DCT hash of a grayscale matrix.

    Resize to 32x32 (bilinear), 2-D DCT-II, keep the 8x8 low-frequency block
    with the DC coefficient zeroed, and set bit ``i`` (row-major, MSB first)
    iff the coefficient is strictly above the block median.
    """
    arr = np.asarray(pixels, dtype=np.float32)
    if arr.ndim != 2 or arr.size == 0:
        raise IngestError("unreadable image")
    small = Image.fromarray(arr).resize((32, 32), Image.Resampling.BILINEAR)
    coeffs = dctn(np.asarray(small, dtype=np.float64), type=2, norm="ortho")
    block = coeffs[:8, :8].copy()
    block[0, 0] = 0.0
    bits = (block > np.median(block)).ravel()
    value = 0
    for b in bits:
        value = (value << 1) | int(b)
    return value


def load_gray(path: str | Path) -> np.ndarray:
    """Grayscale pixels of an image file; a ``#crop=x0,y0,x1,y1`` suffix crops."""
    path = str(path)
    crop = None
    if "#crop=" in path:
        path, spec = path.split("#crop=", 1)
        crop = tuple(int(v) for v in spec.split(","))
    try:
        with Image.open(path) as im:
            im = im.convert("L")
            if crop is not None:
                im = im.crop(crop)
            return np.asarray(im, dtype=np.float32)
    except (OSError, UnidentifiedImageError) as exc:
        raise IngestError("unreadable image") from exc


def phash_file(path: str | Path) -> int:
    return phash(load_gray(path))


def hamming(a: int, b: int) -> int:
    return (a ^ b).bit_count()


def dedup(
    records: Sequence[ImageRecord],
    hamming_threshold: int = 0,
    hashes: Sequence[int] | None = None,
) -> tuple[list[ImageRecord], list[Exclusion]]:
    """Drop repeated ids and near-duplicate images; first occurrence wins."""
    if not 0 <= hamming_threshold <= 10:
        raise IngestError("hamming_threshold must be within [0, 10]")
    if hashes is None:
        hashes = [phash_file(r.image_ref) for r in records]
    if len(hashes) != len(records):
        raise IngestError("one hash per record required")
    dropped: list[Exclusion] = []
    seen_ids: set[str] = set()
    unique_idx = []
    for i, r in enumerate(records):
        if r.id in seen_ids:
            dropped.append(Exclusion(r.id, "duplicate id"))
            continue
        seen_ids.add(r.id)
        unique_idx.append(i)
    arr = np.fromiter((hashes[i] for i in unique_idx), dtype=np.uint64, count=len(unique_idx))
    match = _accel.greedy_dedup(arr, hamming_threshold)
    kept = []
    for pos, i in enumerate(unique_idx):
        if match[pos] < 0:
            kept.append(records[i])
        else:
            first = records[unique_idx[match[pos]]]
            dist = hamming(int(hashes[i]), int(hashes[unique_idx[match[pos]]]))
            dropped.append(Exclusion(records[i].id, "near-duplicate", f"of {first.id} at distance {dist}"))
    return kept, dropped
