"""Rule-based descriptions from annotations: masks to boxes, A2D sentences, class seeds."""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from . import _accel
from .genbridge import GenRequest, Message
from .ingest import BBox

CENTER = "Center"
EDGE = "Edge"

NUMBER_WORDS = {1: "one", 2: "two", 3: "three", 4: "four", 5: "five",
                6: "six", 7: "seven", 8: "eight", 9: "nine", 10: "ten"}


class RuleError(ValueError):
    pass


@dataclass(frozen=True)
class RegionAssignment:
    bbox: BBox
    region: str


@dataclass(frozen=True)
class RuleCaption:
    image_id: str
    sentence_rule1: str
    sentence_rule2: str
    method: str = "A2D"

    @property
    def text(self) -> str:
        return f"{self.sentence_rule1} {self.sentence_rule2}"


# --------------------------------------------------------------------------
# M2B


def m2b(
    mask: np.ndarray,
    label_table: Mapping[int, str],
    background: int = 0,
    connectivity: int = 4,
) -> list[BBox]:
    """One tight box per connected component per class in a label mask."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise RuleError("mask must be 2-D")
    if connectivity not in (4, 8):
        raise RuleError("connectivity must be 4 or 8")
    present = {int(v) for v in np.unique(mask)} - {background}
    unknown = sorted(present - set(label_table))
    if unknown:
        raise RuleError(f"mask labels missing from label table: {unknown}")
    bg = {i for i, name in label_table.items() if name.lower() == "background"} | {background}
    rows = _accel.component_boxes(mask, background=background, connectivity=connectivity)
    return [
        BBox(label_table[int(v)], int(x0), int(y0), int(x1), int(y1))
        for v, x0, y0, x1, y1 in rows
        if int(v) not in bg
    ]


# --------------------------------------------------------------------------
# regions and phrases


def classify_region(bbox: BBox, width: float, height: float) -> str:
    """Center iff the box midpoint lies in [W/4, 3W/4) x [H/4, 3H/4)."""
    cx, cy = bbox.center
    if width / 4 <= cx < 3 * width / 4 and height / 4 <= cy < 3 * height / 4:
        return CENTER
    return EDGE


@lru_cache(maxsize=1)
def irregular_plurals() -> dict[str, str]:
    table = {}
    text = resources.files("rscaption.data").joinpath("irregular_plurals.tsv").read_text(encoding="utf-8")
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        singular, plural = line.split("\t")
        table[singular.strip()] = plural.strip()
    return table


def pluralize(noun: str) -> str:
    words = noun.split(" ")
    last = words[-1]
    low = last.lower()
    irregular = irregular_plurals()
    if low in irregular:
        plural = irregular[low]
    elif low.endswith(("s", "x", "z", "ch", "sh")):
        plural = last + "es"
    elif len(low) > 1 and low.endswith("y") and low[-2] not in "aeiou":
        plural = last[:-1] + "ies"
    else:
        plural = last + "s"
    return " ".join(words[:-1] + [plural])


def count_phrase(label: str, n: int) -> str:
    if n < 1:
        raise RuleError("count must be >= 1")
    noun = label.replace("_", " ").strip()
    number = NUMBER_WORDS.get(n, str(n))
    return f"{number} {noun if n == 1 else pluralize(noun)}"


def _join(parts: Sequence[str]) -> str:
    if len(parts) == 1:
        return parts[0]
    return ", ".join(parts[:-1]) + " and " + parts[-1]


def _counts(labels: Sequence[str]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    return counts


def _phrase_list(counts: Mapping[str, int]) -> tuple[str, str]:
    # existential verb agrees with the first conjunct
    first = next(iter(counts.values()))
    verb = "is" if first == 1 else "are"
    return verb, _join([count_phrase(lab, n) for lab, n in counts.items()])


def a2d(bboxes: Sequence[BBox], width: float, height: float, image_id: str = "") -> RuleCaption:
    if not bboxes:
        raise RuleError("nothing to describe")
    verb, phrase = _phrase_list(_counts([b.label for b in bboxes]))
    rule1 = f"There {verb} {phrase} in this image."

    center = _counts([b.label for b in bboxes if classify_region(b, width, height) == CENTER])
    edge = _counts([b.label for b in bboxes if classify_region(b, width, height) == EDGE])
    if center and edge:
        cverb, cphrase = _phrase_list(center)
        _, ephrase = _phrase_list(edge)
        rule2 = f"There {cverb} {cphrase} in the center of this image and {ephrase} at the edge of this image."
    elif center:
        cverb, cphrase = _phrase_list(center)
        rule2 = f"There {cverb} {cphrase} in the center of this image."
    else:
        everb, ephrase = _phrase_list(edge)
        rule2 = f"There {everb} {ephrase} at the edge of this image."
    return RuleCaption(image_id, rule1, rule2, "A2D")


# --------------------------------------------------------------------------
# Rule-MLLM relay for classification folders


def cls_seed_caption(class_name: str) -> str:
    name = class_name.replace("_", " ").strip()
    if not name:
        raise RuleError("class name is empty")
    return f"a photo of {name}"


EXPANSION_PROMPT = (
    "The {n} attached remote sensing images all belong to the same scene class. "
    "Their basic caption is: \"{seed}\". Identify the visual features these images have in common "
    "(objects, layout, colors, textures, spatial arrangement) and expand the basic caption into one "
    "detailed description that holds for every image of this class. Describe only what is visible; "
    "do not mention times, places or image sources."
)


def class_seed(seed: int, class_name: str) -> int:
    digest = hashlib.sha256(f"{seed}:{class_name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def build_class_expansion_request(
    class_name: str,
    image_pool: Sequence[str],
    seed: int,
    backend_profile: str = "relay",
    n_images: int = 9,
    temperature: float = 0.0,
) -> GenRequest:
    """Sample ``n_images`` refs from a class folder and ask for a seed-caption expansion.

    Pools smaller than ``n_images`` are sampled with replacement and the request
    is flagged ``meta["resampled"]``.
    """
    if not image_pool:
        raise RuleError(f"class {class_name!r} has no images")
    seed_caption = cls_seed_caption(class_name)
    rng = random.Random(class_seed(seed, class_name))
    pool = sorted(image_pool)
    resampled = len(pool) < n_images
    picks = rng.choices(pool, k=n_images) if resampled else rng.sample(pool, n_images)
    text = EXPANSION_PROMPT.format(n=n_images, seed=seed_caption)
    return GenRequest(
        backend_profile=backend_profile,
        messages=[Message("user", text, tuple(picks))],
        n_samples=1,
        temperature=temperature,
        seed=seed,
        tag="stage1-relay",
        meta={"class": class_name, "resampled": resampled, "seed_caption": seed_caption},
    )
