"""Stage-2 summarization requests, candidate selection, caption fusion and manifests."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from ._util import unit_draw, word_count, write_json
from .genbridge import GenRequest, Message
from .prompts import SUMMARY_PROMPT_1, SUMMARY_PROMPT_2

RMRELAY, MLLM_A, MLLM_B = "RMRelay", "MLLM_A", "MLLM_B"
PROMPT1, PROMPT2, FUSED = "Prompt1", "Prompt2", "Fused"
SOURCES = (RMRELAY, MLLM_A, MLLM_B, PROMPT1, PROMPT2, FUSED)

TOKEN_BUDGET = 77
PROMPT2_SAMPLES = 5
OVER_BUDGET = "over_token_budget"


class ComposeError(ValueError):
    pass


def estimate_tokens(text: str) -> int:
    """ceil(1.3 * whitespace word count), in integer arithmetic."""
    return (13 * word_count(text) + 9) // 10


@dataclass
class CaptionRecord:
    image_id: str
    text: str
    source: str
    sample_index: int | None = None
    flags: list[str] = field(default_factory=list)
    winner: str | None = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ComposeError(f"unknown caption source {self.source!r}")
        if estimate_tokens(self.text) > TOKEN_BUDGET and OVER_BUDGET not in self.flags:
            self.flags.append(OVER_BUDGET)

    @property
    def word_count(self) -> int:
        return word_count(self.text)

    @property
    def est_tokens(self) -> int:
        return estimate_tokens(self.text)

    def to_item(self) -> dict[str, Any]:
        item = {
            "text": self.text,
            "source": self.source,
            "sample_index": self.sample_index,
            "word_count": self.word_count,
            "est_tokens": self.est_tokens,
            "flags": list(self.flags),
        }
        if self.source == FUSED:
            item["winner"] = self.winner
        return item

    @classmethod
    def from_item(cls, image_id: str, item: dict[str, Any]) -> "CaptionRecord":
        return cls(image_id, item["text"], item["source"], item.get("sample_index"),
                   list(item.get("flags") or []), item.get("winner"))


@dataclass
class FusionConfig:
    alpha: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ComposeError(f"alpha must lie in [0, 1], got {self.alpha}")


# --------------------------------------------------------------------------
# stage 2


def build_stage2_request(
    d1: CaptionRecord | None,
    d2: CaptionRecord | None,
    d3: CaptionRecord | None,
    prompt_id: int,
    seed: int = 0,
    backend_profile: str = "llm",
    temperature: float = 0.7,
) -> GenRequest:
    """Summarization request over the three stage-1 descriptions of one image.

    ``d1``/``d2``/``d3`` are the MLLM_A, RMRelay and MLLM_B descriptions.
    Prompt 1 asks for one sample; Prompt 2 asks for five, chosen locally later.
    """
    for desc, src in ((d1, MLLM_A), (d2, RMRELAY), (d3, MLLM_B)):
        if desc is None or not desc.text.strip():
            raise ComposeError(f"missing {src} description")
    if prompt_id == 1:
        prompt, n = SUMMARY_PROMPT_1, 1
    elif prompt_id == 2:
        prompt, n = SUMMARY_PROMPT_2, PROMPT2_SAMPLES
    else:
        raise ComposeError(f"prompt_id must be 1 or 2, got {prompt_id}")
    body = "\n".join(f"Caption {i}: {d.text}" for i, d in enumerate((d1, d2, d3), start=1))
    return GenRequest(
        backend_profile=backend_profile,
        messages=[Message("user", f"{prompt}\n\n{body}")],
        n_samples=n,
        temperature=temperature,
        seed=seed,
        tag=f"stage2-prompt{prompt_id}",
        meta={"image_id": d1.image_id},
    )


def pick_one(
    candidates: Sequence[str],
    seed: int,
    accepted: Sequence[bool] | None = None,
) -> tuple[str, int, bool]:
    """Seeded uniform choice among surviving candidates.

    Returns ``(text, index, flagged)``; ``flagged`` is set when fewer than five
    candidates survived.
    """
    ok = list(accepted) if accepted is not None else [True] * len(candidates)
    if len(ok) != len(candidates):
        raise ComposeError("accepted mask length differs from candidates")
    survivors = [i for i, good in enumerate(ok) if good]
    if not survivors:
        raise ComposeError("no surviving candidates")
    idx = survivors[random.Random(seed).randrange(len(survivors))]
    return candidates[idx], idx, len(survivors) < PROMPT2_SAMPLES


def fuse_captions(
    c1: CaptionRecord | None,
    c2: CaptionRecord | None,
    cfg: FusionConfig,
    image_id: str | None = None,
) -> CaptionRecord:
    """Pick the Prompt-2 caption with probability ``alpha``, else Prompt 1.

    The draw is keyed on ``(cfg.seed, image_id)`` so it does not depend on the
    order images are processed in.
    """
    if c1 is None and c2 is None:
        raise ComposeError("both captions missing")
    image_id = image_id or (c1 or c2).image_id
    if c1 is None or c2 is None:
        only = c1 or c2
        missing = PROMPT1 if c1 is None else PROMPT2
        return CaptionRecord(image_id, only.text, FUSED, only.sample_index, [f"missing_{missing}"], only.source)
    take_second = unit_draw("fuse", cfg.seed, image_id) < cfg.alpha
    win = c2 if take_second else c1
    return CaptionRecord(image_id, win.text, FUSED, win.sample_index, [], win.source)


# --------------------------------------------------------------------------
# manifest


@dataclass
class ManifestEntry:
    id: str
    path: str
    captions: list[CaptionRecord]
    fused: CaptionRecord | None = None
    # sources whose generation failed after the retry
    gaps: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "path": self.path,
            "captions": [c.to_item() for c in self.captions],
            "fused": self.fused.to_item() if self.fused is not None else None,
            "gaps": list(self.gaps),
        }

    @classmethod
    def from_dict(cls, row: dict[str, Any]) -> "ManifestEntry":
        caps = [CaptionRecord.from_item(row["id"], c) for c in row["captions"]]
        fused = CaptionRecord.from_item(row["id"], row["fused"]) if row.get("fused") else None
        return cls(row["id"], row["path"], caps, fused, list(row.get("gaps") or []))

    def by_source(self, source: str) -> list[CaptionRecord]:
        return [c for c in self.captions if c.source == source]

    def chosen_prompt2(self) -> CaptionRecord | None:
        for c in self.by_source(PROMPT2):
            if "chosen" in c.flags:
                return c
        return None


def emit_manifest(
    entries: Sequence[ManifestEntry],
    out_path: str | Path,
    meta: dict[str, Any] | None = None,
) -> list[dict[str, str]]:
    """Write the manifest JSONL sorted by id; returns the exclusion report.

    A ``<name>.stats.json`` sidecar with caption statistics is written next to
    the manifest (plus ``meta`` when given).
    """
    from .evalkit.stats import caption_stats

    out_path = Path(out_path)
    # entries with gap flags stay so failed generations remain visible
    excluded = [{"id": e.id, "reason": "no captions"} for e in entries if not (e.captions or e.gaps)]
    rows = sorted((e for e in entries if e.captions or e.gaps), key=lambda e: e.id)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for e in rows:
            fh.write(json.dumps(e.to_dict(), ensure_ascii=False) + "\n")
    texts = [c.text for e in rows for c in e.captions]
    sidecar: dict[str, Any] = {"images": len(rows), "captions": len(texts), "excluded": excluded}
    if texts:
        sidecar["caption_stats"] = caption_stats(texts)
    if meta:
        sidecar["meta"] = meta
    write_json(out_path.with_suffix(".stats.json"), sidecar)
    return excluded


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    with open(path, encoding="utf-8") as fh:
        return [ManifestEntry.from_dict(json.loads(line)) for line in fh if line.strip()]
