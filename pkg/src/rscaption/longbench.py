"""Long-caption retrieval benchmark: join five short captions or have an LLM rewrite them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from ._util import word_count
from .genbridge import Backend, GenRequest, Message
from .prompts import REWRITE_PROMPT

JOIN, REWRITE = "join", "rewrite"


class LongBenchError(ValueError):
    pass


@dataclass
class LongRetRecord:
    image_id: str
    path: str
    short_captions: list[str]
    long_caption: str
    mode: str

    def __post_init__(self):
        if len(self.short_captions) != 5:
            raise LongBenchError("exactly five short captions required")
        if self.mode == JOIN and self.long_caption != join_captions(self.short_captions):
            raise LongBenchError("join-mode caption must equal the joined short captions")
        if self.mode == REWRITE:
            if not self.long_caption.strip():
                raise LongBenchError("empty rewrite")
            if self.long_caption == join_captions(self.short_captions):
                raise LongBenchError("rewrite is identical to the plain join")

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.image_id, "path": self.path, "captions": list(self.short_captions),
                "long_caption": self.long_caption, "mode": self.mode}


def _check_five(captions: Sequence[str]) -> None:
    if len(captions) != 5:
        raise LongBenchError(f"expected 5 captions, got {len(captions)}")


def join_captions(five: Sequence[str]) -> str:
    _check_five(five)
    parts = []
    for cap in five:
        cap = " ".join(cap.split())
        if cap and cap[-1] not in ".!?":
            cap += "."
        if cap:
            parts.append(cap)
    return " ".join(parts)


def build_rewrite_request(
    five: Sequence[str],
    seed: int = 0,
    backend_profile: str = "llm",
    temperature: float = 0.7,
) -> GenRequest:
    _check_five(five)
    # captions go in untouched so the output can be audited against them
    body = "\n".join(f"Caption {i}: {cap}" for i, cap in enumerate(five, start=1))
    return GenRequest(
        backend_profile=backend_profile,
        messages=[Message("user", f"{REWRITE_PROMPT}\n\n{body}")],
        n_samples=1,
        temperature=temperature,
        seed=seed,
        tag="longret-rewrite",
    )


def build_long_records(
    rows: Sequence[dict[str, Any]],
    mode: str,
    backend: Backend | None = None,
    seed: int = 0,
) -> tuple[list[LongRetRecord], list[dict[str, str]]]:
    """Turn a retrieval test set (``{"id", "path", "captions"}`` rows) into long-caption records.

    Images without exactly five captions are excluded and reported.
    """
    if mode not in (JOIN, REWRITE):
        raise LongBenchError(f"mode must be join or rewrite, got {mode!r}")
    if mode == REWRITE and backend is None:
        raise LongBenchError("rewrite mode needs a backend")
    eligible, excluded = [], []
    for row in rows:
        caps = list(row.get("captions") or [])
        if len(caps) != 5:
            excluded.append({"id": row["id"], "reason": f"{len(caps)} captions"})
        else:
            eligible.append((row, caps))
    if mode == JOIN:
        out = [LongRetRecord(r["id"], r.get("path", ""), caps, join_captions(caps), JOIN) for r, caps in eligible]
        return out, excluded
    requests = [
        build_rewrite_request(caps, seed=seed, backend_profile=backend.profile.name,
                              temperature=backend.profile.temperature)
        for _, caps in eligible
    ]
    responses = backend.generate_many(requests)
    out = []
    for (r, caps), resp in zip(eligible, responses):
        text = " ".join(resp.texts[0].split())
        try:
            out.append(LongRetRecord(r["id"], r.get("path", ""), caps, text, REWRITE))
        except LongBenchError as exc:
            excluded.append({"id": r["id"], "reason": str(exc)})
    return out, excluded


def benchmark_stats(
    records: Sequence[LongRetRecord],
    bins: int | Sequence[float] = 10,
    scores: Sequence[float] | None = None,
    score_bins: int = 20,
) -> dict[str, Any]:
    """Average long-caption length, its histogram, and optionally a score histogram."""
    from .evalkit.stats import histogram_table, similarity_histogram

    if not records:
        raise LongBenchError("no records")
    lengths = np.array([word_count(r.long_caption) for r in records])
    short = np.array([word_count(c) for r in records for c in r.short_captions])
    out: dict[str, Any] = {
        "records": len(records),
        "mean_long_words": float(lengths.mean()),
        "mean_short_words": float(short.mean()),
        "length_histogram": histogram_table(lengths, bins),
    }
    if scores is not None:
        out["similarity_histogram"] = similarity_histogram(scores, score_bins)
    return out
