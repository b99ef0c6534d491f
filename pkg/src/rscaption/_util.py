from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any


def derive_seed(*parts: Any) -> int:
    """Stable 64-bit seed from arbitrary key parts (independent of call order)."""
    blob = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


def unit_draw(*parts: Any) -> float:
    """Uniform draw in [0, 1) keyed by ``parts``; 53 bits of a sha256 digest."""
    return (derive_seed(*parts) >> 11) / float(1 << 53)


def word_count(text: str) -> int:
    return len(text.split())


def config_hash(config: Any) -> str:
    blob = json.dumps(config, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def write_json(path: str | Path, obj: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_jsonl(path: str | Path, rows: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
