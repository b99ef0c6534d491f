"""Embedding, similarity and report files."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .classify import EmbeddingSet
from .retrieval import SimilarityMatrix

SELO_METRICS = ("Rsu", "Ras", "Rda", "Rmi")


def write_embeddings(path: str | Path, vectors: np.ndarray, normalized: bool | None = None, text: bool = False) -> None:
    """One JSON header line, then the matrix as raw little-endian bytes or text rows."""
    v = np.asarray(vectors)
    dtype = "float32" if v.dtype == np.float32 else "float64"
    v = v.astype("<" + ("f4" if dtype == "float32" else "f8"))
    if normalized is None:
        normalized = bool(np.allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-5)) if v.size else False
    header = {"n": int(v.shape[0]), "d": int(v.shape[1]), "dtype": dtype,
              "normalized": normalized, "format": "text" if text else "binary"}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        if text:
            np.savetxt(fh, v, fmt="%.9g")
        else:
            fh.write(v.tobytes(order="C"))


def read_embedding_matrix(path: str | Path) -> tuple[np.ndarray, dict[str, Any]]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    n, d = header["n"], header["d"]
    if header.get("format", "binary") == "text":
        v = np.loadtxt(payload.decode("utf-8").splitlines(), dtype=np.float64, ndmin=2)
        if n == 0:
            v = v.reshape(0, d)
    else:
        dt = np.dtype("<f4" if header["dtype"] == "float32" else "<f8")
        v = np.frombuffer(payload, dtype=dt)
        if v.size != n * d:
            raise ValueError(f"{path}: expected {n * d} values, found {v.size}")
    return v.reshape(n, d).astype(np.float64), header


def read_index_file(path: str | Path) -> np.ndarray:
    lines = Path(path).read_text(encoding="utf-8").split()
    return np.array([int(x) for x in lines], dtype=np.int64)


def write_index_file(path: str | Path, values: Sequence[int]) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in values), encoding="utf-8")


def read_embeddings(path: str | Path, labels_path: str | Path, test_mask_path: str | Path | None = None) -> EmbeddingSet:
    vectors, header = read_embedding_matrix(path)
    labels = read_index_file(labels_path)
    mask = read_index_file(test_mask_path).astype(bool) if test_mask_path else None
    return EmbeddingSet(vectors, labels, bool(header.get("normalized")), mask)


def load_similarity(matrix_path: str | Path, caption_map_path: str | Path) -> SimilarityMatrix:
    """Dense scores (``.npy``, header-matrix file, or whitespace text) plus caption-map JSONL.

    Caption-map rows are ``{"text": j, "image": i}``.
    """
    matrix_path = Path(matrix_path)
    if matrix_path.suffix == ".npy":
        scores = np.load(matrix_path)
    else:
        with open(matrix_path, "rb") as fh:
            first = fh.read(1)
        scores = read_embedding_matrix(matrix_path)[0] if first == b"{" else np.loadtxt(matrix_path, ndmin=2)
    rows = [json.loads(line) for line in Path(caption_map_path).read_text(encoding="utf-8").splitlines() if line.strip()]
    cmap = np.full(len(rows), -1, dtype=np.int64)
    for row in rows:
        cmap[int(row["text"])] = int(row["image"])
    return SimilarityMatrix(scores, cmap)


def write_caption_map(path: str | Path, caption_map: Sequence[int]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for j, i in enumerate(caption_map):
            fh.write(json.dumps({"text": j, "image": int(i)}) + "\n")


def metric_report(metric: str, value: Any, config: dict[str, Any] | None = None,
                  tie_break: str | None = None, tokenizer: str | None = None) -> dict[str, Any]:
    return {"metric": metric, "value": value, "config": config or {}, "tie_break": tie_break, "tokenizer": tokenizer}


def tabulate_selo(rows: Sequence[dict[str, Any]]) -> list[dict[str, Any]]:
    """Validate externally computed semantic-localization scores; nothing is recomputed."""
    out = []
    for row in rows:
        missing = [k for k in SELO_METRICS if k not in row]
        if missing:
            raise ValueError(f"{row.get('model', '?')}: missing {missing}")
        out.append({"model": row.get("model"), **{k: float(row[k]) for k in SELO_METRICS}})
    return out
