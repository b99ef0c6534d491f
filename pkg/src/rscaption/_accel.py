"""Hot numeric kernels.

Each kernel has a numba ``@njit`` implementation and a pure numpy one. The
public names dispatch to numba unless it is missing or the environment
variable ``RSCAPTION_DISABLE_NUMBA`` is set to a truthy value. Both variants
are importable directly (``*_numba`` / ``*_numpy``) so tests and the benchmark
can compare them.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba ships with the env
    numba = None

_DISABLED = os.environ.get("RSCAPTION_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}
NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and not _DISABLED


def _njit(fn):
    if numba is None:
        return fn
    return numba.njit(cache=False, nogil=True)(fn)


# --------------------------------------------------------------------------
# connected components -> boxes


def _component_boxes_py(mask, background, eight):
    h, w = mask.shape
    seen = np.zeros((h, w), dtype=np.bool_)
    stack = np.empty(h * w, dtype=np.int64)
    # capacity: at most one component per pixel
    out = np.empty((h * w, 5), dtype=np.int64)
    n = 0
    for y0 in range(h):
        for x0 in range(w):
            v = mask[y0, x0]
            if seen[y0, x0] or v == background:
                continue
            seen[y0, x0] = True
            top = 0
            stack[top] = y0 * w + x0
            top += 1
            ymin, ymax, xmin, xmax = y0, y0, x0, x0
            while top > 0:
                top -= 1
                p = stack[top]
                y = p // w
                x = p - y * w
                if y < ymin:
                    ymin = y
                if y > ymax:
                    ymax = y
                if x < xmin:
                    xmin = x
                if x > xmax:
                    xmax = x
                for dy in range(-1, 2):
                    for dx in range(-1, 2):
                        if dy == 0 and dx == 0:
                            continue
                        if not eight and dy != 0 and dx != 0:
                            continue
                        ny = y + dy
                        nx = x + dx
                        if ny < 0 or ny >= h or nx < 0 or nx >= w:
                            continue
                        if seen[ny, nx] or mask[ny, nx] != v:
                            continue
                        seen[ny, nx] = True
                        stack[top] = ny * w + nx
                        top += 1
            out[n, 0] = v
            out[n, 1] = xmin
            out[n, 2] = ymin
            out[n, 3] = xmax + 1
            out[n, 4] = ymax + 1
            n += 1
    return out[:n]


_component_boxes_nb = _njit(_component_boxes_py)


def component_boxes_numba(mask: np.ndarray, background: int = 0, connectivity: int = 4) -> np.ndarray:
    """Rows of ``(label, xmin, ymin, xmax, ymax)``, one per connected component.

    Extents are pixel edges, so ``xmax``/``ymax`` are exclusive. Rows come out
    in raster order of each component's first pixel.
    """
    if numba is None:
        raise RuntimeError("numba is not installed")
    m = np.ascontiguousarray(mask, dtype=np.int64)
    return _component_boxes_nb(m, np.int64(background), connectivity == 8)


def component_boxes_numpy(mask: np.ndarray, background: int = 0, connectivity: int = 4) -> np.ndarray:
    from scipy import ndimage

    m = np.asarray(mask, dtype=np.int64)
    structure = ndimage.generate_binary_structure(2, 2 if connectivity == 8 else 1)
    rows = []
    order = []
    for value in np.unique(m):
        if value == background:
            continue
        labels, n = ndimage.label(m == value, structure=structure)
        if n == 0:
            continue
        slices = ndimage.find_objects(labels)
        # raster position of each component's first pixel, for a stable order
        flat = labels.ravel()
        nz = np.flatnonzero(flat)
        first = np.full(n + 1, -1, dtype=np.int64)
        ids = flat[nz]
        # reversed assignment leaves the smallest flat index per label
        first[ids[::-1]] = nz[::-1]
        for i, sl in enumerate(slices, start=1):
            ys, xs = sl
            rows.append((int(value), xs.start, ys.start, xs.stop, ys.stop))
            order.append(first[i])
    if not rows:
        return np.empty((0, 5), dtype=np.int64)
    out = np.asarray(rows, dtype=np.int64)
    return out[np.argsort(np.asarray(order), kind="stable")]


# --------------------------------------------------------------------------
# greedy hamming dedup


def _greedy_dedup_py(hashes, threshold):
    n = hashes.shape[0]
    kept_idx = np.empty(n, dtype=np.int64)
    match = np.full(n, -1, dtype=np.int64)
    nk = 0
    for i in range(n):
        h = hashes[i]
        for j in range(nk):
            x = h ^ hashes[kept_idx[j]]
            # popcount
            c = 0
            while x:
                x &= x - np.uint64(1)
                c += 1
            if c <= threshold:
                match[i] = kept_idx[j]
                break
        if match[i] < 0:
            kept_idx[nk] = i
            nk += 1
    return match


_greedy_dedup_nb = _njit(_greedy_dedup_py)


def greedy_dedup_numba(hashes: np.ndarray, threshold: int) -> np.ndarray:
    """For each hash, index of the earlier kept hash it duplicates, else -1."""
    if numba is None:
        raise RuntimeError("numba is not installed")
    return _greedy_dedup_nb(np.ascontiguousarray(hashes, dtype=np.uint64), np.int64(threshold))


def greedy_dedup_numpy(hashes: np.ndarray, threshold: int) -> np.ndarray:
    h = np.asarray(hashes, dtype=np.uint64)
    match = np.full(h.shape[0], -1, dtype=np.int64)
    kept: list[int] = []
    for i in range(h.shape[0]):
        if kept:
            k = np.asarray(kept)
            d = np.bitwise_count(h[k] ^ h[i])
            hit = np.flatnonzero(d <= threshold)
            if hit.size:
                match[i] = k[hit[0]]
                continue
        kept.append(i)
    return match


# --------------------------------------------------------------------------
# retrieval ranks


def _best_ranks_py(scores, gt_ptr, gt_idx):
    # rank of candidate j in row i: #{s > s_ij} + #{s == s_ij, index < j}
    n_rows, n_cols = scores.shape
    out = np.empty(n_rows, dtype=np.int64)
    for i in range(n_rows):
        best = n_cols
        for g in range(gt_ptr[i], gt_ptr[i + 1]):
            j = gt_idx[g]
            s = scores[i, j]
            r = 0
            for c in range(n_cols):
                v = scores[i, c]
                if v > s or (v == s and c < j):
                    r += 1
            if r < best:
                best = r
        out[i] = best
    return out


_best_ranks_nb = _njit(_best_ranks_py)


def best_ranks_numba(scores: np.ndarray, gt_ptr: np.ndarray, gt_idx: np.ndarray) -> np.ndarray:
    """0-based rank of the best-placed ground-truth column for each row.

    Ground truth for row ``i`` is ``gt_idx[gt_ptr[i]:gt_ptr[i+1]]`` (CSR layout).
    Ties rank the lower column index first.
    """
    if numba is None:
        raise RuntimeError("numba is not installed")
    return _best_ranks_nb(
        np.ascontiguousarray(scores, dtype=np.float64),
        np.ascontiguousarray(gt_ptr, dtype=np.int64),
        np.ascontiguousarray(gt_idx, dtype=np.int64),
    )


def best_ranks_numpy(scores: np.ndarray, gt_ptr: np.ndarray, gt_idx: np.ndarray) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-s, axis=1, kind="stable")
    ranks = np.empty_like(order)
    rows = np.arange(s.shape[0])[:, None]
    ranks[rows, order] = np.arange(s.shape[1])[None, :]
    out = np.empty(s.shape[0], dtype=np.int64)
    for i in range(s.shape[0]):
        out[i] = ranks[i, gt_idx[gt_ptr[i] : gt_ptr[i + 1]]].min()
    return out


if USE_NUMBA:
    component_boxes = component_boxes_numba
    greedy_dedup = greedy_dedup_numba
    best_ranks = best_ranks_numba
else:
    component_boxes = component_boxes_numpy
    greedy_dedup = greedy_dedup_numpy
    best_ranks = best_ranks_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
