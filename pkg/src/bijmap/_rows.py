"""Uniform row access to distance data (full matrices, fields, compressed codes)."""

import numpy as np


def row_provider(dist):
    """Return ``(n, row_fn)`` for any supported distance representation.

    Accepts a plain square ndarray, or any object exposing ``.n`` and
    ``.row(i)`` (DistanceField, CompressedDistances).
    """
    if isinstance(dist, np.ndarray):
        if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
            raise ValueError("distance matrix must be square")
        return dist.shape[0], lambda i: dist[i]
    if hasattr(dist, "row") and hasattr(dist, "n"):
        return dist.n, dist.row
    raise TypeError(f"unsupported distance provider: {type(dist)!r}")


def gather_rows(dist, idx):
    """Stack distance rows for the vertices in ``idx`` into a dense block."""
    if isinstance(dist, np.ndarray):
        return dist[idx]
    if hasattr(dist, "rows"):
        return dist.rows(idx)
    n, row = row_provider(dist)
    idx = np.asarray(idx)
    out = np.empty((idx.size, n))
    for a, i in enumerate(idx):
        out[a] = row(i)
    return out
