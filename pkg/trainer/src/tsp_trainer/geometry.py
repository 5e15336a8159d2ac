"""Neighborhood construction matching the solver's subgraph semantics.

Each node's row lists itself first, then its k1 - 1 nearest neighbors
sorted by ascending distance with ties broken by node index. Rescaling
multiplies a row's distances by mu = 1 / max(width, height) of the
neighborhood's bounding box, so the larger extent becomes exactly 1.
The arithmetic mirrors the solver step for step; heatmaps produced from
either side see identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Neighborhoods:
    k1: int
    neighbors: np.ndarray
    raw_dist: np.ndarray
    rescaled_dist: np.ndarray
    mu: np.ndarray

    @property
    def n(self) -> int:
        return self.neighbors.shape[0]


def build_neighborhoods(coords: np.ndarray, k1: int | None = None) -> Neighborhoods:
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if k1 is None:
        k1 = min(50, n)
    if not 1 <= k1 <= n:
        raise ValueError(f"k1 must be in [1, {n}], got {k1}")

    neighbors = np.empty((n, k1), dtype=np.int32)
    d2_sel = np.empty((n, k1))
    diff = coords[:, None, :] - coords[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    ids = np.arange(n)
    for i in range(n):
        row = d2[i]
        row[i] = -1.0  # pins the node itself to slot 0 even under ties
        order = np.lexsort((ids, row))[:k1]
        neighbors[i] = order
        d2_sel[i] = row[order]
    d2_sel[:, 0] = 0.0
    raw = np.sqrt(d2_sel)

    nb = coords[neighbors]
    extents = nb.max(axis=1) - nb.min(axis=1)
    largest = extents.max(axis=1)
    mu = np.where(largest > 0.0, 1.0 / np.where(largest > 0.0, largest, 1.0), 1.0)
    rescaled = raw * mu[:, None]
    for a in (neighbors, raw, rescaled, mu):
        a.setflags(write=False)
    return Neighborhoods(
        k1=k1, neighbors=neighbors, raw_dist=raw, rescaled_dist=rescaled, mu=mu
    )


def tour_length(coords: np.ndarray, perm: np.ndarray) -> float:
    pts = np.asarray(coords, dtype=np.float64)[perm]
    diffs = pts - np.roll(pts, -1, axis=0)
    return float(np.hypot(diffs[:, 0], diffs[:, 1]).sum())
