"""k-nearest-neighbor subgraphs and per-node rescaling.

Every node gets a row of its k1 nearest neighbors (itself first at
distance zero). Rescaling maps each row's neighborhood into the unit
square independently: the row is translated to its bounding-box corner
and multiplied by mu = 1 / max(width, height), so the larger extent
becomes exactly 1. Distances shrink by the same factor, which puts all
neighborhoods on a common scale regardless of instance size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .instances import Instance

EXACT_METHOD_MAX_N = 20_000


@dataclass(frozen=True)
class SubgraphSet:
    """Per-node neighbor lists with raw and rescaled distances.

    neighbors[i, 0] == i always; each row is sorted by ascending
    distance with ties broken by node index. rescaled_dist and mu are
    filled in by rescale().
    """

    k1: int
    neighbors: np.ndarray
    raw_dist: np.ndarray
    rescaled_dist: np.ndarray | None = None
    mu: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.neighbors.shape[0]


def _exact_rows(coords: np.ndarray, k1: int) -> tuple[np.ndarray, np.ndarray]:
    n = coords.shape[0]
    neighbors = np.empty((n, k1), dtype=np.int32)
    dists = np.empty((n, k1))
    block = max(1, min(n, 8_000_000 // max(n, 1)))
    for lo in range(0, n, block):
        hi = min(n, lo + block)
        diff = coords[lo:hi, None, :] - coords[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        for r in range(lo, hi):
            row = d2[r - lo]
            row[r] = -1.0  # pin the node itself to slot 0 even under ties
            neighbors[r], dists[r] = _select_row(row, k1)
    dists[:, 0] = 0.0
    return neighbors, np.sqrt(dists)


def _select_row(d2row: np.ndarray, k1: int) -> tuple[np.ndarray, np.ndarray]:
    """Pick the k1 smallest entries, ties by lower index, sorted."""
    n = d2row.shape[0]
    if k1 >= n:
        chosen = np.arange(n)
    else:
        part = np.argpartition(d2row, k1 - 1)[:k1]
        boundary = d2row[part].max()
        below = np.flatnonzero(d2row < boundary)
        at = np.flatnonzero(d2row == boundary)
        chosen = np.concatenate([below, at[: k1 - below.size]])
    order = np.lexsort((chosen, d2row[chosen]))
    chosen = chosen[order]
    return chosen.astype(np.int32), d2row[chosen]


def _grid_rows(coords: np.ndarray, k1: int) -> tuple[np.ndarray, np.ndarray]:
    """Spatial-grid k-NN for large instances; identical output to exact."""
    n = coords.shape[0]
    cells_per_axis = max(1, int(math.sqrt(n / 2.0)))
    lo = coords.min(axis=0)
    span = coords.max(axis=0) - lo
    cell = max(span.max() / cells_per_axis, 1e-300)
    cx = np.minimum((coords[:, 0] - lo[0]) / cell, cells_per_axis - 1).astype(np.int64)
    cy = np.minimum((coords[:, 1] - lo[1]) / cell, cells_per_axis - 1).astype(np.int64)
    order = np.lexsort((np.arange(n), cy, cx))
    key = cx[order] * cells_per_axis + cy[order]
    starts = np.searchsorted(key, np.arange(cells_per_axis * cells_per_axis))
    ends = np.searchsorted(key, np.arange(cells_per_axis * cells_per_axis), side="right")

    neighbors = np.empty((n, k1), dtype=np.int32)
    dists = np.empty((n, k1))
    for i in range(n):
        found: list[int] = []
        ring = 0
        while True:
            ring_nodes = []
            x0, y0 = cx[i], cy[i]
            for dx in range(-ring, ring + 1):
                for dy in range(-ring, ring + 1):
                    if max(abs(dx), abs(dy)) != ring:
                        continue
                    x, y = x0 + dx, y0 + dy
                    if 0 <= x < cells_per_axis and 0 <= y < cells_per_axis:
                        c = x * cells_per_axis + y
                        ring_nodes.extend(order[starts[c]:ends[c]])
            found.extend(ring_nodes)
            if len(found) >= k1:
                cand = np.array(found, dtype=np.int64)
                diff = coords[cand] - coords[i]
                d2 = np.einsum("ij,ij->i", diff, diff)
                d2[cand == i] = -1.0  # pin the node itself to slot 0
                sel = np.lexsort((cand, d2))[:k1]
                kth = math.sqrt(max(d2[sel[-1]], 0.0))
                # all unexamined nodes are at least ring * cell away
                if ring * cell > kth or ring >= cells_per_axis:
                    neighbors[i] = cand[sel]
                    dists[i] = np.sqrt(np.maximum(d2[sel], 0.0))
                    break
            ring += 1
            if ring > 2 * cells_per_axis:
                raise RuntimeError("grid search failed to converge")
    return neighbors, dists


def build_knn(instance: Instance, k1: int | None = None, method: str = "auto") -> SubgraphSet:
    """Build the k1-nearest-neighbor subgraph (self included, slot 0).

    method 'auto' uses the exact all-pairs scan up to 20k nodes and a
    spatial grid beyond; 'exact' and 'grid' force one path (the two
    produce identical rows).
    """
    n = instance.n
    if k1 is None:
        k1 = min(50, n)
    if not 1 <= k1 <= n:
        raise ValueError(f"k1 must be in [1, {n}], got {k1}")
    if method == "auto":
        method = "exact" if n <= EXACT_METHOD_MAX_N else "grid"
    if method == "exact":
        neighbors, dists = _exact_rows(instance.coords, k1)
    elif method == "grid":
        neighbors, dists = _grid_rows(instance.coords, k1)
    else:
        raise ValueError(f"unknown method {method!r}")
    neighbors.setflags(write=False)
    dists.setflags(write=False)
    return SubgraphSet(k1=k1, neighbors=neighbors, raw_dist=dists)


def rescale(sub: SubgraphSet, instance: Instance) -> SubgraphSet:
    """Fill in per-node scale factors and rescaled distances."""
    nb = instance.coords[sub.neighbors]
    extents = nb.max(axis=1) - nb.min(axis=1)
    largest = extents.max(axis=1)
    mu = np.where(largest > 0.0, 1.0 / np.where(largest > 0.0, largest, 1.0), 1.0)
    rescaled = sub.raw_dist * mu[:, None]
    mu.setflags(write=False)
    rescaled.setflags(write=False)
    return SubgraphSet(
        k1=sub.k1,
        neighbors=sub.neighbors,
        raw_dist=sub.raw_dist,
        rescaled_dist=rescaled,
        mu=mu,
    )


def project_coords(sub: SubgraphSet, instance: Instance, i: int) -> np.ndarray:
    """Node i's neighborhood translated and scaled into the unit square."""
    if sub.mu is None:
        raise ValueError("subgraph has not been rescaled")
    nb = instance.coords[sub.neighbors[i]]
    return (nb - nb.min(axis=0)) * sub.mu[i]


def export_subgraph_csv(sub: SubgraphSet, path: str) -> None:
    """Write rows (i, j, raw_dist, rescaled_dist, mu_i); 1-based ids."""
    if sub.rescaled_dist is None or sub.mu is None:
        raise ValueError("subgraph has not been rescaled")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("i,j,raw_dist,rescaled_dist,mu_i\n")
        for i in range(sub.n):
            for r in range(sub.k1):
                fh.write(
                    f"{i + 1},{sub.neighbors[i, r] + 1},"
                    f"{float(sub.raw_dist[i, r])!r},"
                    f"{float(sub.rescaled_dist[i, r])!r},"
                    f"{float(sub.mu[i])!r}\n"
                )
