"""Heatmap-quality metrics, the ordered-heatmap view, and run reports.

Rank metrics score a heatmap against a reference tour: for each node,
where does its reference-tour neighbor sit when the node's neighbor
heats are sorted hottest first?  Lower is better.  The ordered heatmap
re-indexes a dense heat matrix by tour position so a good heatmap shows
its mass along the diagonal band.  `evaluate_run` folds per-run solver
statistics into grouped gap tables.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .gcn import Heatmap
from .instances import LabeledInstance, Tour

# Size-interval labels for benchmark-style grouped reports.
TSPLIB_BINS = (
    (0, 100, "<100"),
    (100, 200, "[100,200)"),
    (200, 500, "[200,500)"),
    (500, 1000, "[500,1K)"),
    (1000, None, ">=1K"),
)


@dataclass(frozen=True)
class HeatmapQuality:
    """Rank metrics of one heatmap against one reference tour.

    avg_rank scores each node by the better-placed of its two tour
    neighbors; avg_rank_directed uses only the successor in tour
    orientation.  Both are reported because published comparisons do
    not say which convention they use.
    """

    avg_rank: float
    avg_rank_directed: float
    missing_rate_topk: float
    k: int
    coverage: float

    def __post_init__(self):
        if self.avg_rank < 1.0 or self.avg_rank_directed < 1.0:
            raise ValueError("average rank must be at least 1")
        if not 0.0 <= self.missing_rate_topk <= 1.0:
            raise ValueError("missing rate must lie in [0, 1]")
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError("coverage must lie in [0, 1]")
        if self.k < 1:
            raise ValueError("k must be positive")


def _perm_of(tour) -> np.ndarray:
    perm = tour.perm if isinstance(tour, Tour) else np.asarray(tour)
    perm = np.asarray(perm, dtype=np.int64)
    if perm.ndim != 1:
        raise ValueError("tour must be a flat permutation")
    return perm


def _successor_ranks(heatmap: Heatmap, labeled: LabeledInstance):
    """Per-node ranks of the two tour neighbors, hottest-first.

    Rank 1 is the hottest neighbor.  Ties take the best tied rank.  A
    tour neighbor outside the node's neighborhood gets rank k1 + 1.
    Returns (directed, reverse) rank arrays: directed follows the
    tour's orientation, reverse is the predecessor side.
    """
    n = heatmap.n
    perm = _perm_of(labeled.tour)
    if perm.shape[0] != n:
        raise ValueError("tour size does not match heatmap")
    succ = np.empty(n, dtype=np.int64)
    succ[perm] = np.roll(perm, -1)
    pred = np.empty(n, dtype=np.int64)
    pred[perm] = np.roll(perm, 1)

    out = []
    for target in (succ, pred):
        ranks = np.empty(n, dtype=np.float64)
        for i in range(n):
            row_ids = heatmap.neighbors[i, 1:]
            row_heat = heatmap.values[i, 1:]
            slots = np.flatnonzero(row_ids == target[i])
            if slots.shape[0] == 0:
                ranks[i] = heatmap.k1 + 1
            else:
                h = row_heat[slots[0]]
                ranks[i] = 1 + int(np.sum(row_heat > h))
        out.append(ranks)
    return out[0], out[1]


def average_rank(
    heatmap: Heatmap, labeled: LabeledInstance, directed: bool = False
) -> float:
    """Mean rank of reference-tour neighbors in the heat ordering.

    By default each node contributes the better (lower) rank of its two
    tour neighbors; with directed=True only the successor counts.
    """
    fwd, rev = _successor_ranks(heatmap, labeled)
    if directed:
        return float(fwd.mean())
    return float(np.minimum(fwd, rev).mean())


def missing_rate(heatmap: Heatmap, labeled: LabeledInstance, k: int) -> float:
    """Fraction of tour successors absent from their node's k hottest."""
    if not 1 <= k <= heatmap.k1:
        raise ValueError("k must lie in [1, k1]")
    fwd, _ = _successor_ranks(heatmap, labeled)
    return float(np.mean(fwd > k))


def coverage(heatmap: Heatmap, labeled: LabeledInstance) -> float:
    """Fraction of reference-tour edges present in the sparse graph.

    An undirected tour edge counts as covered when either endpoint
    lists the other among its neighbors.
    """
    n = heatmap.n
    perm = _perm_of(labeled.tour)
    if perm.shape[0] != n:
        raise ValueError("tour size does not match heatmap")
    covered = 0
    for t in range(n):
        i = int(perm[t])
        j = int(perm[(t + 1) % n])
        if j in heatmap.neighbors[i, 1:] or i in heatmap.neighbors[j, 1:]:
            covered += 1
    return covered / n


def heatmap_quality(
    heatmap: Heatmap, labeled: LabeledInstance, k: int = 5
) -> HeatmapQuality:
    """Bundle the rank metrics for one heatmap/label pair."""
    k = min(k, heatmap.k1)
    return HeatmapQuality(
        avg_rank=average_rank(heatmap, labeled),
        avg_rank_directed=average_rank(heatmap, labeled, directed=True),
        missing_rate_topk=missing_rate(heatmap, labeled, k),
        k=k,
        coverage=coverage(heatmap, labeled),
    )


def tour_adjacency(tour, n: int | None = None) -> np.ndarray:
    """Dense 0/1 adjacency matrix of the closed tour (the ideal heatmap)."""
    perm = _perm_of(tour)
    n = perm.shape[0] if n is None else n
    if perm.shape[0] != n:
        raise ValueError("tour size does not match n")
    adj = np.zeros((n, n), dtype=np.float64)
    nxt = np.roll(perm, -1)
    adj[perm, nxt] = 1.0
    adj[nxt, perm] = 1.0
    return adj


def ordered_heatmap(heatmap, tour) -> np.ndarray:
    """Dense heat matrix re-indexed by tour position.

    Row r and column c of the result refer to the r-th and c-th nodes
    of the tour, so a heatmap that loves the reference tour lights up
    the band next to the main diagonal plus the two wrap-around corner
    cells.  Rows keep their multiset of values: each output row is a
    permutation of one input row.
    """
    dense = heatmap.to_dense() if isinstance(heatmap, Heatmap) else (
        np.asarray(heatmap, dtype=np.float64)
    )
    if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
        raise ValueError("heatmap must be square")
    perm = _perm_of(tour)
    if perm.shape[0] != dense.shape[0]:
        raise ValueError("tour size does not match heatmap")
    return dense[np.ix_(perm, perm)]


def ordered_heatmap_csv(matrix: np.ndarray) -> str:
    """Plain CSV serialization of a dense matrix, row per line."""
    m = np.asarray(matrix, dtype=np.float64)
    lines = [",".join(f"{v:.12g}" for v in row) for row in m]
    return "\n".join(lines) + "\n"


def pgm_bytes(matrix: np.ndarray) -> bytes:
    """Binary grayscale image of a [0, 1] matrix, zero drawn black."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("matrix must be two-dimensional")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix must be finite")
    pix = np.rint(np.clip(m, 0.0, 1.0) * 255).astype(np.uint8)
    header = f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode("ascii")
    return header + pix.tobytes()


def write_pgm(matrix: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(matrix))


def _bin_label(n: int) -> str:
    for lo, hi, label in TSPLIB_BINS:
        if n >= lo and (hi is None or n < hi):
            return label
    raise AssertionError("unreachable")


def _gap(length: float, optimum: float) -> float:
    if optimum <= 0:
        raise ValueError("optimum must be positive")
    return (length - optimum) / optimum


def evaluate_run(results, optima, mode: str = "uniform") -> dict:
    """Fold per-run solver records into a grouped gap report.

    results: iterable of dicts with at least id, n, length; wall_ms and
    seed are carried when present.  optima: mapping id -> reference
    length.  mode "uniform" groups by n and averages the gap over every
    run (so multi-seed runs average per-seed gaps); mode "tsplib"
    groups by size interval and scores each instance by its best run.
    Runs without a reference length are flagged and excluded from the
    gap column only.
    """
    if mode not in ("uniform", "tsplib"):
        raise ValueError("mode must be 'uniform' or 'tsplib'")
    rows = []
    for rec in results:
        for field in ("id", "n", "length"):
            if field not in rec:
                raise ValueError(f"result record missing '{field}'")
        rows.append(rec)

    flagged = sorted({r["id"] for r in rows if r["id"] not in optima})
    groups = {}
    for r in rows:
        key = int(r["n"]) if mode == "uniform" else _bin_label(int(r["n"]))
        groups.setdefault(key, []).append(r)

    out_groups = []
    for key in sorted(
        groups,
        key=(lambda k: k) if mode == "uniform" else (
            lambda k: [b[0] for b in TSPLIB_BINS if b[2] == k][0]
        ),
    ):
        members = groups[key]
        ids = sorted({r["id"] for r in members})
        wall = float(sum(r.get("wall_ms", 0.0) for r in members))
        if mode == "uniform":
            lengths = [float(r["length"]) for r in members]
            gaps = [
                _gap(float(r["length"]), float(optima[r["id"]]))
                for r in members
                if r["id"] in optima
            ]
        else:
            best = {}
            for r in members:
                length = float(r["length"])
                if r["id"] not in best or length < best[r["id"]]:
                    best[r["id"]] = length
            lengths = [best[i] for i in ids]
            gaps = [
                _gap(best[i], float(optima[i]))
                for i in ids
                if i in optima
            ]
        row = {
            "group": f"n={key}" if mode == "uniform" else key,
            "instances": len(ids),
            "runs": len(members),
            "mean_length": float(np.mean(lengths)),
            "mean_gap_pct": (
                100.0 * float(np.mean(gaps)) if gaps else None
            ),
            "wall_ms": wall,
            "missing": sum(1 for i in ids if i not in optima),
        }
        out_groups.append(row)

    return {
        "mode": mode,
        "groups": out_groups,
        "runs": len(rows),
        "total_wall_ms": float(sum(r.get("wall_ms", 0.0) for r in rows)),
        "flagged": flagged,
    }


REPORT_COLUMNS = (
    "group", "instances", "runs", "mean_length", "mean_gap_pct",
    "wall_ms", "missing",
)


def report_to_csv(report: dict) -> str:
    """CSV rendering of an evaluate_run report; header always present."""
    lines = [",".join(REPORT_COLUMNS)]
    for row in report["groups"]:
        cells = []
        for col in REPORT_COLUMNS:
            v = row[col]
            if v is None:
                cells.append("")
            elif isinstance(v, float):
                cells.append(f"{v:.12g}")
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
