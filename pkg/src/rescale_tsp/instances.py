"""Problem instances, tours, file formats, and the exact small-n solver.

Node indices are 0-based everywhere in memory. The text formats
(labeled datasets, heatmap/subgraph CSV) use 1-based indices, converted
at the I/O boundary.
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DatasetFormatError, SizeLimitError, TsplibError

HELD_KARP_MAX_N = 16


class Metric(enum.Enum):
    """Distance conventions supported by the toolkit."""

    CONTINUOUS_EUCLID = "continuous_euclid"
    TSPLIB_EUC2D_ROUNDED = "tsplib_euc2d_rounded"


def euc2d_rounded(ax: float, ay: float, bx: float, by: float) -> float:
    """TSPLIB EUC_2D distance: Euclidean rounded to the nearest integer."""
    return math.floor(math.sqrt((ax - bx) ** 2 + (ay - by) ** 2) + 0.5)


def normalize_coords(raw: np.ndarray) -> np.ndarray:
    """Map raw coordinates into [0,1]^2 preserving aspect ratio.

    Translates the bounding box to the origin and divides both axes by
    the larger extent, so the longer side spans exactly [0,1]. A fully
    degenerate point set (zero extent on both axes) maps to the origin.
    """
    lo = raw.min(axis=0)
    extent = raw.max(axis=0) - lo
    scale = float(extent.max())
    if scale <= 0.0:
        return np.zeros_like(raw)
    return (raw - lo) / scale


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Instance:
    """A Euclidean TSP instance.

    coords always live in the unit square for generated instances; for
    instances read from TSPLIB files they are the aspect-preserving
    normalization of raw_coords, and raw_coords carries the original
    values for rounded-metric evaluation.
    """

    id: str
    coords: np.ndarray
    metric: Metric = Metric.CONTINUOUS_EUCLID
    raw_coords: np.ndarray | None = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValueError("coords must have shape (n, 2)")
        if coords.shape[0] < 2:
            raise ValueError("instance needs at least 2 nodes")
        if not np.isfinite(coords).all():
            raise ValueError("coords must be finite")
        object.__setattr__(self, "coords", _readonly(coords))
        if self.raw_coords is not None:
            raw = np.asarray(self.raw_coords, dtype=np.float64)
            if raw.shape != coords.shape:
                raise ValueError("raw_coords shape must match coords")
            if not np.isfinite(raw).all():
                raise ValueError("raw_coords must be finite")
            if not np.allclose(coords, normalize_coords(raw), atol=1e-9):
                raise ValueError("coords must be the normalization of raw_coords")
            object.__setattr__(self, "raw_coords", _readonly(raw))
        elif self.metric is Metric.CONTINUOUS_EUCLID:
            if coords.min() < 0.0 or coords.max() > 1.0:
                raise ValueError("coords must lie in the unit square")

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @classmethod
    def from_raw(cls, id: str, raw, metric: Metric) -> "Instance":
        """Build an instance from unnormalized coordinates."""
        raw = np.asarray(raw, dtype=np.float64)
        return cls(id=id, coords=normalize_coords(raw), metric=metric, raw_coords=raw)

    def metric_coords(self) -> np.ndarray:
        """Coordinates the distance metric is evaluated on."""
        return self.raw_coords if self.raw_coords is not None else self.coords


@dataclass(frozen=True)
class Tour:
    """A closed tour given as a permutation of node indices (0-based)."""

    perm: np.ndarray

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int32)
        if perm.ndim != 1:
            raise ValueError("perm must be one-dimensional")
        n = perm.shape[0]
        seen = np.zeros(n, dtype=bool)
        valid = (perm >= 0) & (perm < n)
        if not valid.all():
            raise ValueError("perm entries out of range")
        seen[perm] = True
        if not seen.all():
            raise ValueError("perm is not a permutation")
        perm = np.ascontiguousarray(perm)
        perm.setflags(write=False)
        object.__setattr__(self, "perm", perm)

    @property
    def n(self) -> int:
        return self.perm.shape[0]


@dataclass(frozen=True)
class LabeledInstance:
    """An instance paired with its reference (optimal or best-known) tour."""

    instance: Instance
    tour: Tour
    optimal_length: float = field(default=0.0)

    def __post_init__(self):
        if self.tour.n != self.instance.n:
            raise ValueError("tour size does not match instance")
        if self.optimal_length == 0.0:
            object.__setattr__(
                self, "optimal_length", tour_length(self.instance, self.tour)
            )


def tour_length(instance: Instance, tour: Tour) -> float:
    """Length of the closed tour under the instance's metric."""
    if tour.n != instance.n:
        raise ValueError("tour size does not match instance")
    pts = instance.metric_coords()[tour.perm]
    diffs = pts - np.roll(pts, -1, axis=0)
    dists = np.hypot(diffs[:, 0], diffs[:, 1])
    if instance.metric is Metric.TSPLIB_EUC2D_ROUNDED:
        dists = np.floor(dists + 0.5)
    return float(dists.sum())


def generate_uniform(n: int, seed: int, id: str | None = None) -> Instance:
    """Uniform random instance in the unit square; pure in (n, seed)."""
    if n < 3:
        raise ValueError(f"n must be at least 3, got {n}")
    rng = np.random.default_rng(seed)
    coords = rng.random((n, 2))
    if id is None:
        id = f"uniform-n{n}-s{seed}"
    return Instance(id=id, coords=coords)


def optimality_gap(length: float, optimal: float) -> float:
    """Relative excess of a tour length over the optimal length."""
    if optimal <= 0.0:
        raise ValueError("optimal length must be positive")
    return length / optimal - 1.0


# ---------------------------------------------------------------------------
# TSPLIB

def parse_tsplib(text: str, id: str | None = None) -> Instance:
    """Parse a TSPLIB EUC_2D instance from its text.

    Raises TsplibError for unsupported edge weight types (e.g. EXPLICIT)
    and for malformed coordinate lines, carrying the offending line
    number.
    """
    lines = text.splitlines()
    name = None
    dimension = None
    ewt = None
    coord_start = None
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line or line == "EOF":
            continue
        if line == "NODE_COORD_SECTION":
            coord_start = i
            break
        key, _, value = line.partition(":")
        key = key.strip().upper()
        value = value.strip()
        if key == "NAME":
            name = value
        elif key == "TYPE":
            if value.split()[0] != "TSP":
                raise TsplibError(f"unsupported TYPE {value!r}", line=i)
        elif key == "DIMENSION":
            try:
                dimension = int(value)
            except ValueError:
                raise TsplibError(f"bad DIMENSION {value!r}", line=i) from None
        elif key == "EDGE_WEIGHT_TYPE":
            ewt = value
    if ewt != "EUC_2D":
        raise TsplibError(f"unsupported EDGE_WEIGHT_TYPE {ewt!r}")
    if dimension is None:
        raise TsplibError("missing DIMENSION")
    if dimension < 3:
        raise TsplibError(f"DIMENSION must be at least 3, got {dimension}")
    if coord_start is None:
        raise TsplibError("missing NODE_COORD_SECTION")

    raw = np.full((dimension, 2), np.nan)
    count = 0
    for ln in range(coord_start, len(lines)):
        line = lines[ln].strip()
        if not line:
            continue
        if line == "EOF":
            break
        parts = line.split()
        if len(parts) != 3:
            raise TsplibError(f"bad coordinate line {line!r}", line=ln + 1)
        try:
            idx = int(parts[0])
            x = float(parts[1])
            y = float(parts[2])
        except ValueError:
            raise TsplibError(f"bad coordinate line {line!r}", line=ln + 1) from None
        if idx < 1 or idx > dimension:
            raise TsplibError(f"node index {idx} out of range", line=ln + 1)
        raw[idx - 1] = (x, y)
        count += 1
    if count != dimension or np.isnan(raw).any():
        raise TsplibError(f"expected {dimension} coordinate lines, got {count}")

    return Instance.from_raw(
        id=id or name or "tsplib", raw=raw, metric=Metric.TSPLIB_EUC2D_ROUNDED
    )


def load_tsplib(path: str) -> Instance:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    stem = os.path.splitext(os.path.basename(path))[0]
    return parse_tsplib(text, id=stem)


def serialize_tsplib(instance: Instance) -> str:
    """Render an instance as TSPLIB EUC_2D text; round-trips raw_coords."""
    raw = instance.metric_coords()
    out = [
        f"NAME : {instance.id}",
        "TYPE : TSP",
        f"DIMENSION : {instance.n}",
        "EDGE_WEIGHT_TYPE : EUC_2D",
        "NODE_COORD_SECTION",
    ]
    for k in range(instance.n):
        out.append(f"{k + 1} {float(raw[k, 0])!r} {float(raw[k, 1])!r}")
    out.append("EOF")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Internal text formats

def format_instance(instance: Instance) -> str:
    """Internal format: first line n, then one 'x y' line per node."""
    rows = [str(instance.n)]
    for k in range(instance.n):
        rows.append(f"{float(instance.coords[k, 0])!r} {float(instance.coords[k, 1])!r}")
    return "\n".join(rows) + "\n"


def save_instance(instance: Instance, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_instance(instance))


def _parse_coord_block(lines: list[str], start: int, n: int) -> np.ndarray:
    coords = np.empty((n, 2))
    for k in range(n):
        ln = start + k
        if ln >= len(lines):
            raise DatasetFormatError("unexpected end of file", line=ln + 1)
        parts = lines[ln].split()
        if len(parts) != 2:
            raise DatasetFormatError(f"expected 'x y', got {lines[ln]!r}", line=ln + 1)
        try:
            coords[k] = (float(parts[0]), float(parts[1]))
        except ValueError:
            raise DatasetFormatError(
                f"bad coordinate {lines[ln]!r}", line=ln + 1
            ) from None
    return coords


def parse_instance(text: str, id: str) -> Instance:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DatasetFormatError("empty instance file", line=1)
    try:
        n = int(lines[0])
    except ValueError:
        raise DatasetFormatError(f"bad node count {lines[0]!r}", line=1) from None
    if n < 3:
        raise DatasetFormatError(f"node count must be at least 3, got {n}", line=1)
    coords = _parse_coord_block(lines, 1, n)
    if len(lines) != 1 + n:
        raise DatasetFormatError(f"trailing data after {n} nodes", line=n + 2)
    return Instance(id=id, coords=coords)


def load_instance(path: str) -> Instance:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    stem = os.path.splitext(os.path.basename(path))[0]
    return parse_instance(text, id=stem)


def format_labeled(labeled: LabeledInstance) -> str:
    """Labeled record: the instance block plus a 1-based permutation line."""
    perm_line = " ".join(str(int(v) + 1) for v in labeled.tour.perm)
    return format_instance(labeled.instance) + perm_line + "\n"


def save_labeled(records: list[LabeledInstance], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(format_labeled(rec))


def parse_labeled(text: str, id_prefix: str) -> list[LabeledInstance]:
    """Parse a labeled-dataset file holding one or more records."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    records = []
    pos = 0
    while pos < len(lines):
        try:
            n = int(lines[pos])
        except ValueError:
            raise DatasetFormatError(
                f"bad node count {lines[pos]!r}", line=pos + 1
            ) from None
        if n < 3:
            raise DatasetFormatError(
                f"node count must be at least 3, got {n}", line=pos + 1
            )
        coords = _parse_coord_block(lines, pos + 1, n)
        perm_ln = pos + 1 + n
        if perm_ln >= len(lines):
            raise DatasetFormatError("missing permutation line", line=perm_ln + 1)
        parts = lines[perm_ln].split()
        if len(parts) != n:
            raise DatasetFormatError(
                f"expected {n} permutation entries, got {len(parts)}",
                line=perm_ln + 1,
            )
        try:
            perm = np.array([int(p) - 1 for p in parts], dtype=np.int32)
        except ValueError:
            raise DatasetFormatError("bad permutation entry", line=perm_ln + 1) from None
        if perm.min() < 0 or perm.max() >= n or len(np.unique(perm)) != n:
            raise DatasetFormatError(
                "not a permutation of 1..n", line=perm_ln + 1
            )
        inst = Instance(id=f"{id_prefix}-{len(records):05d}", coords=coords)
        records.append(LabeledInstance(instance=inst, tour=Tour(perm)))
        pos = perm_ln + 1
    return records


def load_labeled(path: str) -> list[LabeledInstance]:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    stem = os.path.basename(path)
    for suffix in (".labeled.txt", ".txt"):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
            break
    return parse_labeled(text, id_prefix=stem)


# ---------------------------------------------------------------------------
# Exact solver

@njit(cache=True)
def _held_karp(dmat):  # pragma: no cover - exercised through held_karp_optimal
    n = dmat.shape[0]
    m = n - 1
    full = 1 << m
    inf = np.inf
    dp = np.full((full, m), inf)
    parent = np.full((full, m), -1, dtype=np.int32)
    for j in range(m):
        dp[1 << j, j] = dmat[0, j + 1]
    for mask in range(1, full):
        for j in range(m):
            if not (mask >> j) & 1:
                continue
            cur = dp[mask, j]
            if cur == inf:
                continue
            for k in range(m):
                if (mask >> k) & 1:
                    continue
                nmask = mask | (1 << k)
                cand = cur + dmat[j + 1, k + 1]
                if cand < dp[nmask, k]:
                    dp[nmask, k] = cand
                    parent[nmask, k] = j
    best = inf
    best_j = -1
    last = full - 1
    for j in range(m):
        cand = dp[last, j] + dmat[j + 1, 0]
        if cand < best:
            best = cand
            best_j = j
    perm = np.empty(n, dtype=np.int32)
    mask = last
    j = best_j
    for t in range(m, 0, -1):
        perm[t] = j + 1
        pj = parent[mask, j]
        mask ^= 1 << j
        j = pj
    perm[0] = 0
    return best, perm


def distance_matrix(instance: Instance) -> np.ndarray:
    """Full pairwise distance matrix under the instance's metric."""
    pts = instance.metric_coords()
    diff = pts[:, None, :] - pts[None, :, :]
    d = np.hypot(diff[..., 0], diff[..., 1])
    if instance.metric is Metric.TSPLIB_EUC2D_ROUNDED:
        d = np.floor(d + 0.5)
    return d


def held_karp_optimal(instance: Instance) -> LabeledInstance:
    """Exact optimum by dynamic programming; capped at n = 16."""
    n = instance.n
    if n > HELD_KARP_MAX_N:
        raise SizeLimitError(
            f"exact solver capped at n = {HELD_KARP_MAX_N}, got {n}"
        )
    if n < 3:
        raise ValueError("exact solver needs at least 3 nodes")
    dmat = distance_matrix(instance)
    _, perm = _held_karp(dmat)
    tour = Tour(perm)
    return LabeledInstance(
        instance=instance, tour=tour, optimal_length=tour_length(instance, tour)
    )
