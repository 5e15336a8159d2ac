"""Reference tours for training instances.

Small instances (up to 16 nodes) are labeled exactly with a bitmask
dynamic program. Larger ones are labeled by the solver command line at
a generous budget; those tours are near-optimal rather than exact, so
they are pseudo-labels in the usual sense.
"""

from __future__ import annotations

import os
import subprocess
import sys
import tempfile

import numpy as np
from numba import njit

from . import formats

HELD_KARP_MAX_N = 16

# ten times the solver's default per-node wall budget
PSEUDO_LABEL_BUDGET = "wall:0.5n"


class LabelError(Exception):
    """Raised when a labeler cannot produce a tour for an instance."""


@njit(cache=True)
def _held_karp_perm(dmat):  # pragma: no cover - exercised via held_karp_perm
    n = dmat.shape[0]
    m = n - 1
    full = 1 << m
    inf = np.inf
    dp = np.full((full, m), inf)
    parent = np.full((full, m), -1, dtype=np.int16)
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
                nm = mask | (1 << k)
                cand = cur + dmat[j + 1, k + 1]
                if cand < dp[nm, k]:
                    dp[nm, k] = cand
                    parent[nm, k] = j
    best = inf
    best_j = 0
    for j in range(m):
        cand = dp[full - 1, j] + dmat[j + 1, 0]
        if cand < best:
            best = cand
            best_j = j
    perm = np.empty(n, dtype=np.int32)
    mask = full - 1
    cur = best_j
    pos = n - 1
    while cur >= 0:
        perm[pos] = cur + 1
        pos -= 1
        nxt = parent[mask, cur]
        mask ^= 1 << cur
        cur = nxt
    perm[0] = 0
    return perm


def held_karp_perm(coords: np.ndarray) -> np.ndarray:
    """Exact optimal tour as a permutation starting at node 0."""
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if n < 3:
        raise LabelError(f"need at least 3 nodes, got {n}")
    if n > HELD_KARP_MAX_N:
        raise LabelError(f"exact labeling capped at {HELD_KARP_MAX_N} nodes, got {n}")
    diff = coords[:, None, :] - coords[None, :, :]
    dmat = np.hypot(diff[:, :, 0], diff[:, :, 1])
    return _held_karp_perm(dmat)


def solver_cli(*args: str) -> list[str]:
    """Command vector for one solver CLI invocation."""
    return [sys.executable, "-m", "rescale_tsp.cli", *args]


def pseudo_label_perms(
    coords_list: list[np.ndarray],
    budget: str = PSEUDO_LABEL_BUDGET,
    seed: int = 0,
) -> list[np.ndarray]:
    """Label instances with the solver CLI; order follows the input list."""
    if not coords_list:
        return []
    with tempfile.TemporaryDirectory(prefix="pseudo-label-") as tmp:
        in_dir = os.path.join(tmp, "instances")
        os.makedirs(in_dir)
        for idx, coords in enumerate(coords_list):
            formats.write_points(coords, os.path.join(in_dir, f"case-{idx:05d}.txt"))
        labeled_path = os.path.join(tmp, "labels.txt")
        cmd = solver_cli(
            "solve",
            "--instances", in_dir,
            "--budget", budget,
            "--seed", str(seed),
            "--emit-labeled", labeled_path,
            "--out", os.path.join(tmp, "results.json"),
        )
        proc = subprocess.run(cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            raise LabelError(
                f"solver labeling failed (exit {proc.returncode}): "
                f"{proc.stderr.strip()}"
            )
        cases = formats.load_labeled(labeled_path)
    if len(cases) != len(coords_list):
        raise LabelError(
            f"solver returned {len(cases)} tours for {len(coords_list)} instances"
        )
    return [perm for _, perm in cases]
