"""Bidirectional heat loss over neighborhood slots.

For each node i and each of its neighbor slots j the target is binary:
slot j is positive when the listed neighbor is adjacent to i in the
reference tour (either direction), negative otherwise. The loss is

    L = -(sum_i sum_j Z_ij) / n
    Z_ij = log(H_ij + eps)      if slot j is positive
    Z_ij = log(1 - H_ij + eps)  otherwise

with H the sigmoid of the logits. Slot 0 (the node itself) is skipped;
pairs outside the neighborhood would contribute constants and are
dropped, except that a tour neighbor missing from the row is charged
its positive term on a clamped zero heat, log(eps), so truncated
neighborhoods are penalized rather than ignored. The per-instance 1/n
keeps magnitudes stable when instances of different sizes share a
training run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class SlotLabels:
    """Per-slot targets for one instance.

    pos and valid have the neighbor-row shape (n, k1); valid is False
    on slot 0. misses counts directed tour adjacencies that the rows do
    not contain, coverage is the contained fraction.
    """

    pos: np.ndarray
    valid: np.ndarray
    misses: int
    coverage: float


def make_labels(neighbors: np.ndarray, perm: np.ndarray) -> SlotLabels:
    n, k1 = neighbors.shape
    perm = np.asarray(perm, dtype=np.int64)
    succ = np.empty(n, dtype=np.int64)
    pred = np.empty(n, dtype=np.int64)
    succ[perm] = np.roll(perm, -1)
    pred[perm] = np.roll(perm, 1)

    valid = np.ones((n, k1), dtype=bool)
    valid[:, 0] = False
    own = np.arange(n)[:, None]
    pos = valid & ((neighbors == succ[own]) | (neighbors == pred[own]))
    present = int(pos.sum())
    return SlotLabels(
        pos=pos, valid=valid, misses=2 * n - present, coverage=present / (2 * n)
    )


def bidirectional_loss(
    heat_logits: torch.Tensor, labels: SlotLabels, epsilon: float = 1e-9
) -> torch.Tensor:
    """Loss for one instance; heat_logits has shape (n, k1)."""
    if heat_logits.dim() != 2 or heat_logits.shape != labels.pos.shape:
        raise ValueError("logits shape does not match labels")
    n = heat_logits.shape[0]
    heat = torch.sigmoid(heat_logits)
    pos = torch.from_numpy(labels.pos).to(heat_logits.device)
    valid = torch.from_numpy(labels.valid).to(heat_logits.device)
    z = torch.where(
        pos, torch.log(heat + epsilon), torch.log(1.0 - heat + epsilon)
    )
    total = z[valid].sum() + labels.misses * math.log(epsilon)
    return -total / n


def batch_loss(
    heat_logits: torch.Tensor, labels: list[SlotLabels], epsilon: float = 1e-9
) -> torch.Tensor:
    """Mean per-instance loss over a homogeneous batch (batch, n, k1)."""
    if heat_logits.dim() != 3 or heat_logits.shape[0] != len(labels):
        raise ValueError("expected one label set per batch row")
    n = heat_logits.shape[1]
    heat = torch.sigmoid(heat_logits)
    pos = torch.from_numpy(np.stack([lb.pos for lb in labels])).to(heat_logits.device)
    valid = torch.from_numpy(np.stack([lb.valid for lb in labels])).to(
        heat_logits.device
    )
    z = torch.where(pos, torch.log(heat + epsilon), torch.log(1.0 - heat + epsilon))
    z = torch.where(valid, z, torch.zeros((), dtype=z.dtype, device=z.device))
    per_case = z.sum(dim=(1, 2))
    miss = torch.tensor(
        [lb.misses * math.log(epsilon) for lb in labels],
        dtype=per_case.dtype,
        device=per_case.device,
    )
    return (-(per_case + miss) / n).mean()
