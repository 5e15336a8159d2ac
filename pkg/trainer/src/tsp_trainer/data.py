"""Mixed-size training datasets with reference tours attached.

A dataset is built from a scale mix, a list of (node count, proportion)
pairs. Proportions are turned into per-scale instance counts by largest
remainder so the counts always sum to the requested size. Instance
coordinates are drawn uniformly in the unit square from a generator
seeded by (seed, scale, index), which makes every case reproducible in
isolation, and the finished list is shuffled once so scales interleave
deterministically.

Labeling failures skip the instance with a logged warning instead of
aborting the build; a hard failure of the whole batch labeler is not
recoverable and propagates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import labels as labels_mod
from .geometry import Neighborhoods, build_neighborhoods
from .loss import SlotLabels, make_labels

log = logging.getLogger("tsp_trainer")

Labeler = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LabeledCase:
    """One training instance with neighborhoods and slot targets ready."""

    coords: np.ndarray
    perm: np.ndarray
    hoods: Neighborhoods
    labels: SlotLabels

    @property
    def n(self) -> int:
        return self.coords.shape[0]


def counts_for_mix(scale_mix, dataset_size: int) -> list[int]:
    """Largest-remainder apportionment of dataset_size over the mix."""
    props = [p for _, p in scale_mix]
    total = sum(props)
    raw = [dataset_size * p / total for p in props]
    counts = [int(r) for r in raw]
    short = dataset_size - sum(counts)
    remainders = sorted(
        range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i)
    )
    for i in remainders[:short]:
        counts[i] += 1
    return counts


def case_coords(seed: int, scale: int, index: int) -> np.ndarray:
    """Coordinates of dataset case (scale, index) under a base seed."""
    rng = np.random.default_rng([seed, scale, index])
    return rng.random((scale, 2))


def prepare_case(coords: np.ndarray, perm: np.ndarray) -> LabeledCase:
    hoods = build_neighborhoods(coords)
    return LabeledCase(
        coords=np.asarray(coords, dtype=np.float64),
        perm=np.asarray(perm, dtype=np.int32),
        hoods=hoods,
        labels=make_labels(hoods.neighbors, perm),
    )


def default_labeler(coords: np.ndarray) -> np.ndarray:
    """Exact tours up to 16 nodes; larger instances need the solver path."""
    return labels_mod.held_karp_perm(coords)


def build_mixed_dataset(
    cfg,
    labeler: Labeler | None = None,
    pseudo_label_budget: str = labels_mod.PSEUDO_LABEL_BUDGET,
) -> list[LabeledCase]:
    """Generate, label, and shuffle cfg.dataset_size training cases.

    With no labeler, scales up to 16 nodes get exact tours and larger
    scales are sent through the solver in one batch per scale at
    `pseudo_label_budget`.
    """
    counts = counts_for_mix(cfg.scale_mix, cfg.dataset_size)
    cases: list[LabeledCase] = []
    for (scale, _), count in zip(cfg.scale_mix, counts):
        batch = [case_coords(cfg.seed, scale, idx) for idx in range(count)]
        if labeler is None and scale > labels_mod.HELD_KARP_MAX_N:
            perms = labels_mod.pseudo_label_perms(
                batch, budget=pseudo_label_budget, seed=cfg.seed
            )
            cases.extend(prepare_case(c, p) for c, p in zip(batch, perms))
            continue
        label_one = labeler if labeler is not None else default_labeler
        for idx, coords in enumerate(batch):
            try:
                perm = label_one(coords)
            except Exception as exc:
                log.warning(
                    "skipping case (scale=%d, index=%d): labeler failed: %s",
                    scale, idx, exc,
                )
                continue
            cases.append(prepare_case(coords, perm))
    order = np.random.default_rng(cfg.seed).permutation(len(cases))
    return [cases[i] for i in order]
