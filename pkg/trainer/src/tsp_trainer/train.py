"""Training loop: Adam with a cosine learning-rate decay to zero.

Batches are homogeneous in instance size. Each epoch shuffles every
scale's cases, chops them into batches, and shuffles the batch order,
so the chance that a given batch comes from a given scale follows the
mix proportions while tensors stay rectangular.

The schedule starts at lr_max on step 0 and reaches exactly 0 on the
final step. A non-finite batch loss aborts the run: the most recent
good parameter snapshot is exported instead of the diverged state.
Weight files are written atomically (temp file, then rename).
"""

from __future__ import annotations

import copy
import csv
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import LabeledCase
from .loss import batch_loss
from .model import HeatmapNet

log = logging.getLogger("tsp_trainer")

DEFAULT_SCALE_MIX = ((20, 1), (30, 2), (50, 3), (100, 4))

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    dataset_size: int
    epochs: int = 3
    batch_size: int = 32
    lr_max: float = 5e-4
    scale_mix: tuple[tuple[int, int], ...] = DEFAULT_SCALE_MIX
    seed: int = 0
    epsilon_loss: float = 1e-9
    layers: int = 6
    width: int = 128

    def __post_init__(self):
        if self.dataset_size < 1:
            raise ValueError(f"dataset_size must be positive, got {self.dataset_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if not self.lr_max > 0.0:
            raise ValueError(f"lr_max must be positive, got {self.lr_max}")
        if not self.scale_mix:
            raise ValueError("scale_mix must not be empty")
        for scale, prop in self.scale_mix:
            if scale < 3:
                raise ValueError(f"scales need at least 3 nodes, got {scale}")
            if prop <= 0:
                raise ValueError(f"mix proportions must be positive, got {prop}")
        if not self.epsilon_loss > 0.0:
            raise ValueError("epsilon_loss must be positive")
        if self.layers < 1 or self.width < 1:
            raise ValueError(f"bad dimensions l={self.layers} h={self.width}")


@dataclass(frozen=True)
class TrainRecord:
    """One optimizer step: loss before the step, lr applied to it."""

    epoch: int
    step: int
    loss: float
    lr: float
    wall_time: float

    def __post_init__(self):
        if not math.isfinite(self.loss):
            raise ValueError(f"loss must be finite, got {self.loss}")


@dataclass(frozen=True)
class TrainResult:
    records: list[TrainRecord]
    aborted: bool
    weights_path: str
    log_path: str
    final_loss: float = field(default=math.nan)


def cosine_lr(step: int, total_steps: int, lr_max: float) -> float:
    """lr_max at step 0, exactly 0 at step total_steps - 1."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside schedule of {total_steps}")
    if total_steps == 1:
        return lr_max
    return lr_max * 0.5 * (1.0 + math.cos(math.pi * step / (total_steps - 1)))


def _atomic_export(net: HeatmapNet, state: dict, path: str) -> None:
    backup = copy.deepcopy(net.state_dict())
    net.load_state_dict(state)
    tmp = f"{path}.tmp-{os.getpid()}"
    try:
        net.export(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
        net.load_state_dict(backup)


def _write_log(records: list[TrainRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "step", "loss", "lr"])
        for rec in records:
            writer.writerow(
                [rec.epoch, rec.step, f"{rec.loss:.10g}", f"{rec.lr:.10g}"]
            )


def _epoch_batches(
    by_scale: dict[int, list[int]], batch_size: int, rng: np.random.Generator
) -> list[list[int]]:
    batches: list[list[int]] = []
    for scale in sorted(by_scale):
        idx = np.array(by_scale[scale])
        idx = idx[rng.permutation(len(idx))]
        for lo in range(0, len(idx), batch_size):
            batches.append(idx[lo : lo + batch_size].tolist())
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def _collate(cases: list[LabeledCase]):
    coords = torch.from_numpy(
        np.stack([c.coords for c in cases]).astype(np.float32)
    )
    rescaled = torch.from_numpy(
        np.stack([c.hoods.rescaled_dist for c in cases]).astype(np.float32)
    )
    neighbors = torch.from_numpy(
        np.stack([c.hoods.neighbors for c in cases]).astype(np.int64)
    )
    return coords, rescaled, neighbors, [c.labels for c in cases]


def train(
    cfg: TrainConfig,
    dataset: list[LabeledCase],
    weights_path: str,
    log_path: str,
    snapshot_every: int = 50,
) -> TrainResult:
    """Fit a fresh network on the dataset and export it.

    Returns the per-step records; `aborted` is set when a non-finite
    loss cut the run short, in which case the exported file holds the
    last good snapshot instead of the final parameters.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    net = HeatmapNet(l=cfg.layers, h=cfg.width, seed=cfg.seed)
    k1_cap = max(case.hoods.k1 for case in dataset)
    net.k1_hint = k1_cap
    optimizer = torch.optim.Adam(
        net.parameters(), lr=cfg.lr_max, betas=ADAM_BETAS, eps=ADAM_EPS
    )

    by_scale: dict[int, list[int]] = {}
    for i, case in enumerate(dataset):
        by_scale.setdefault(case.n, []).append(i)
    batches_per_epoch = sum(
        math.ceil(len(v) / cfg.batch_size) for v in by_scale.values()
    )
    total_steps = cfg.epochs * batches_per_epoch

    records: list[TrainRecord] = []
    good_state = copy.deepcopy(net.state_dict())
    aborted = False
    step = 0
    started = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng([cfg.seed, 7_919, epoch])
        for batch_idx in _epoch_batches(by_scale, cfg.batch_size, rng):
            coords, rescaled, neighbors, labels = _collate(
                [dataset[i] for i in batch_idx]
            )
            logits = net(coords, rescaled, neighbors)
            loss = batch_loss(logits, labels, epsilon=cfg.epsilon_loss)
            loss_val = float(loss.detach())
            if not math.isfinite(loss_val):
                log.error(
                    "non-finite loss at epoch %d step %d; restoring last "
                    "good snapshot", epoch, step,
                )
                aborted = True
                break
            lr = cosine_lr(step, total_steps, cfg.lr_max)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            records.append(
                TrainRecord(
                    epoch=epoch,
                    step=step,
                    loss=loss_val,
                    lr=lr,
                    wall_time=time.perf_counter() - started,
                )
            )
            step += 1
            if step % snapshot_every == 0:
                good_state = copy.deepcopy(net.state_dict())
        else:
            good_state = copy.deepcopy(net.state_dict())
            continue
        break

    export_state = good_state if aborted else net.state_dict()
    _atomic_export(net, export_state, weights_path)
    _write_log(records, log_path)
    return TrainResult(
        records=records,
        aborted=aborted,
        weights_path=weights_path,
        log_path=log_path,
        final_loss=records[-1].loss if records else math.nan,
    )
