"""Finite-difference verification of the analytic loss gradient.

Central differences against autograd on a micro-batch. The check is
restricted to small shapes (n <= 10, width <= 8, depth <= 2) so the
full double-precision loss stays cheap to evaluate twice per sampled
parameter. Deviations are relative with an absolute floor of 1e-6,
which is the honest noise level of a float64 central difference here;
anything above 1e-3 marks the check as failed and names the worst
parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .data import LabeledCase
from .loss import bidirectional_loss
from .model import HeatmapNet

MAX_NODES = 10
MAX_WIDTH = 8
MAX_DEPTH = 2
FAIL_THRESHOLD = 1e-3
DEV_FLOOR = 1e-6


@dataclass(frozen=True)
class Deviation:
    name: str
    index: int
    analytic: float
    numeric: float
    rel_dev: float


@dataclass(frozen=True)
class GradCheckReport:
    deviations: list[Deviation]
    max_rel_dev: float
    worst: Deviation
    ok: bool

    def summary(self) -> str:
        status = "ok" if self.ok else "FAILED"
        return (
            f"gradient check {status}: max relative deviation "
            f"{self.max_rel_dev:.3e} at {self.worst.name}[{self.worst.index}] "
            f"(analytic {self.worst.analytic:.6e}, "
            f"numeric {self.worst.numeric:.6e})"
        )


def _prepare(net: HeatmapNet, cases: list[LabeledCase]):
    for case in cases:
        if case.n > MAX_NODES:
            raise ValueError(f"check capped at {MAX_NODES} nodes, got {case.n}")
    if net.h > MAX_WIDTH or net.l > MAX_DEPTH:
        raise ValueError(
            f"check capped at width {MAX_WIDTH}, depth {MAX_DEPTH}; "
            f"got h={net.h} l={net.l}"
        )
    prepared = []
    for case in cases:
        prepared.append(
            (
                torch.from_numpy(case.coords.copy()).double(),
                torch.from_numpy(case.hoods.rescaled_dist.copy()).double(),
                torch.from_numpy(case.hoods.neighbors.astype(np.int64)),
                case.labels,
            )
        )
    return prepared


def _micro_loss(net: HeatmapNet, prepared, epsilon: float) -> torch.Tensor:
    total = None
    for coords, rescaled, neighbors, labels in prepared:
        logits = net.case_logits(coords, rescaled, neighbors)
        case = bidirectional_loss(logits, labels, epsilon=epsilon)
        total = case if total is None else total + case
    return total / len(prepared)


def _rel_dev(numeric: float, analytic: float) -> float:
    return abs(numeric - analytic) / max(abs(numeric), abs(analytic), DEV_FLOOR)


def _fd_at(net, prepared, epsilon, param, flat_index, step) -> float:
    flat = param.detach().view(-1)
    saved = float(flat[flat_index])
    h = step * max(1.0, abs(saved))
    with torch.no_grad():
        flat[flat_index] = saved + h
        hi = float(_micro_loss(net, prepared, epsilon))
        flat[flat_index] = saved - h
        lo = float(_micro_loss(net, prepared, epsilon))
        flat[flat_index] = saved
    return (hi - lo) / (2.0 * h)


def gradient_check(
    net: HeatmapNet,
    cases: list[LabeledCase],
    count: int = 50,
    seed: int = 0,
    step: float = 1e-5,
    epsilon: float = 1e-9,
) -> GradCheckReport:
    """Compare autograd against central differences on sampled weights.

    The network is cast to float64 in place. `count` parameter entries
    are sampled uniformly over all tensors without replacement.
    """
    net.double()
    prepared = _prepare(net, cases)

    net.zero_grad(set_to_none=True)
    loss = _micro_loss(net, prepared, epsilon)
    loss.backward()

    named = [(name, p) for name, p in net.named_parameters()]
    sizes = np.array([p.numel() for _, p in named])
    bounds = np.cumsum(sizes)
    total = int(bounds[-1])
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(count, total), replace=False)

    deviations = []
    for flat in sorted(int(p) for p in picks):
        t = int(np.searchsorted(bounds, flat, side="right"))
        name, param = named[t]
        index = flat - (int(bounds[t - 1]) if t else 0)
        # the final block's node-update branch never reaches the loss,
        # so autograd leaves those grads unset; they are exactly zero
        grad = param.grad
        analytic = 0.0 if grad is None else float(grad.detach().view(-1)[index])
        numeric = _fd_at(net, prepared, epsilon, param, index, step)
        deviations.append(
            Deviation(
                name=name,
                index=index,
                analytic=analytic,
                numeric=numeric,
                rel_dev=_rel_dev(numeric, analytic),
            )
        )
    worst = max(deviations, key=lambda d: d.rel_dev)
    return GradCheckReport(
        deviations=deviations,
        max_rel_dev=worst.rel_dev,
        worst=worst,
        ok=worst.rel_dev <= FAIL_THRESHOLD,
    )


def deviation_sweep(
    net: HeatmapNet,
    cases: list[LabeledCase],
    name: str,
    index: int,
    steps: tuple[float, ...] = (1e-4, 1e-5, 1e-6),
    epsilon: float = 1e-9,
) -> list[float]:
    """Relative deviations of one parameter entry across FD step sizes."""
    net.double()
    prepared = _prepare(net, cases)
    net.zero_grad(set_to_none=True)
    loss = _micro_loss(net, prepared, epsilon)
    loss.backward()
    param = dict(net.named_parameters())[name]
    grad = param.grad
    analytic = 0.0 if grad is None else float(grad.detach().view(-1)[index])
    return [
        _rel_dev(_fd_at(net, prepared, epsilon, param, index, s), analytic)
        for s in steps
    ]
