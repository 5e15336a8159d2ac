"""Gated graph convolution network over rescaled neighborhoods, in torch.

The architecture matches the solver's inference network: linear
embeddings of coordinates and rescaled edge lengths, residual layers
that gate neighbor messages with edge features and project both edge
endpoints through one shared matrix, and a two-layer head that turns
edge features into per-slot logits. GELU is the exact erf form and
layer norm uses eps 1e-5, both per feature, so a weight file written by
`export` reproduces this module's heats when the solver loads it.

All matrices use the (in, out) row-vector convention, y = x @ W + b.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import formats

LN_EPS = 1e-5
HEAT_LO = float(np.nextafter(0.0, 1.0))
HEAT_HI = float(np.nextafter(1.0, 0.0))


def _uniform_param(rng: np.random.Generator, fan_in: int, shape) -> nn.Parameter:
    s = 1.0 / math.sqrt(fan_in)
    arr = rng.uniform(-s, s, size=shape).astype(np.float32)
    return nn.Parameter(torch.from_numpy(arr))


class ConvBlock(nn.Module):
    """One residual update of node and edge features."""

    def __init__(self, h: int, rng: np.random.Generator):
        super().__init__()
        self.w3 = _uniform_param(rng, h, (h, h))
        self.b3 = _uniform_param(rng, h, (h,))
        self.w4 = _uniform_param(rng, h, (h, h))
        self.b4 = _uniform_param(rng, h, (h,))
        self.w5 = _uniform_param(rng, h, (h, h))
        self.b5 = _uniform_param(rng, h, (h,))
        self.w6 = _uniform_param(rng, h, (h, h))
        self.b6 = _uniform_param(rng, h, (h,))
        self.ln_node_gain = nn.Parameter(torch.ones(h))
        self.ln_node_offset = nn.Parameter(torch.zeros(h))
        self.ln_edge_gain = nn.Parameter(torch.ones(h))
        self.ln_edge_offset = nn.Parameter(torch.zeros(h))

    def forward(self, x, e, x_nb_of):
        h = x.shape[-1]
        gate = torch.sigmoid(e)
        msg = x_nb_of(x) @ self.w4 + self.b4
        agg = (gate * msg).sum(dim=2)
        node_pre = x @ self.w3 + self.b3 + agg
        x_new = x + F.gelu(
            F.layer_norm(node_pre, (h,), self.ln_node_gain, self.ln_node_offset, LN_EPS)
        )
        # the endpoint projection reads the layer's input features
        xw6 = x @ self.w6 + self.b6
        edge_pre = e @ self.w5 + self.b5 + xw6.unsqueeze(2) + x_nb_of(xw6)
        e_new = e + F.gelu(
            F.layer_norm(edge_pre, (h,), self.ln_edge_gain, self.ln_edge_offset, LN_EPS)
        )
        return x_new, e_new


class HeatmapNet(nn.Module):
    """The full network; `l` residual blocks of width `h`."""

    def __init__(self, l: int, h: int, k1_hint: int = 50, seed: int = 0):
        super().__init__()
        if l < 1 or h < 1:
            raise ValueError(f"bad dimensions l={l} h={h}")
        self.l = l
        self.h = h
        self.k1_hint = k1_hint
        rng = np.random.default_rng(seed)
        self.w1 = _uniform_param(rng, 2, (2, h))
        self.b1 = _uniform_param(rng, 2, (h,))
        self.w2 = _uniform_param(rng, 1, (1, h))
        self.b2 = _uniform_param(rng, 1, (h,))
        self.blocks = nn.ModuleList(ConvBlock(h, rng) for _ in range(l))
        self.m1 = _uniform_param(rng, h, (h, h))
        self.mb1 = _uniform_param(rng, h, (h,))
        self.m2 = _uniform_param(rng, h, (h, 1))
        self.mb2 = _uniform_param(rng, h, (1,))

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(
        self,
        coords: torch.Tensor,
        rescaled: torch.Tensor,
        neighbors: torch.Tensor,
    ) -> torch.Tensor:
        """Logits of shape (batch, n, k1) from batched homogeneous inputs."""
        if coords.dim() != 3 or coords.shape[-1] != 2:
            raise ValueError("coords must have shape (batch, n, 2)")
        if rescaled.shape != neighbors.shape or rescaled.dim() != 3:
            raise ValueError("rescaled and neighbors must both be (batch, n, k1)")
        batch = coords.shape[0]
        idx = neighbors.long()
        b = torch.arange(batch, device=coords.device).view(batch, 1, 1)

        def x_nb_of(t):
            return t[b, idx]

        x = coords @ self.w1 + self.b1
        e = rescaled.unsqueeze(-1) * self.w2[0] + self.b2
        for block in self.blocks:
            x, e = block(x, e, x_nb_of)
        hidden = F.gelu(e @ self.m1 + self.mb1)
        return (hidden @ self.m2).squeeze(-1) + self.mb2[0]

    def case_logits(self, coords, rescaled, neighbors) -> torch.Tensor:
        """Logits (n, k1) for one instance."""
        out = self.forward(
            coords.unsqueeze(0), rescaled.unsqueeze(0), neighbors.unsqueeze(0)
        )
        return out[0]

    @torch.no_grad()
    def heats(self, coords, rescaled, neighbors) -> np.ndarray:
        """Clipped heats (n, k1) with slot 0 forced to zero, as float64."""
        logits = self.case_logits(coords, rescaled, neighbors)
        if not torch.isfinite(logits).all():
            raise ValueError("non-finite logits")
        values = torch.clamp(torch.sigmoid(logits), HEAT_LO, HEAT_HI)
        out = values.double().cpu().numpy()
        out[:, 0] = 0.0
        return out

    # -- weight file round trip ---------------------------------------

    def _file_tensors(self) -> dict[str, np.ndarray]:
        out = {
            "w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2,
            "m1": self.m1, "mb1": self.mb1, "m2": self.m2, "mb2": self.mb2,
        }
        for i, block in enumerate(self.blocks, start=1):
            for name in (
                "w3", "b3", "w4", "b4", "w5", "b5", "w6", "b6",
                "ln_node_gain", "ln_node_offset", "ln_edge_gain", "ln_edge_offset",
            ):
                out[f"layer{i}.{name}"] = getattr(block, name)
        return {
            k: v.detach().cpu().to(torch.float32).numpy() for k, v in out.items()
        }

    def export(self, path: str) -> None:
        formats.write_weights(path, self.l, self.h, self.k1_hint, self._file_tensors())

    def load_file_tensors(self, fields: dict[str, np.ndarray]) -> None:
        with torch.no_grad():
            for name, arr in fields.items():
                if name.startswith("layer"):
                    head, attr = name.split(".", 1)
                    target = getattr(self.blocks[int(head[5:]) - 1], attr)
                else:
                    target = getattr(self, name)
                target.copy_(torch.from_numpy(np.ascontiguousarray(arr)))

    @classmethod
    def from_file(cls, path: str) -> "HeatmapNet":
        wf = formats.read_weights(path)
        net = cls(l=wf.l, h=wf.h, k1_hint=wf.k1_hint)
        net.load_file_tensors(wf.fields)
        return net
