"""Residual gated graph convolution over rescaled k-NN subgraphs.

Inputs are the global node coordinates and the per-subgraph rescaled
edge lengths. Each layer updates node features with a sigmoid-gated sum
over the node's neighbor slots and updates edge features from the edge
itself plus a shared projection of its two endpoints. The head turns
final edge features into one heat per (node, neighbor) slot.

Weights use a row-vector convention: features are rows, every matrix
has shape (in_dim, out_dim), and y = x @ W + b. The edge update applies
one endpoint matrix to both endpoints, which is what keeps the default
configuration (6 layers, width 128) at about 0.417M parameters.

The weight file is little-endian: magic ``RSGC``, then uint32 version
(1), layer count, width, and a candidate-count hint, followed by all
tensors as float32 row-major in a fixed order (embedding, layers in
order, head). The endpoint slots named w7/b7 in the file are written as
copies of w6/b6 and must match on load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import NumericError, WeightFormatError
from .instances import Instance
from .subgraph import SubgraphSet

MAGIC = b"RSGC"
VERSION = 1
LN_EPS = 1e-5

_SQRT1_2 = 1.0 / np.sqrt(2.0)
_HEAT_LO = np.nextafter(0.0, 1.0)
_HEAT_HI = np.nextafter(1.0, 0.0)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) GELU."""
    return 0.5 * x * (1.0 + erf(x * _SQRT1_2))


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _f32(a, shape) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float32).reshape(shape)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LayerWeights:
    """One convolution layer: four matrices, their biases, two norms."""

    w3: np.ndarray
    b3: np.ndarray
    w4: np.ndarray
    b4: np.ndarray
    w5: np.ndarray
    b5: np.ndarray
    w6: np.ndarray
    b6: np.ndarray
    ln_node_gain: np.ndarray
    ln_node_offset: np.ndarray
    ln_edge_gain: np.ndarray
    ln_edge_offset: np.ndarray


@dataclass(frozen=True)
class ModelWeights:
    """Full parameter set for the heatmap network."""

    l: int
    h: int
    k1_hint: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    layers: tuple[LayerWeights, ...]
    m1: np.ndarray
    mb1: np.ndarray
    m2: np.ndarray
    mb2: np.ndarray

    def param_count(self) -> int:
        """Number of learnable scalars (shared tensors counted once)."""
        h = self.h
        embed = 2 * h + h + h + h
        per_layer = 4 * h * h + 4 * h + 4 * h
        head = h * h + h + h + 1
        return embed + self.l * per_layer + head

    @classmethod
    def random(
        cls, l: int = 6, h: int = 128, seed: int = 0, k1_hint: int = 50
    ) -> "ModelWeights":
        """Random initialization (uniform +-1/sqrt(fan_in) per matrix)."""
        rng = np.random.default_rng(seed)

        def mat(fan_in, shape):
            s = 1.0 / np.sqrt(fan_in)
            return _f32(rng.uniform(-s, s, size=shape), shape)

        layers = []
        for _ in range(l):
            layers.append(
                LayerWeights(
                    w3=mat(h, (h, h)),
                    b3=mat(h, (h,)),
                    w4=mat(h, (h, h)),
                    b4=mat(h, (h,)),
                    w5=mat(h, (h, h)),
                    b5=mat(h, (h,)),
                    w6=mat(h, (h, h)),
                    b6=mat(h, (h,)),
                    ln_node_gain=_f32(np.ones(h), (h,)),
                    ln_node_offset=_f32(np.zeros(h), (h,)),
                    ln_edge_gain=_f32(np.ones(h), (h,)),
                    ln_edge_offset=_f32(np.zeros(h), (h,)),
                )
            )
        return cls(
            l=l,
            h=h,
            k1_hint=k1_hint,
            w1=mat(2, (2, h)),
            b1=mat(2, (h,)),
            w2=mat(1, (1, h)),
            b2=mat(1, (h,)),
            layers=tuple(layers),
            m1=mat(h, (h, h)),
            mb1=mat(h, (h,)),
            m2=mat(h, (h, 1)),
            mb2=mat(h, (1,)),
        )


@dataclass(frozen=True)
class Heatmap:
    """Sparse heats aligned to a subgraph's neighbor slots.

    values[i, r] is the heat of edge (i, neighbors[i, r]); slot 0 is the
    node itself and always 0. Every neighbor heat lies strictly inside
    (0, 1).
    """

    k1: int
    neighbors: np.ndarray
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def heat(self, i: int, j: int) -> float:
        """Heat of edge (i, j); 0 for pairs outside the subgraph."""
        row = self.neighbors[i]
        hits = np.flatnonzero(row == j)
        if hits.size == 0 or j == i:
            return 0.0
        return float(self.values[i, hits[0]])

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n, self.n))
        rows = np.repeat(np.arange(self.n), self.k1)
        dense[rows, self.neighbors.ravel()] = self.values.ravel()
        np.fill_diagonal(dense, 0.0)
        return dense


def layer_norm(v: np.ndarray, gain: np.ndarray, offset: np.ndarray) -> np.ndarray:
    mean = v.mean(axis=-1, keepdims=True)
    var = ((v - mean) ** 2).mean(axis=-1, keepdims=True)
    return (v - mean) / np.sqrt(var + LN_EPS) * gain + offset


def embed(
    weights: ModelWeights, sub: SubgraphSet, instance: Instance
) -> tuple[np.ndarray, np.ndarray]:
    """Linear embeddings of coordinates and rescaled edge lengths."""
    if sub.rescaled_dist is None:
        raise ValueError("subgraph has not been rescaled")
    w1 = weights.w1.astype(np.float64)
    w2 = weights.w2.astype(np.float64)
    x0 = instance.coords @ w1 + weights.b1.astype(np.float64)
    e0 = sub.rescaled_dist[:, :, None] * w2[0][None, None, :] + weights.b2.astype(
        np.float64
    )
    return x0, e0


def conv_layer(
    lw: LayerWeights, x: np.ndarray, e: np.ndarray, neighbors: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """One residual gated update of node and edge features."""
    w3 = lw.w3.astype(np.float64)
    w4 = lw.w4.astype(np.float64)
    w5 = lw.w5.astype(np.float64)
    w6 = lw.w6.astype(np.float64)

    gate = sigmoid(e)
    msg = x[neighbors] @ w4 + lw.b4.astype(np.float64)
    agg = (gate * msg).sum(axis=1)
    node_pre = x @ w3 + lw.b3.astype(np.float64) + agg
    x_new = x + gelu(
        layer_norm(
            node_pre,
            lw.ln_node_gain.astype(np.float64),
            lw.ln_node_offset.astype(np.float64),
        )
    )

    xw6 = x @ w6 + lw.b6.astype(np.float64)
    edge_pre = e @ w5 + lw.b5.astype(np.float64) + xw6[:, None, :] + xw6[neighbors]
    e_new = e + gelu(
        layer_norm(
            edge_pre,
            lw.ln_edge_gain.astype(np.float64),
            lw.ln_edge_offset.astype(np.float64),
        )
    )
    return x_new, e_new


def forward(
    weights: ModelWeights, sub: SubgraphSet, instance: Instance
) -> Heatmap:
    """Run the full network and return the sparse heatmap."""
    x, e = embed(weights, sub, instance)
    for idx, lw in enumerate(weights.layers):
        x, e = conv_layer(lw, x, e, sub.neighbors)
        if not (np.isfinite(x).all() and np.isfinite(e).all()):
            raise NumericError("non-finite features", layer=idx + 1)
    hidden = gelu(e @ weights.m1.astype(np.float64) + weights.mb1.astype(np.float64))
    logits = (hidden @ weights.m2.astype(np.float64))[:, :, 0] + float(weights.mb2[0])
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits in output head")
    values = np.clip(sigmoid(logits), _HEAT_LO, _HEAT_HI)
    values[:, 0] = 0.0
    values.setflags(write=False)
    return Heatmap(k1=sub.k1, neighbors=sub.neighbors, values=values)


def inverse_distance_heatmap(sub: SubgraphSet) -> Heatmap:
    """Heats proportional to 1/distance, row-max-normalized into (0,1).

    The fallback when no trained weights are available. Coincident
    neighbors (zero distance) take the row's maximal heat.
    """
    n, k1 = sub.raw_dist.shape
    values = np.zeros((n, k1))
    for i in range(n):
        d = sub.raw_dist[i, 1:]
        row = np.empty(k1 - 1)
        zero = d <= 0.0
        with np.errstate(divide="ignore"):
            inv = np.where(zero, np.inf, 1.0 / np.where(zero, 1.0, d))
        finite = inv[~zero]
        if finite.size == 0:
            row[:] = _HEAT_HI
        else:
            row = inv * (_HEAT_HI / finite.max())
            row[zero] = _HEAT_HI
        values[i, 1:] = row
    values = np.clip(values, 0.0, _HEAT_HI)
    values[:, 0] = 0.0
    values.setflags(write=False)
    return Heatmap(k1=sub.k1, neighbors=sub.neighbors, values=values)


# ---------------------------------------------------------------------------
# Weight file I/O

def _field_order(l: int, h: int):
    yield "w1", (2, h)
    yield "b1", (h,)
    yield "w2", (1, h)
    yield "b2", (h,)
    for i in range(1, l + 1):
        yield f"layer{i}.w3", (h, h)
        yield f"layer{i}.b3", (h,)
        yield f"layer{i}.w4", (h, h)
        yield f"layer{i}.b4", (h,)
        yield f"layer{i}.w5", (h, h)
        yield f"layer{i}.b5", (h,)
        yield f"layer{i}.w6", (h, h)
        yield f"layer{i}.b6", (h,)
        yield f"layer{i}.w7", (h, h)
        yield f"layer{i}.b7", (h,)
        yield f"layer{i}.ln_node_gain", (h,)
        yield f"layer{i}.ln_node_offset", (h,)
        yield f"layer{i}.ln_edge_gain", (h,)
        yield f"layer{i}.ln_edge_offset", (h,)
    yield "m1", (h, h)
    yield "mb1", (h,)
    yield "m2", (h, 1)
    yield "mb2", (1,)


def _tensors_of(weights: ModelWeights) -> dict[str, np.ndarray]:
    out = {
        "w1": weights.w1,
        "b1": weights.b1,
        "w2": weights.w2,
        "b2": weights.b2,
        "m1": weights.m1,
        "mb1": weights.mb1,
        "m2": weights.m2,
        "mb2": weights.mb2,
    }
    for i, lw in enumerate(weights.layers, start=1):
        out[f"layer{i}.w3"] = lw.w3
        out[f"layer{i}.b3"] = lw.b3
        out[f"layer{i}.w4"] = lw.w4
        out[f"layer{i}.b4"] = lw.b4
        out[f"layer{i}.w5"] = lw.w5
        out[f"layer{i}.b5"] = lw.b5
        out[f"layer{i}.w6"] = lw.w6
        out[f"layer{i}.b6"] = lw.b6
        out[f"layer{i}.w7"] = lw.w6
        out[f"layer{i}.b7"] = lw.b6
        out[f"layer{i}.ln_node_gain"] = lw.ln_node_gain
        out[f"layer{i}.ln_node_offset"] = lw.ln_node_offset
        out[f"layer{i}.ln_edge_gain"] = lw.ln_edge_gain
        out[f"layer{i}.ln_edge_offset"] = lw.ln_edge_offset
    return out


def save_weights(weights: ModelWeights, path: str) -> None:
    tensors = _tensors_of(weights)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(
            struct.pack("<III I", VERSION, weights.l, weights.h, weights.k1_hint)
        )
        for name, shape in _field_order(weights.l, weights.h):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4").reshape(shape)
            fh.write(arr.tobytes())


def load_weights(path: str) -> ModelWeights:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise WeightFormatError("magic", f"expected {MAGIC!r}, got {blob[:4]!r}")
    if len(blob) < 20:
        raise WeightFormatError("header", "truncated header")
    version, l, h, k1_hint = struct.unpack("<IIII", blob[4:20])
    if version != VERSION:
        raise WeightFormatError("version", f"unsupported version {version}")
    if l < 1 or h < 1:
        raise WeightFormatError("header", f"bad dimensions l={l} h={h}")

    offset = 20
    fields: dict[str, np.ndarray] = {}
    for name, shape in _field_order(l, h):
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(blob):
            raise WeightFormatError(name, "file truncated")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        fields[name] = _f32(arr, shape)
        offset = end
    if offset != len(blob):
        raise WeightFormatError("trailer", f"{len(blob) - offset} extra bytes")

    layers = []
    for i in range(1, l + 1):
        if not np.array_equal(fields[f"layer{i}.w7"], fields[f"layer{i}.w6"]):
            raise WeightFormatError(
                f"layer{i}.w7", "endpoint projections must be tied (w7 == w6)"
            )
        if not np.array_equal(fields[f"layer{i}.b7"], fields[f"layer{i}.b6"]):
            raise WeightFormatError(
                f"layer{i}.b7", "endpoint biases must be tied (b7 == b6)"
            )
        layers.append(
            LayerWeights(
                w3=fields[f"layer{i}.w3"],
                b3=fields[f"layer{i}.b3"],
                w4=fields[f"layer{i}.w4"],
                b4=fields[f"layer{i}.b4"],
                w5=fields[f"layer{i}.w5"],
                b5=fields[f"layer{i}.b5"],
                w6=fields[f"layer{i}.w6"],
                b6=fields[f"layer{i}.b6"],
                ln_node_gain=fields[f"layer{i}.ln_node_gain"],
                ln_node_offset=fields[f"layer{i}.ln_node_offset"],
                ln_edge_gain=fields[f"layer{i}.ln_edge_gain"],
                ln_edge_offset=fields[f"layer{i}.ln_edge_offset"],
            )
        )
    return ModelWeights(
        l=l,
        h=h,
        k1_hint=k1_hint,
        w1=fields["w1"],
        b1=fields["b1"],
        w2=fields["w2"],
        b2=fields["b2"],
        layers=tuple(layers),
        m1=fields["m1"],
        mb1=fields["mb1"],
        m2=fields["m2"],
        mb2=fields["mb2"],
    )


def export_heatmap_csv(heatmap: Heatmap, path: str) -> None:
    """Write rows (i, j, heat) for neighbor pairs only; 1-based ids."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("i,j,heat\n")
        for i in range(heatmap.n):
            for r in range(1, heatmap.k1):
                fh.write(
                    f"{i + 1},{heatmap.neighbors[i, r] + 1},"
                    f"{float(heatmap.values[i, r]):.12g}\n"
                )


def load_heatmap_csv(path: str, n: int) -> list[list[tuple[int, float]]]:
    """Read (i, j, heat) rows back as per-node lists of (j, heat)."""
    rows: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "i,j,heat":
            raise WeightFormatError("heatmap csv", f"bad header {header!r}")
        for ln, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise WeightFormatError("heatmap csv", f"bad row at line {ln}")
            i, j, heat = int(parts[0]) - 1, int(parts[1]) - 1, float(parts[2])
            if not (0 <= i < n and 0 <= j < n):
                raise WeightFormatError("heatmap csv", f"node out of range, line {ln}")
            rows[i].append((j, heat))
    return rows


def heatmap_from_csv(path: str, n: int) -> Heatmap:
    """Rebuild a sparse heatmap container from its CSV serialization.

    Every node must list the same number of neighbors (the common
    neighborhood size is recovered from the file) and no node may list
    itself.
    """
    rows = load_heatmap_csv(path, n)
    k1 = len(rows[0]) + 1
    neighbors = np.empty((n, k1), dtype=np.int32)
    values = np.zeros((n, k1))
    for i, row in enumerate(rows):
        if len(row) != k1 - 1:
            raise WeightFormatError(
                "heatmap csv", f"node {i + 1} lists {len(row)} neighbors, "
                f"expected {k1 - 1}"
            )
        neighbors[i, 0] = i
        for r, (j, heat) in enumerate(row, start=1):
            if j == i:
                raise WeightFormatError(
                    "heatmap csv", f"node {i + 1} lists itself"
                )
            neighbors[i, r] = j
            values[i, r] = heat
    values.setflags(write=False)
    return Heatmap(k1=k1, neighbors=neighbors, values=values)
