"""Readers and writers for the solver toolkit's on-disk formats.

The trainer talks to the solver exclusively through files and its
command line, so this module implements the three formats it exchanges:

* the weight binary (magic ``RSGC``, version 1): a 20-byte header of
  little-endian uint32 fields (version, layer count, width, candidate
  hint) followed by every tensor as float32 row-major in a fixed order.
  The per-layer endpoint slots named w7/b7 are stored as copies of
  w6/b6; readers reject files where the copies diverge.
* the instance text format: a node count line, then one ``x y`` line
  per node with full-precision floats in the unit square.
* the labeled-dataset text format: instance blocks each followed by a
  single line holding the reference tour as a 1-based permutation.

There is also a parser for the heatmap CSV the solver emits
(``i,j,heat`` rows, 1-based ids, slot order preserved per node).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"RSGC"
VERSION = 1


class FileFormatError(ValueError):
    """A file does not follow the format it claims to be in."""


def weight_field_order(l: int, h: int):
    """Yield (name, shape) pairs in on-disk order."""
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


@dataclass(frozen=True)
class WeightFile:
    """Decoded weight binary: dimensions plus the real (untied) tensors."""

    l: int
    h: int
    k1_hint: int
    fields: dict[str, np.ndarray]


def write_weights(
    path: str, l: int, h: int, k1_hint: int, tensors: dict[str, np.ndarray]
) -> None:
    """Serialize tensors to the weight binary.

    ``tensors`` holds only the real parameters; the tied w7/b7 slots are
    emitted as copies of each layer's w6/b6.
    """
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", VERSION, l, h, k1_hint))
        for name, shape in weight_field_order(l, h):
            source = name
            if name.endswith(".w7"):
                source = name[:-3] + ".w6"
            elif name.endswith(".b7"):
                source = name[:-3] + ".b6"
            arr = np.ascontiguousarray(tensors[source], dtype="<f4").reshape(shape)
            fh.write(arr.tobytes())


def read_weights(path: str) -> WeightFile:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FileFormatError(f"bad magic {blob[:4]!r}")
    if len(blob) < 20:
        raise FileFormatError("truncated header")
    version, l, h, k1_hint = struct.unpack("<IIII", blob[4:20])
    if version != VERSION:
        raise FileFormatError(f"unsupported weight version {version}")
    if l < 1 or h < 1:
        raise FileFormatError(f"bad dimensions l={l} h={h}")
    offset = 20
    fields: dict[str, np.ndarray] = {}
    for name, shape in weight_field_order(l, h):
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(blob):
            raise FileFormatError(f"file truncated inside {name}")
        fields[name] = (
            np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            .reshape(shape)
            .copy()
        )
        offset = end
    if offset != len(blob):
        raise FileFormatError(f"{len(blob) - offset} extra bytes after tensors")
    for i in range(1, l + 1):
        if not np.array_equal(fields[f"layer{i}.w7"], fields[f"layer{i}.w6"]):
            raise FileFormatError(f"layer{i}.w7 is not a copy of w6")
        if not np.array_equal(fields[f"layer{i}.b7"], fields[f"layer{i}.b6"]):
            raise FileFormatError(f"layer{i}.b7 is not a copy of b6")
        del fields[f"layer{i}.w7"], fields[f"layer{i}.b7"]
    return WeightFile(l=l, h=h, k1_hint=k1_hint, fields=fields)


# ---------------------------------------------------------------------------
# Instance and labeled-dataset text

def format_points(coords: np.ndarray) -> str:
    coords = np.asarray(coords, dtype=np.float64)
    rows = [str(coords.shape[0])]
    for k in range(coords.shape[0]):
        rows.append(f"{float(coords[k, 0])!r} {float(coords[k, 1])!r}")
    return "\n".join(rows) + "\n"


def write_points(coords: np.ndarray, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_points(coords))


def format_labeled_case(coords: np.ndarray, perm: np.ndarray) -> str:
    perm_line = " ".join(str(int(v) + 1) for v in perm)
    return format_points(coords) + perm_line + "\n"


def write_labeled(cases, path: str) -> None:
    """Write (coords, perm) pairs as one concatenated labeled dataset."""
    with open(path, "w", encoding="utf-8") as fh:
        for coords, perm in cases:
            fh.write(format_labeled_case(coords, perm))


def parse_labeled(text: str) -> list[tuple[np.ndarray, np.ndarray]]:
    """Parse a labeled dataset into (coords, perm) pairs, 0-based perms."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    cases = []
    pos = 0
    while pos < len(lines):
        try:
            n = int(lines[pos])
        except ValueError:
            raise FileFormatError(f"bad node count {lines[pos]!r}") from None
        if n < 3:
            raise FileFormatError(f"node count must be at least 3, got {n}")
        if pos + n + 1 >= len(lines):
            raise FileFormatError("truncated labeled record")
        coords = np.empty((n, 2))
        for k in range(n):
            parts = lines[pos + 1 + k].split()
            if len(parts) != 2:
                raise FileFormatError(f"expected 'x y', got {lines[pos + 1 + k]!r}")
            coords[k] = (float(parts[0]), float(parts[1]))
        parts = lines[pos + 1 + n].split()
        if len(parts) != n:
            raise FileFormatError(
                f"expected {n} permutation entries, got {len(parts)}"
            )
        perm = np.array([int(p) - 1 for p in parts], dtype=np.int32)
        if perm.min() < 0 or perm.max() >= n or np.unique(perm).size != n:
            raise FileFormatError("tour line is not a permutation of 1..n")
        cases.append((coords, perm))
        pos += n + 2
    return cases


def load_labeled(path: str) -> list[tuple[np.ndarray, np.ndarray]]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_labeled(fh.read())


def read_heatmap_csv(path: str, n: int) -> dict[tuple[int, int], float]:
    """Read a solver heatmap CSV into a {(i, j): heat} map, 0-based ids."""
    heats: dict[tuple[int, int], float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "i,j,heat":
            raise FileFormatError(f"bad heatmap header {header!r}")
        for ln, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise FileFormatError(f"bad heatmap row at line {ln}")
            i, j = int(parts[0]) - 1, int(parts[1]) - 1
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise FileFormatError(f"bad node pair at line {ln}")
            heats[(i, j)] = float(parts[2])
    return heats
