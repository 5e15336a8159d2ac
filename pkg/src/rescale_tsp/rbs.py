"""Reconstruction-based search over heatmap-guided candidate sets.

The search keeps one current tour. Each outer iteration opens the tour
at a random node into an acyclic path, rebuilds it through a sequence
of probabilistic reconstruction actions guided by the adaptive edge
weights Q, closes it, polishes with candidate-restricted 2-opt (which
also reinforces Q on every improving swap), and keeps the result only
if it beats the best tour so far.

All inner loops are compiled (see _rbs_kernels); this module owns the
state containers, candidate construction, budget handling, and the
thread pool for solving batches. One instance is confined to one
worker; candidate arrays are shared read-only; every instance draws
from its own seeded generator, so results do not depend on the number
of threads.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _rbs_kernels as k
from .gcn import Heatmap
from .instances import Instance, Metric, Tour
from .rng import derive_seed
from .subgraph import SubgraphSet, build_knn

DENSE_DMAT_MAX_N = 1024
DEFAULT_EPSILON = 1e-6
DEFAULT_K2_CONTINUOUS = 5
DEFAULT_K2_TSPLIB = 10
TRACE_CHUNK = 1024


class NoEligibleTarget(RuntimeError):
    """Raised when a reconstruction action finds no target to sample."""


@dataclass(frozen=True)
class CandidateSets:
    """Per-node candidate lists, row i ordered by preference."""

    k2: int
    cand: np.ndarray
    mode: str

    def __post_init__(self):
        cand = np.ascontiguousarray(self.cand, dtype=np.int32)
        n = cand.shape[0]
        for i in range(n):
            row = cand[i]
            if i in row:
                raise ValueError(f"node {i} appears in its own candidates")
            if len(set(row.tolist())) != row.shape[0]:
                raise ValueError(f"duplicate candidates for node {i}")
        cand.setflags(write=False)
        object.__setattr__(self, "cand", cand)

    @property
    def n(self) -> int:
        return self.cand.shape[0]


class EdgeWeightStore:
    """Sparse symmetric nonnegative edge weights Q, default 0.

    Backed by the kernel hash map; the key/value arrays are rebound
    after kernel calls because insertion can grow them.
    """

    def __init__(self, n: int, capacity: int = 0):
        self.n = n
        cap = 64
        want = max(capacity, 8 * n)
        while cap < want:
            cap *= 2
        self.qkey = np.full(cap, -1, dtype=np.int64)
        self.qval = np.zeros(cap, dtype=np.float64)
        self.qcnt = np.zeros(1, dtype=np.int64)

    def get(self, i: int, j: int) -> float:
        if i == j:
            raise ValueError("no self edges")
        return float(k.q_get(self.qkey, self.qval, k._pair_key(i, j, self.n)))

    def add(self, i: int, j: int, inc: float) -> None:
        if i == j:
            raise ValueError("no self edges")
        if inc < 0:
            raise ValueError("weights never decrease")
        self.qkey, self.qval = k.q_add(
            self.qkey, self.qval, self.qcnt, k._pair_key(i, j, self.n), inc
        )

    def items(self) -> list[tuple[int, int, float]]:
        out = []
        for idx in range(self.qkey.shape[0]):
            key = int(self.qkey[idx])
            if key == -1:
                continue
            out.append((key // self.n, key % self.n, float(self.qval[idx])))
        out.sort()
        return out

    def __len__(self) -> int:
        return int(self.qcnt[0])


@dataclass
class AcyclicPath:
    """Open tour: seq[0] is the current start node, pos its inverse."""

    seq: np.ndarray
    pos: np.ndarray
    length: float

    @property
    def start(self) -> int:
        return int(self.seq[0])

    @property
    def n(self) -> int:
        return self.seq.shape[0]

    def closed_length(self, state: "SearchState") -> float:
        return self.length + float(
            k.dist(
                state.coords, state.dmat, state.metric_code,
                int(self.seq[0]), int(self.seq[-1]),
            )
        )


@dataclass(frozen=True)
class Budget:
    """Either wall-clock seconds or an exact outer-iteration count."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("wall", "iters"):
            raise ValueError(f"unknown budget kind {self.kind!r}")
        if self.value <= 0:
            raise ValueError("budget must be positive")
        if self.kind == "iters" and int(self.value) != self.value:
            raise ValueError("iteration budget must be an integer")


@dataclass(frozen=True)
class SolveConfig:
    budget: Budget | None = None
    k1: int | None = None
    k2: int | None = None
    seed: int = 0
    epsilon: float = DEFAULT_EPSILON
    m_range: tuple[int, int] | None = None
    accept: str = "improving"
    init_candidates: str = "k2"
    trace: bool = False
    swap_log_cap: int = 0

    def __post_init__(self):
        if self.accept not in ("improving", "always"):
            raise ValueError(f"unknown accept policy {self.accept!r}")
        if self.init_candidates not in ("k2", "all"):
            raise ValueError(
                f"unknown init-candidates mode {self.init_candidates!r}"
            )
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class SearchState:
    """Everything one solver run mutates, confined to one worker."""

    instance: Instance
    coords: np.ndarray
    dmat: np.ndarray
    metric_code: int
    cand: CandidateSets
    init_cand: np.ndarray
    candidate_mode: str
    q: EdgeWeightStore
    config: SolveConfig
    m_lo: int
    m_hi: int
    rng: np.ndarray
    tour: np.ndarray
    pos: np.ndarray
    best_tour: np.ndarray
    lens: np.ndarray
    seq: np.ndarray
    pos_seq: np.ndarray
    tried: np.ndarray
    visited: np.ndarray
    swap_log: np.ndarray
    swap_cnt: np.ndarray
    stats: np.ndarray

    @property
    def n(self) -> int:
        return self.instance.n

    def current_tour(self) -> Tour:
        return Tour(self.tour.copy())

    def best(self) -> Tour:
        return Tour(self.best_tour.copy())

    def distance(self, i: int, j: int) -> float:
        return float(k.dist(self.coords, self.dmat, self.metric_code, i, j))


def dense_distances(instance: Instance) -> np.ndarray:
    """Full distance matrix with the instance's metric applied."""
    pts = instance.metric_coords()
    diff = pts[:, None, :] - pts[None, :, :]
    d = np.sqrt(diff[:, :, 0] ** 2 + diff[:, :, 1] ** 2)
    if instance.metric is Metric.TSPLIB_EUC2D_ROUNDED:
        d = np.floor(d + 0.5)
    return np.ascontiguousarray(d)


def init_candidates(
    source: Heatmap | SubgraphSet, k2: int
) -> CandidateSets:
    """Build per-node candidate lists of size k2.

    A heatmap source ranks each node's neighbors by descending heat
    (ties fall back to the neighbor slot order, which is ascending
    distance then index); a subgraph source uses nearest neighbors.
    """
    if isinstance(source, Heatmap):
        neighbors, k1, n = source.neighbors, source.k1, source.n
        mode = "heatmap"
    else:
        neighbors, k1, n = source.neighbors, source.k1, source.neighbors.shape[0]
        mode = "knn"
    if k2 >= n:
        raise ValueError(f"k2={k2} must be below the node count {n}")
    if k2 < 1:
        raise ValueError("k2 must be at least 1")
    if k2 > k1 - 1:
        raise ValueError(
            f"k2={k2} exceeds the {k1 - 1} neighbors the subgraph holds"
        )
    if mode == "heatmap":
        order = np.argsort(-source.values[:, 1:], axis=1, kind="stable")
        ranked = np.take_along_axis(neighbors[:, 1:], order, axis=1)
        cand = ranked[:, :k2]
    else:
        cand = neighbors[:, 1 : k2 + 1]
    return CandidateSets(k2=k2, cand=np.ascontiguousarray(cand), mode=mode)


def make_state(
    instance: Instance,
    heatmap: Heatmap | None = None,
    config: SolveConfig = SolveConfig(),
    subgraph: SubgraphSet | None = None,
) -> SearchState:
    """Allocate and seed a complete search state for one instance."""
    n = instance.n
    if heatmap is not None:
        source: Heatmap | SubgraphSet = heatmap
        k1 = heatmap.k1
        mode = "heatmap"
    else:
        if subgraph is None:
            subgraph = build_knn(instance, k1=config.k1)
        source = subgraph
        k1 = subgraph.k1
        mode = "knn"
    if config.k2 is not None:
        k2 = config.k2
    elif instance.metric is Metric.TSPLIB_EUC2D_ROUNDED:
        k2 = min(DEFAULT_K2_TSPLIB, k1 - 1)
    else:
        k2 = min(DEFAULT_K2_CONTINUOUS, k1 - 1)
    cand = init_candidates(source, k2)
    if config.init_candidates == "all":
        init_cand = init_candidates(source, k1 - 1).cand
    else:
        init_cand = cand.cand

    if config.m_range is not None:
        m_lo, m_hi = config.m_range
    else:
        m_lo, m_hi = 10, min(40, n)
    if m_lo < 1:
        raise ValueError("reconstruction budget must be at least 1")

    coords = np.ascontiguousarray(instance.metric_coords(), dtype=np.float64)
    metric_code = 1 if instance.metric is Metric.TSPLIB_EUC2D_ROUNDED else 0
    if n <= DENSE_DMAT_MAX_N:
        dmat = dense_distances(instance)
    else:
        dmat = np.zeros((0, 0), dtype=np.float64)

    rng = np.zeros(2, dtype=np.uint64)
    k.pcg_seed(rng, np.uint64(config.seed & ((1 << 64) - 1)), np.uint64(0))

    return SearchState(
        instance=instance,
        coords=coords,
        dmat=dmat,
        metric_code=metric_code,
        cand=cand,
        init_cand=np.ascontiguousarray(init_cand, dtype=np.int32),
        candidate_mode=mode,
        q=EdgeWeightStore(n),
        config=config,
        m_lo=int(m_lo),
        m_hi=int(m_hi),
        rng=rng,
        tour=np.zeros(n, dtype=np.int32),
        pos=np.zeros(n, dtype=np.int32),
        best_tour=np.zeros(n, dtype=np.int32),
        lens=np.zeros(2, dtype=np.float64),
        seq=np.zeros(n, dtype=np.int32),
        pos_seq=np.zeros(n, dtype=np.int32),
        tried=np.zeros(n, dtype=np.bool_),
        visited=np.zeros(n, dtype=np.bool_),
        swap_log=np.zeros((config.swap_log_cap, k.SWAP_LOG_COLS)),
        swap_cnt=np.zeros(1, dtype=np.int64),
        stats=np.zeros(8, dtype=np.int64),
    )


def greedy_init(state: SearchState) -> Tour:
    """Random-start greedy construction along candidate preference."""
    length = k.greedy_tour(
        state.coords, state.dmat, state.metric_code, state.init_cand,
        state.rng, state.tour, state.pos, state.visited,
    )
    state.lens[0] = length
    state.lens[1] = length
    state.best_tour[:] = state.tour
    return state.current_tour()


def split(state: SearchState) -> AcyclicPath:
    """Open the current tour at a random node into a path.

    Starts a fresh reconstruction round: the tried-target set resets.
    """
    state.tried[:] = False
    path_len = k.split_tour(
        state.coords, state.dmat, state.metric_code,
        state.tour, state.pos, state.lens[0],
        state.q.qkey, state.q.qval, state.rng,
        state.seq, state.pos_seq,
    )
    return AcyclicPath(seq=state.seq, pos=state.pos_seq, length=float(path_len))


def reconstruction_action(
    path: AcyclicPath, state: SearchState
) -> tuple[AcyclicPath, bool]:
    """Sample a target and rebuild the path prefix before it.

    Returns the mutated path and whether closing it now would beat the
    tour the path was split from. Raises NoEligibleTarget when every
    candidate of the start is excluded.
    """
    ok, new_len = k.reconstruct_action(
        state.coords, state.dmat, state.metric_code, state.cand.cand,
        state.q.qkey, state.q.qval,
        path.seq, path.pos, path.length,
        state.tried, state.rng, state.config.epsilon,
    )
    if not ok:
        raise NoEligibleTarget(f"start node {path.start} has no target left")
    path.length = float(new_len)
    improved = path.closed_length(state) < state.lens[0] - k.EPS_GAIN
    return path, improved


def reconstruction_process(state: SearchState) -> Tour:
    """Split, reconstruct until improvement/exhaustion/budget, close.

    The returned tour replaces the current tour even when it is
    longer; acceptance against best is the caller's decision.
    """
    closed_len, actions, improved = k.reconstruct_process(
        state.coords, state.dmat, state.metric_code, state.cand.cand,
        state.tour, state.pos, state.lens[0],
        state.q.qkey, state.q.qval, state.rng,
        state.seq, state.pos_seq, state.tried,
        state.m_lo, state.m_hi, state.config.epsilon,
    )
    state.lens[0] = closed_len
    state.stats[1] += actions
    if improved:
        state.stats[2] += 1
    return state.current_tour()


def two_opt_enhance(tour: Tour, state: SearchState) -> Tour:
    """Candidate-restricted 2-opt; reinforces Q on improving swaps."""
    perm = np.ascontiguousarray(tour.perm, dtype=np.int32)
    if not np.array_equal(perm, state.tour):
        state.tour[:] = perm
        state.pos[perm] = np.arange(state.n, dtype=np.int32)
        state.lens[0] = k.tour_len_of(
            state.coords, state.dmat, state.metric_code, state.tour
        )
    new_len, state.q.qkey, state.q.qval = k.two_opt(
        state.coords, state.dmat, state.metric_code, state.cand.cand,
        state.tour, state.pos, state.lens[0],
        state.q.qkey, state.q.qval, state.q.qcnt,
        state.swap_log, state.swap_cnt,
    )
    state.lens[0] = float(new_len)
    return state.current_tour()


@dataclass(frozen=True)
class SolveResult:
    tour: Tour
    length: float
    stats: dict
    trace: list = field(default_factory=list)


def _run_chunk(state: SearchState, iters: int):
    imp_iter = np.zeros(iters, dtype=np.int64)
    imp_len = np.zeros(iters, dtype=np.float64)
    rows_before = int(state.stats[4])
    state.q.qkey, state.q.qval = k.solve_chunk(
        state.coords, state.dmat, state.metric_code, state.cand.cand,
        state.tour, state.pos, state.best_tour, state.lens,
        state.q.qkey, state.q.qval, state.q.qcnt,
        state.rng, state.seq, state.pos_seq, state.tried,
        state.swap_log, state.swap_cnt,
        iters, 1 if state.config.accept == "always" else 0,
        state.m_lo, state.m_hi, state.config.epsilon,
        imp_iter, imp_len, state.stats,
    )
    rows = int(state.stats[4]) - rows_before
    state.stats[4] = 0
    return imp_iter[:rows], imp_len[:rows]


def solve(
    instance: Instance,
    heatmap: Heatmap | None = None,
    config: SolveConfig = SolveConfig(),
    subgraph: SubgraphSet | None = None,
) -> SolveResult:
    """Full search on one instance under the configured budget.

    Default budget is wall-clock 0.05s per node. Iteration budgets run
    an exact outer-iteration count and are bit-deterministic for a
    fixed seed regardless of chunking or thread count.
    """
    budget = config.budget
    if budget is None:
        budget = Budget("wall", 0.05 * instance.n)
    state = make_state(instance, heatmap, config, subgraph)
    t0 = time.perf_counter()
    trace: list[tuple[float, float]] = []

    init_len, state.q.qkey, state.q.qval = k.solve_init(
        state.coords, state.dmat, state.metric_code,
        state.init_cand, state.cand.cand,
        state.tour, state.pos, state.best_tour,
        state.q.qkey, state.q.qval, state.q.qcnt,
        state.rng, state.visited, state.swap_log, state.swap_cnt,
    )
    state.lens[0] = init_len
    state.lens[1] = init_len
    if config.trace:
        trace.append(((time.perf_counter() - t0) * 1000.0, float(init_len)))

    if budget.kind == "iters":
        remaining = int(budget.value)
        while remaining > 0:
            chunk = min(remaining, TRACE_CHUNK)
            _, imp_len = _run_chunk(state, chunk)
            if config.trace:
                now = (time.perf_counter() - t0) * 1000.0
                trace.extend((now, float(v)) for v in imp_len)
            remaining -= chunk
    else:
        deadline = t0 + budget.value
        chunk = 16
        while True:
            t_before = time.perf_counter()
            if t_before >= deadline:
                break
            _, imp_len = _run_chunk(state, chunk)
            t_after = time.perf_counter()
            if config.trace:
                now = (t_after - t0) * 1000.0
                trace.extend((now, float(v)) for v in imp_len)
            spent = t_after - t_before
            left = deadline - t_after
            if spent > 0 and left > 0:
                want = int(chunk * min(4.0, max(0.25, (left / spent) * 0.5)))
                chunk = max(1, min(want, 4096))

    wall_ms = (time.perf_counter() - t0) * 1000.0
    best = state.best()
    n = instance.n
    stats = {
        "id": instance.id,
        "n": n,
        "length": float(state.lens[1]),
        "iterations": int(state.stats[0]),
        "actions": int(state.stats[1]),
        "improved_processes": int(state.stats[2]),
        "accepted": int(state.stats[3]),
        "improving_swaps": int(state.swap_cnt[0]),
        "q_entries": len(state.q),
        "q_density": len(state.q) / (n * (n - 1) / 2),
        "wall_ms": wall_ms,
        "seed": int(config.seed),
        "candidate_mode": state.candidate_mode,
    }
    return SolveResult(
        tour=best, length=float(state.lens[1]), stats=stats, trace=trace
    )


def solve_many(
    instances: list[Instance],
    heatmaps: list[Heatmap | None] | None = None,
    config: SolveConfig = SolveConfig(),
    threads: int = 1,
    budgets: list[Budget] | None = None,
) -> list[SolveResult]:
    """Solve a batch, one instance per worker thread.

    Every instance derives its own seed from (config.seed, id), so
    results are identical for any thread count.  budgets, when given,
    overrides config.budget instance by instance (size-scaled wall
    budgets need this).
    """
    if threads < 1:
        raise ValueError("threads must be at least 1")
    if heatmaps is None:
        heatmaps = [None] * len(instances)
    if len(heatmaps) != len(instances):
        raise ValueError("one heatmap (or None) per instance required")
    if budgets is None:
        budgets = [config.budget] * len(instances)
    if len(budgets) != len(instances):
        raise ValueError("one budget per instance required")

    def one(pair):
        inst, hm, budget = pair
        cfg = SolveConfig(
            budget=budget,
            k1=config.k1,
            k2=config.k2,
            seed=derive_seed(config.seed, inst.id),
            epsilon=config.epsilon,
            m_range=config.m_range,
            accept=config.accept,
            init_candidates=config.init_candidates,
            trace=config.trace,
            swap_log_cap=config.swap_log_cap,
        )
        return solve(inst, hm, cfg)

    jobs = list(zip(instances, heatmaps, budgets))
    if threads == 1:
        return [one(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, jobs))
