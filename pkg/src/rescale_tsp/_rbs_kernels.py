"""Compiled inner loops for the reconstruction-based search.

Everything here operates on flat numpy arrays so the whole search state
can be carried across calls: the solver driver runs these kernels in
chunks and checks wall clocks between chunks, and results depend only
on the state arrays, never on how the work was chunked or scheduled.

Randomness is PCG32 on an explicit (state, increment) uint64 pair; the
pure-Python mirror lives in rng.Pcg32 so tests can replay decisions.

The edge-weight store Q is an open-addressed hash map over int64 keys
i*n + j with i < j (linear probing, power-of-two capacity, grown by
rehashing at 50% load). Insertion sites must rebind the key/value
arrays from the return value since growth reallocates them.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

U1 = np.uint64(1)
U18 = np.uint64(18)
U27 = np.uint64(27)
U30 = np.uint64(30)
U31 = np.uint64(31)
U32 = np.uint64(32)
U59 = np.uint64(59)
U32MASK = np.uint64(0xFFFFFFFF)
PCG_MULT = np.uint64(6364136223846793005)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)

EPS_GAIN = 1e-12
SWAP_LOG_COLS = 6


@njit(cache=True, nogil=True)
def pcg_seed(rng, seed, stream):
    rng[0] = np.uint64(0)
    rng[1] = (np.uint64(stream) << U1) | U1
    pcg_next_u32(rng)
    rng[0] = rng[0] + np.uint64(seed)
    pcg_next_u32(rng)


@njit(cache=True, nogil=True)
def pcg_next_u32(rng):
    # All arithmetic stays in uint64 with explicit 32-bit masking:
    # narrow scalar types get silently widened by the compiler.
    old = rng[0]
    rng[0] = old * PCG_MULT + rng[1]
    xs = (((old >> U18) ^ old) >> U27) & U32MASK
    rot = old >> U59
    return ((xs >> rot) | (xs << ((U32 - rot) & U31))) & U32MASK


@njit(cache=True, nogil=True)
def pcg_next_below(rng, n):
    return np.int64((np.uint64(pcg_next_u32(rng)) * np.uint64(n)) >> U32)


@njit(cache=True, nogil=True)
def pcg_next_double(rng):
    return np.float64(pcg_next_u32(rng)) / 4294967296.0


@njit(cache=True, nogil=True)
def _pair_key(i, j, n):
    if i < j:
        return np.int64(i) * np.int64(n) + np.int64(j)
    return np.int64(j) * np.int64(n) + np.int64(i)


@njit(cache=True, nogil=True)
def _slot_of(key, mask):
    x = np.uint64(key)
    x = (x ^ (x >> U30)) * MIX1
    x = (x ^ (x >> U27)) * MIX2
    x = x ^ (x >> U31)
    return np.int64(x & np.uint64(mask))


@njit(cache=True, nogil=True)
def q_get(qkey, qval, key):
    mask = qkey.shape[0] - 1
    idx = _slot_of(key, mask)
    while True:
        k = qkey[idx]
        if k == key:
            return qval[idx]
        if k == -1:
            return 0.0
        idx = (idx + 1) & mask


@njit(cache=True, nogil=True)
def _q_grow(qkey, qval):
    cap = qkey.shape[0] * 2
    nk = np.full(cap, -1, dtype=np.int64)
    nv = np.zeros(cap, dtype=np.float64)
    mask = cap - 1
    for i in range(qkey.shape[0]):
        k = qkey[i]
        if k == -1:
            continue
        idx = _slot_of(k, mask)
        while nk[idx] != -1:
            idx = (idx + 1) & mask
        nk[idx] = k
        nv[idx] = qval[i]
    return nk, nv


@njit(cache=True, nogil=True)
def q_add(qkey, qval, qcnt, key, inc):
    mask = qkey.shape[0] - 1
    idx = _slot_of(key, mask)
    while True:
        k = qkey[idx]
        if k == key:
            qval[idx] += inc
            return qkey, qval
        if k == -1:
            qkey[idx] = key
            qval[idx] = inc
            qcnt[0] += 1
            if qcnt[0] * 2 >= qkey.shape[0]:
                return _q_grow(qkey, qval)
            return qkey, qval
        idx = (idx + 1) & mask


@njit(cache=True, nogil=True)
def dist(coords, dmat, metric, i, j):
    if dmat.shape[0] > 0:
        return dmat[i, j]
    dx = coords[i, 0] - coords[j, 0]
    dy = coords[i, 1] - coords[j, 1]
    d = math.sqrt(dx * dx + dy * dy)
    if metric == 1:
        return math.floor(d + 0.5)
    return d


@njit(cache=True, nogil=True)
def tour_len_of(coords, dmat, metric, tour):
    n = tour.shape[0]
    total = 0.0
    for t in range(n):
        total += dist(coords, dmat, metric, tour[t], tour[(t + 1) % n])
    return total


@njit(cache=True, nogil=True)
def greedy_tour(coords, dmat, metric, init_cand, rng, tour, pos, visited):
    """Build a tour from a random start along candidate preference order.

    When every candidate of the current node is already traversed, fall
    back to the nearest untraversed node (lowest index on ties).
    """
    n = tour.shape[0]
    for i in range(n):
        visited[i] = False
    cur = pcg_next_below(rng, n)
    tour[0] = cur
    pos[cur] = 0
    visited[cur] = True
    for step in range(1, n):
        nxt = -1
        for r in range(init_cand.shape[1]):
            c = init_cand[cur, r]
            if not visited[c]:
                nxt = c
                break
        if nxt == -1:
            best_d = np.inf
            for j in range(n):
                if not visited[j]:
                    dj = dist(coords, dmat, metric, cur, j)
                    if dj < best_d:
                        best_d = dj
                        nxt = j
        tour[step] = nxt
        pos[nxt] = step
        visited[nxt] = True
        cur = nxt
    return tour_len_of(coords, dmat, metric, tour)


@njit(cache=True, nogil=True)
def _reverse_arc(tour, pos, i, j, n):
    """Reverse tour positions i..j inclusive, walking forward mod n."""
    seg = (j - i) % n + 1
    for t in range(seg // 2):
        p1 = (i + t) % n
        p2 = (j - t) % n
        a = tour[p1]
        b = tour[p2]
        tour[p1] = b
        tour[p2] = a
        pos[b] = p1
        pos[a] = p2


@njit(cache=True, nogil=True)
def two_opt(
    coords, dmat, metric, cand,
    tour, pos, tour_len,
    qkey, qval, qcnt,
    swap_log, swap_cnt,
):
    """Candidate-restricted first-improvement 2-opt to a local optimum.

    Scans tour positions in order; for the node a at a position, tries
    its candidates c in stored (heat) order. An improving swap replaces
    edges (a, succ a) and (c, succ c) with (a, c) and (succ a, succ c),
    reverses the shorter arc, and raises Q on both new edges by
    exp(-len_new / len_pre). After a swap the same position is
    rescanned. Sweeps repeat until one passes clean.

    Improving swaps are appended to swap_log (a, b, c, d, len_pre,
    len_new) while capacity lasts; swap_cnt[0] counts all of them.
    """
    n = tour.shape[0]
    k2 = cand.shape[1]
    while True:
        any_swap = False
        idx = 0
        while idx < n:
            a = tour[idx]
            b = tour[(idx + 1) % n]
            d_ab = dist(coords, dmat, metric, a, b)
            swapped = False
            for r in range(k2):
                c = cand[a, r]
                if c == b:
                    continue
                cp = pos[c]
                d_node = tour[(cp + 1) % n]
                if d_node == a:
                    continue
                gain = (
                    d_ab
                    + dist(coords, dmat, metric, c, d_node)
                    - dist(coords, dmat, metric, a, c)
                    - dist(coords, dmat, metric, b, d_node)
                )
                if gain > EPS_GAIN:
                    len_pre = tour_len
                    first = (idx + 1) % n
                    fwd = (cp - first) % n + 1
                    if fwd * 2 <= n:
                        _reverse_arc(tour, pos, first, cp, n)
                    else:
                        _reverse_arc(tour, pos, (cp + 1) % n, idx, n)
                    tour_len = len_pre - gain
                    inc = math.exp(-tour_len / len_pre)
                    qkey, qval = q_add(
                        qkey, qval, qcnt, _pair_key(a, c, n), inc
                    )
                    qkey, qval = q_add(
                        qkey, qval, qcnt, _pair_key(b, d_node, n), inc
                    )
                    if swap_cnt[0] < swap_log.shape[0]:
                        row = swap_cnt[0]
                        swap_log[row, 0] = a
                        swap_log[row, 1] = b
                        swap_log[row, 2] = c
                        swap_log[row, 3] = d_node
                        swap_log[row, 4] = len_pre
                        swap_log[row, 5] = tour_len
                    swap_cnt[0] += 1
                    any_swap = True
                    swapped = True
                    break
            if not swapped:
                idx += 1
        if not any_swap:
            break
    return tour_len, qkey, qval


@njit(cache=True, nogil=True)
def split_tour(
    coords, dmat, metric,
    tour, pos, tour_len,
    qkey, qval, rng,
    seq, pos_seq,
):
    """Open the tour at a uniformly random node into an acyclic path.

    Of the split node's two tour edges, the one with smaller Q is
    removed (ties remove the edge to the lower-indexed neighbor). The
    path starts at the split node and ends at the removed edge's other
    end. Returns the path length (tour length minus the removed edge).
    """
    n = tour.shape[0]
    s = pcg_next_below(rng, n)
    ps = pos[s]
    prev = tour[(ps - 1) % n]
    nxt = tour[(ps + 1) % n]
    q_prev = q_get(qkey, qval, _pair_key(s, prev, n))
    q_next = q_get(qkey, qval, _pair_key(s, nxt, n))
    if q_prev > q_next:
        removed = nxt
    elif q_next > q_prev:
        removed = prev
    elif prev < nxt:
        removed = prev
    else:
        removed = nxt
    if removed == prev:
        for t in range(n):
            v = tour[(ps + t) % n]
            seq[t] = v
            pos_seq[v] = t
    else:
        for t in range(n):
            v = tour[(ps - t) % n]
            seq[t] = v
            pos_seq[v] = t
    return tour_len - dist(coords, dmat, metric, s, removed)


@njit(cache=True, nogil=True)
def reconstruct_action(
    coords, dmat, metric, cand,
    qkey, qval,
    seq, pos_seq, path_len,
    tried, rng, eps,
):
    """One reconstruction step from the path's start node.

    Samples a target among the start's candidates, excluding its path
    neighbor and targets already tried this process, with probability
    proportional to Q + eps; reverses the path prefix before the
    target so the former neighbor of the target becomes the new start.

    Returns (ok, new_path_len); ok is False when no target is eligible.
    """
    n = seq.shape[0]
    s = seq[0]
    adjacent = seq[1]
    k2 = cand.shape[1]
    total = 0.0
    for r in range(k2):
        j = cand[s, r]
        if j == adjacent or tried[j]:
            continue
        total += q_get(qkey, qval, _pair_key(s, j, n)) + eps
    if total <= 0.0:
        return False, path_len
    u = pcg_next_double(rng) * total
    target = -1
    acc = 0.0
    for r in range(k2):
        j = cand[s, r]
        if j == adjacent or tried[j]:
            continue
        acc += q_get(qkey, qval, _pair_key(s, j, n)) + eps
        if u < acc:
            target = j
            break
    if target == -1:
        for r in range(k2 - 1, -1, -1):
            j = cand[s, r]
            if j == adjacent or tried[j]:
                continue
            target = j
            break
    p = pos_seq[target]
    prev_t = seq[p - 1]
    for t in range(p // 2):
        a = seq[t]
        b = seq[p - 1 - t]
        seq[t] = b
        seq[p - 1 - t] = a
        pos_seq[b] = t
        pos_seq[a] = p - 1 - t
    tried[target] = True
    path_len += dist(coords, dmat, metric, s, target) - dist(
        coords, dmat, metric, prev_t, target
    )
    return True, path_len


@njit(cache=True, nogil=True)
def reconstruct_process(
    coords, dmat, metric, cand,
    tour, pos, tour_len,
    qkey, qval, rng,
    seq, pos_seq, tried,
    m_lo, m_hi, eps,
):
    """Split, reconstruct until improvement/exhaustion/budget, close.

    The action budget M is sampled once, uniformly from [m_lo, m_hi)
    (a degenerate range collapses to m_lo). The closed tour replaces
    tour/pos in place even when longer; acceptance is the caller's job.

    Returns (closed_len, actions_taken, improved).
    """
    n = tour.shape[0]
    base_len = tour_len
    hi = m_hi if m_hi > m_lo else m_lo + 1
    m_budget = m_lo + pcg_next_below(rng, hi - m_lo)
    path_len = split_tour(
        coords, dmat, metric, tour, pos, tour_len, qkey, qval, rng,
        seq, pos_seq,
    )
    for i in range(n):
        tried[i] = False
    actions = 0
    improved = False
    while actions < m_budget:
        ok, path_len = reconstruct_action(
            coords, dmat, metric, cand, qkey, qval,
            seq, pos_seq, path_len, tried, rng, eps,
        )
        if not ok:
            break
        actions += 1
        closed = path_len + dist(coords, dmat, metric, seq[0], seq[n - 1])
        if closed < base_len - EPS_GAIN:
            improved = True
            break
    for t in range(n):
        v = seq[t]
        tour[t] = v
        pos[v] = t
    closed_len = path_len + dist(coords, dmat, metric, seq[0], seq[n - 1])
    return closed_len, actions, improved


@njit(cache=True, nogil=True)
def solve_init(
    coords, dmat, metric, init_cand, cand,
    tour, pos, best_tour,
    qkey, qval, qcnt,
    rng, visited, swap_log, swap_cnt,
):
    """Greedy construction plus the first 2-opt pass; seeds best."""
    tour_len = greedy_tour(
        coords, dmat, metric, init_cand, rng, tour, pos, visited
    )
    tour_len, qkey, qval = two_opt(
        coords, dmat, metric, cand, tour, pos, tour_len,
        qkey, qval, qcnt, swap_log, swap_cnt,
    )
    for t in range(tour.shape[0]):
        best_tour[t] = tour[t]
    return tour_len, qkey, qval


@njit(cache=True, nogil=True)
def solve_chunk(
    coords, dmat, metric, cand,
    tour, pos, best_tour, lens,
    qkey, qval, qcnt,
    rng, seq, pos_seq, tried,
    swap_log, swap_cnt,
    iters, accept_always, m_lo, m_hi, eps,
    imp_iter, imp_len, stats,
):
    """Run outer iterations {reconstruct; 2-opt; accept-or-restore}.

    lens[0] is the current tour length, lens[1] the best length; both
    are updated in place. stats rows: 0 iterations done so far (used to
    globally number improvements), 1 total reconstruction actions, 2
    improved processes, 3 accepted tours, 4 improvement-log count.

    Acceptance keeps strict improvements over best; otherwise the tour
    is restored from best (or kept, when accept_always is nonzero).
    """
    n = tour.shape[0]
    for _ in range(iters):
        closed_len, actions, improved = reconstruct_process(
            coords, dmat, metric, cand, tour, pos, lens[0],
            qkey, qval, rng, seq, pos_seq, tried, m_lo, m_hi, eps,
        )
        stats[1] += actions
        if improved:
            stats[2] += 1
        tour_len, qkey, qval = two_opt(
            coords, dmat, metric, cand, tour, pos, closed_len,
            qkey, qval, qcnt, swap_log, swap_cnt,
        )
        lens[0] = tour_len
        stats[0] += 1
        if tour_len < lens[1] - EPS_GAIN:
            lens[1] = tour_len
            for t in range(n):
                best_tour[t] = tour[t]
            stats[3] += 1
            row = stats[4]
            if row < imp_iter.shape[0]:
                imp_iter[row] = stats[0]
                imp_len[row] = tour_len
                stats[4] += 1
        elif accept_always == 0:
            for t in range(n):
                v = best_tour[t]
                tour[t] = v
                pos[v] = t
            lens[0] = lens[1]
    return qkey, qval
