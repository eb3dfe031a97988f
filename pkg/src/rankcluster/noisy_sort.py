"""Ordering primitives over edges driven only by comparison queries.

prob_sort targets bounded maximum dislocation under persistent probabilistic
noise; adv_sort targets alpha-sortedness under a band-limited (adversarial)
comparator. Both are pure functions of their seeds and inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .metric_core import MetricSpace, canonical_edges
from .oracle import OracleSession


def _edge_keys(edges: np.ndarray) -> np.ndarray:
    return edges[:, 0].astype(np.int64) * np.int64(1 << 32) + edges[:, 1]


@dataclass
class OrderedEdgeSequence:
    """A permutation of an edge set with a claimed ordering quality.

    quality is ("dislocation", D) or ("alpha", a); it records the claim made
    by the producing algorithm and is only verified by the ground-truth
    diagnostics below.
    """

    edges: np.ndarray  # (m, 2) canonical endpoints, in sequence order
    quality: tuple
    _rank: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)

    def __len__(self) -> int:
        return self.edges.shape[0]

    def edge_at(self, i: int) -> tuple[int, int]:
        u, v = self.edges[i]
        return int(u), int(v)

    def rank_of(self, edge) -> int:
        """0-based position of a canonical edge in the sequence."""
        if self._rank is None:
            keys = _edge_keys(self.edges)
            self._rank = {int(k): i for i, k in enumerate(keys)}
        u, v = edge
        if u > v:
            u, v = v, u
        key = int(u) * (1 << 32) + int(v)
        return self._rank[key]

    def ranks_of(self, us, vs) -> np.ndarray:
        lo, hi = canonical_edges(us, vs)
        keys = lo * np.int64(1 << 32) + hi
        own = _edge_keys(self.edges)
        sorter = np.argsort(own, kind="stable")
        pos = np.searchsorted(own, keys, sorter=sorter)
        if np.any(pos >= len(own)) or np.any(own[sorter[np.minimum(pos, len(own) - 1)]] != keys):
            raise KeyError("edge not present in sequence")
        return sorter[pos]

    def take(self, positions: np.ndarray) -> "OrderedEdgeSequence":
        return OrderedEdgeSequence(self.edges[positions], self.quality)


def induced_order(pi: OrderedEdgeSequence, us, vs) -> OrderedEdgeSequence:
    """Restriction of pi to a subset of its edges; inherits the quality tag."""
    lo, hi = canonical_edges(us, vs)
    want = np.unique(lo * np.int64(1 << 32) + hi)
    own = _edge_keys(pi.edges)
    keep = np.isin(own, want)
    if keep.sum() != len(want):
        raise KeyError("subset contains edges missing from the sequence")
    return OrderedEdgeSequence(pi.edges[keep], pi.quality)


# -- comparators ----------------------------------------------------------------


class OracleComparator:
    """Raw quadruplet-oracle comparator; claims the session's adversarial mu."""

    def __init__(self, session: OracleSession):
        self.session = session
        self.mu = session.noise.mu if session.noise.kind == "adversarial" else 0.0

    def compare_batch(self, au, av, bu, bv) -> np.ndarray:
        return self.session.quad_query_batch(au, av, bu, bv)


class ExactComparator:
    """Ground-truth comparator with the tie-broken strict order (test support)."""

    mu = 0.0

    def __init__(self, space: MetricSpace):
        self.space = space

    def compare_batch(self, au, av, bu, bv) -> np.ndarray:
        alo, ahi = canonical_edges(au, av)
        blo, bhi = canonical_edges(bu, bv)
        d1 = self.space.pair_distances(alo, ahi)
        d2 = self.space.pair_distances(blo, bhi)
        eq = (alo == blo) & (ahi == bhi)
        lt = (d1 < d2) | ((d1 == d2) & ((alo < blo) | ((alo == blo) & (ahi < bhi))))
        return lt | eq


# -- adv_sort --------------------------------------------------------------------


def _order_small_blocks(edges: np.ndarray, order: np.ndarray,
                        blocks: list[tuple[int, int]], comparator) -> None:
    """Round-robin pairwise majority inside each small block, in place."""
    by_size: dict[int, list[int]] = {}
    for lo, hi in blocks:
        by_size.setdefault(hi - lo, []).append(lo)
    for size, los in by_size.items():
        if size < 2:
            continue
        los_arr = np.asarray(los, dtype=np.int64)
        idx = order[los_arr[:, None] + np.arange(size)[None, :]]  # (B, size)
        ii, jj = np.triu_indices(size, k=1)
        a = idx[:, ii].ravel()
        b = idx[:, jj].ravel()
        le = comparator.compare_batch(edges[a, 0], edges[a, 1],
                                      edges[b, 0], edges[b, 1])
        le = le.reshape(len(los_arr), len(ii))
        bigger = np.zeros((len(los_arr), size), dtype=np.int64)
        for t, (i, j) in enumerate(zip(ii, jj)):
            bigger[:, j] += le[:, t]          # edge_i <= edge_j
            bigger[:, i] += ~le[:, t]
        perm = np.lexsort((np.broadcast_to(np.arange(size),
                                           bigger.shape), bigger), axis=1)
        reordered = np.take_along_axis(idx, perm, axis=1)
        for row, lo in enumerate(los_arr):
            order[lo:lo + size] = reordered[row]


def adv_sort(edges_u, edges_v, comparator, seed: int,
             floor: int = 8) -> OrderedEdgeSequence:
    """Randomized quicksort with a band-limited comparator.

    Level-synchronous so that each recursion level issues one comparator
    batch; subproblems of size <= floor are ordered by round-robin pairwise
    majority. Output claims alpha = (1+mu)^2 sortedness.
    """
    lo, hi = canonical_edges(np.asarray(edges_u), np.asarray(edges_v))
    edges = np.column_stack([lo, hi])
    m = len(edges)
    alpha = (1.0 + comparator.mu) ** 2
    if m <= 1:
        return OrderedEdgeSequence(edges, ("alpha", alpha))
    rng = np.random.default_rng(seed)
    order = np.arange(m)
    segments = [(0, m)]
    while segments:
        small = [s for s in segments if s[1] - s[0] <= floor]
        big = [s for s in segments if s[1] - s[0] > floor]
        if small:
            _order_small_blocks(edges, order, small, comparator)
        if not big:
            break
        pivots = []
        qa, qb = [], []
        for lo_i, hi_i in big:
            pv = int(rng.integers(lo_i, hi_i))
            seg = np.concatenate([order[lo_i:pv], order[pv + 1:hi_i]])
            pivots.append((int(order[pv]), seg))
            qa.append(seg)
            qb.append(np.full(len(seg), order[pv]))
        qa_all = np.concatenate(qa)
        qb_all = np.concatenate(qb)
        le = comparator.compare_batch(edges[qa_all, 0], edges[qa_all, 1],
                                      edges[qb_all, 0], edges[qb_all, 1])
        nxt = []
        off = 0
        for (lo_i, hi_i), (pivot_idx, seg) in zip(big, pivots):
            seg_le = le[off:off + len(seg)]
            off += len(seg)
            left = seg[seg_le]
            right = seg[~seg_le]
            order[lo_i:lo_i + len(left)] = left
            order[lo_i + len(left)] = pivot_idx
            order[lo_i + len(left) + 1:hi_i] = right
            if len(left) > 1:
                nxt.append((lo_i, lo_i + len(left)))
            if len(right) > 1:
                nxt.append((lo_i + len(left) + 1, hi_i))
        segments = nxt
    return OrderedEdgeSequence(edges[order], ("alpha", alpha))


# -- prob_sort --------------------------------------------------------------------


def _borda_order(session: OracleSession, edges: np.ndarray) -> np.ndarray:
    """Initial order by global score: count of peers answered 'not above me'."""
    m = len(edges)
    score = np.zeros(m, dtype=np.int64)
    chunk = max(1, int(4_000_000 // max(m, 1)))
    all_u = edges[:, 0]
    all_v = edges[:, 1]
    for start in range(0, m, chunk):
        rows = np.arange(start, min(start + chunk, m))
        ru = np.repeat(all_u[rows], m)
        rv = np.repeat(all_v[rows], m)
        cu = np.tile(all_u, len(rows))
        cv = np.tile(all_v, len(rows))
        le = session.quad_query_batch(cu, cv, ru, rv)  # peer <= row?
        score[rows] = le.reshape(len(rows), m).sum(axis=1)
    return np.lexsort((edges[:, 1], edges[:, 0], score))


def _window_repair(session: OracleSession, edges: np.ndarray,
                   order: np.ndarray, w: int) -> np.ndarray:
    """One repair pass: reposition each element by its smaller-count within a
    window of w rank-neighbors around its current position."""
    m = len(order)
    w = min(w, m)
    idx = np.arange(m)
    starts = np.clip(idx - w // 2, 0, m - w)
    count = np.zeros(m, dtype=np.int64)
    chunk = max(1, int(4_000_000 // max(w, 1)))
    offs = np.arange(w)
    for s in range(0, m, chunk):
        rows = np.arange(s, min(s + chunk, m))
        cols = starts[rows][:, None] + offs[None, :]
        peer = order[cols]
        mine = order[rows]
        le = session.quad_query_batch(
            edges[peer, 0].ravel(), edges[peer, 1].ravel(),
            np.repeat(edges[mine, 0], w), np.repeat(edges[mine, 1], w))
        # subtract the self comparison (always YES for equal edges)
        count[rows] = le.reshape(len(rows), w).sum(axis=1) - 1
    target = starts + count
    perm = np.lexsort((idx, target))
    return order[perm]


def prob_sort(session: OracleSession, edges_u, edges_v, seed: int,
              c_w: int = 8, min_window: int = 8,
              borda_cap: int = 4096,
              claimed_c_d: int = 6) -> OrderedEdgeSequence:
    """Dislocation-bounded ordering under persistent probabilistic noise.

    A global scoring pass (all pairs, for inputs up to borda_cap) or a raw
    noisy quicksort seeds the order; geometrically shrinking window-repair
    passes then pull every element to within a few positions of its rank.
    The output claims maximum dislocation claimed_c_d * ceil(log2 n).
    """
    lo, hi = canonical_edges(np.asarray(edges_u), np.asarray(edges_v))
    edges = np.column_stack([lo, hi])
    m = len(edges)
    ln = max(1, math.ceil(math.log2(max(session.n, 2))))
    quality = ("dislocation", claimed_c_d * ln)
    if m <= 1:
        return OrderedEdgeSequence(edges, quality)
    if m <= borda_cap:
        order = _borda_order(session, edges)
    else:
        start = adv_sort(edges[:, 0], edges[:, 1],
                         OracleComparator(session), seed)
        own = _edge_keys(edges)
        sorter = np.argsort(own, kind="stable")
        pos = np.searchsorted(own, _edge_keys(start.edges), sorter=sorter)
        order = sorter[pos]
    phi = session.noise.phi if session.noise.kind == "probabilistic" else 0.0
    if phi <= 0.0:
        # noiseless scoring is already exact; a single tidy pass suffices
        w0 = min_window
    else:
        # the first window must cover the score-based start's worst
        # dislocation, about sqrt(m*phi*(1-phi))/(1-2phi) with a max-tail
        spread = math.sqrt(m * phi * (1.0 - phi)) / (1.0 - 2.0 * phi)
        w0 = max(c_w * ln, int(math.ceil(8.0 * spread)))
        w0 = min(m, max(min_window, w0), 4 * borda_cap)
    w = w0
    while True:
        order = _window_repair(session, edges, order, max(w, 2))
        if w <= min_window:
            break
        w = max(min_window, w // 2)
    return OrderedEdgeSequence(edges[order], quality)


# -- ground-truth diagnostics (test support) ---------------------------------------


def measure_dislocation(space: MetricSpace, pi: OrderedEdgeSequence) -> int:
    """Max |position - true rank| against the tie-broken true order."""
    m = len(pi)
    if m <= 1:
        return 0
    true_sort = space.sort_edges(pi.edges[:, 0], pi.edges[:, 1])
    true_rank = np.empty(m, dtype=np.int64)
    true_rank[true_sort] = np.arange(m)
    return int(np.max(np.abs(true_rank - np.arange(m))))


def measure_alpha(space: MetricSpace, pi: OrderedEdgeSequence) -> float:
    """Smallest alpha with d(pi[i]) <= alpha * d(pi[j]) for all i < j."""
    m = len(pi)
    if m <= 1:
        return 1.0
    d = space.pair_distances(pi.edges[:, 0], pi.edges[:, 1])
    suffix_min = np.minimum.accumulate(d[::-1])[::-1]
    head = d[:-1]
    tail = suffix_min[1:]
    viol = head > tail
    if not viol.any():
        return 1.0
    if np.any(tail[viol] == 0.0):
        return math.inf
    return float(max(1.0, np.max(head[viol] / tail[viol])))
