"""Shared per-round machinery: sampling, kernel/guard windows, proximity
scores, filtering, and the emulated adversarial comparator.

All rank windows are 0-based internally: kernel(s) holds the first m_win
positions of the per-s induced order, guard(s) the positions
[m_win + 2D, 2*m_win + 2D).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .noisy_sort import OrderedEdgeSequence, prob_sort
from .oracle import OracleSession


@dataclass(frozen=True)
class AlgoConstants:
    """Tunable multipliers for the sample/window formulas.

    The defaults are desk-scale engineering values; the window formulas are
    m1 = c_s1*k*ceil(log2 n)^2, m2 = c_s2*k*ceil(log2 n)^3 (floored so the
    rank windows fit), D = c_d*ceil(log2 n), m_win = 2*max(c_win*ceil(log2 n), D).
    """

    c_s1: float = 0.010
    c_s2: float = 0.010
    c_win: float = 0.50
    c_d: float = 0.35
    c_r: float = 2.0
    c_imp: float = 0.05
    safe_fraction: float = 0.5
    filter_threshold_fraction: float = 0.5
    c_term: float = 0.01
    fan_out: int = 16
    c_f: float = 1.0
    probsort_c_w: int = 8
    borda_cap: int = 8192

    def with_overrides(self, **kw) -> "AlgoConstants":
        return replace(self, **kw)

    def derived(self, n: int, k: int) -> "RoundParams":
        ln = max(1, math.ceil(math.log2(max(n, 2))))
        m1 = max(2, math.ceil(self.c_s1 * k * ln ** 2))
        d = max(1, math.ceil(self.c_d * ln))
        m_win = 2 * max(math.ceil(self.c_win * ln), d)
        min_m2 = 2 * m_win + 2 * d
        m2 = max(math.ceil(self.c_s2 * k * ln ** 3), min_m2)
        return RoundParams(
            ln=ln, m1=m1, m2=m2, d=d, m_win=m_win, min_m2=min_m2,
            filter_threshold=math.floor(
                m_win * self.filter_threshold_fraction),
            round_cap=max(1, math.ceil(self.c_r * ln)),
            term_threshold=math.ceil(self.c_term * k * ln ** 3),
        )


@dataclass(frozen=True)
class RoundParams:
    ln: int
    m1: int
    m2: int
    d: int
    m_win: int
    min_m2: int
    filter_threshold: int
    round_cap: int
    term_threshold: int


class TerminalRound(Exception):
    """Raised when the sampled sets cannot support the rank windows."""


def draw_samples(rng: np.random.Generator, active: np.ndarray, k: int,
                 constants: AlgoConstants, n_ambient: int
                 ) -> tuple[np.ndarray, np.ndarray, bool]:
    """Uniform with-replacement samples, deduplicated, S2 disjoint from S1.

    Targets are clamped to |active|/4 each; the round is flagged terminal when
    the clamped second sample can no longer hold the kernel/guard windows or
    falls below half its nominal size.
    """
    p = constants.derived(n_ambient, k)
    cap = len(active) // 4
    m1_t = min(p.m1, cap)
    m2_t = min(p.m2, cap)
    if m1_t < 1 or m2_t < p.min_m2:
        return np.empty(0, np.int64), np.empty(0, np.int64), True
    s1 = np.unique(rng.choice(active, size=m1_t, replace=True))
    s2 = np.unique(rng.choice(active, size=m2_t, replace=True))
    s2 = np.setdiff1d(s2, s1, assume_unique=True)
    terminal = len(s2) < max(p.min_m2, math.ceil(0.5 * p.m2)) or len(s1) < 1
    return s1, s2, terminal


@dataclass
class RoundState:
    """Frozen artifacts of one round's sampling and ordering."""

    index: int
    session: OracleSession
    params: RoundParams
    active: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    pi_x: OrderedEdgeSequence
    kernel: dict[int, np.ndarray]
    guard: dict[int, np.ndarray]
    kernel_ranks: dict[int, np.ndarray]   # global pi_x ranks, ascending
    kernel_max_rank: dict[int, int]
    _pcount: dict[int, dict[int, int]] = field(default_factory=dict)

    def pcount(self, s: int, v: int) -> int:
        return int(self.pcount_batch(s, np.array([v]))[0])

    def pcount_batch(self, s: int, vs: np.ndarray) -> np.ndarray:
        """Proximity scores of vs against s's guards, cached per (s, v)."""
        vs = np.asarray(vs, dtype=np.int64)
        cache = self._pcount.setdefault(int(s), {})
        missing = np.array([v for v in vs if int(v) not in cache],
                           dtype=np.int64)
        if len(missing):
            guards = self.guard[int(s)]
            g = np.tile(guards, len(missing))
            v_rep = np.repeat(missing, len(guards))
            s_rep = np.full(len(g), s, dtype=np.int64)
            keep = g != v_rep  # a guard never scores against itself
            yes = np.zeros(len(g), dtype=bool)
            if keep.any():
                yes[keep] = self.session.quad_query_batch(
                    s_rep[keep], v_rep[keep], s_rep[keep], g[keep])
            counts = yes.reshape(len(missing), len(guards)).sum(axis=1)
            for v, c in zip(missing, counts):
                cache[int(v)] = int(c)
        return np.array([cache[int(v)] for v in vs], dtype=np.int64)


def build_kernel_guard(session: OracleSession, round_index: int,
                       active: np.ndarray, s1: np.ndarray, s2: np.ndarray,
                       params: RoundParams, constants: AlgoConstants,
                       seed: int) -> RoundState:
    """ProbSort the cross edges E(S1,S2) and cut the per-s rank windows."""
    need = 2 * params.m_win + 2 * params.d
    if len(s2) < need:
        raise TerminalRound(f"|S2|={len(s2)} cannot hold windows ({need})")
    us = np.repeat(s1, len(s2))
    vs = np.tile(s2, len(s1))
    pi_x = prob_sort(session, us, vs, seed=seed,
                     c_w=constants.probsort_c_w,
                     borda_cap=max(constants.borda_cap, len(us) + 1))
    in_s1 = np.zeros(session.n, dtype=bool)
    in_s1[s1] = True
    lo = pi_x.edges[:, 0]
    hi = pi_x.edges[:, 1]
    s_end = np.where(in_s1[lo], lo, hi)
    w_end = np.where(in_s1[lo], hi, lo)
    kernel: dict[int, np.ndarray] = {}
    guard: dict[int, np.ndarray] = {}
    kernel_ranks: dict[int, np.ndarray] = {}
    kernel_max_rank: dict[int, int] = {}
    order = np.argsort(s_end, kind="stable")
    bounds = np.searchsorted(s_end[order], s1)
    bounds = np.append(bounds, len(order))
    for j, s in enumerate(s1):
        pos = order[bounds[j]:bounds[j + 1]]  # global ranks, ascending
        if len(pos) < need:
            raise TerminalRound(f"induced order of s={s} too short")
        kernel[int(s)] = w_end[pos[:params.m_win]]
        guard[int(s)] = w_end[pos[params.m_win + 2 * params.d:
                                  2 * params.m_win + 2 * params.d]]
        kernel_ranks[int(s)] = pos[:params.m_win]
        kernel_max_rank[int(s)] = int(pos[params.m_win - 1])
    return RoundState(index=round_index, session=session, params=params,
                      active=active, s1=s1, s2=s2, pi_x=pi_x, kernel=kernel,
                      guard=guard, kernel_ranks=kernel_ranks,
                      kernel_max_rank=kernel_max_rank)


def filter_survivors(rs: RoundState, candidates: np.ndarray) -> np.ndarray:
    """Drop every candidate whose best proximity score reaches the threshold.

    Scores against further samples are skipped once a candidate is dead; by
    persistence the skipped queries could be replayed with identical answers.
    """
    alive = np.asarray(candidates, dtype=np.int64)
    for s in rs.s1:
        if not len(alive):
            break
        counts = rs.pcount_batch(int(s), alive)
        alive = alive[counts < rs.params.filter_threshold]
    return alive


class AlgTester:
    """Majority-vote comparator over kernels, emulating an adversarial
    quadruplet oracle with error mu=1 whenever its preconditions hold.

    Answers are canonical per unordered pair of edges, so the comparator is
    antisymmetric by construction. Degenerate trimmed kernels (< 3 votes)
    fall back to a single raw oracle query and are counted.
    """

    mu = 1.0

    def __init__(self, rs: RoundState):
        self.rs = rs
        self.session = rs.session
        self.fallbacks = 0
        self.calls = 0
        n = self.session.n
        self._in_s1 = np.zeros(n, dtype=bool)
        self._in_s1[rs.s1] = True
        self._kmr = np.full(n, -1, dtype=np.int64)
        for s, r in rs.kernel_max_rank.items():
            self._kmr[s] = r
        # pooled kernels for vectorized vote expansion
        self._pool_off = np.zeros(n, dtype=np.int64)
        pool = []
        off = 0
        for s in rs.s1:
            arr = rs.kernel[int(s)]
            self._pool_off[s] = off
            pool.append(arr)
            off += len(arr)
        self._pool = np.concatenate(pool) if pool else np.empty(0, np.int64)
        self._cut_cache: dict[tuple[int, int], int] = {}

    def _trim_cut(self, sx: int, sy: int) -> int:
        """Votes kept from kernel(sy) when e* lies on sx's side: drop the
        kernel(sy) edges ranked among the top d+1 of the merged rank order."""
        key = (sx, sy)
        cut = self._cut_cache.get(key)
        if cut is not None:
            return cut
        rs = self.rs
        d = rs.params.d
        ra = rs.kernel_ranks[sx][-(d + 1):]
        rb = rs.kernel_ranks[sy][-(d + 1):]
        merged = np.sort(np.concatenate([ra, rb]))
        thresh = merged[-(d + 1)]
        cut = int(np.searchsorted(rs.kernel_ranks[sy], thresh))
        if cut % 2 == 0 and cut > 0:
            cut -= 1  # odd vote counts avoid majority ties
        self._cut_cache[key] = cut
        return cut

    def compare_batch(self, au, av, bu, bv) -> np.ndarray:
        """True where the first edge is (estimated) at most the second."""
        au = np.asarray(au, dtype=np.int64)
        av = np.asarray(av, dtype=np.int64)
        bu = np.asarray(bu, dtype=np.int64)
        bv = np.asarray(bv, dtype=np.int64)
        m = len(au)
        self.calls += m
        out = np.zeros(m, dtype=bool)
        alo = np.minimum(au, av)
        ahi = np.maximum(au, av)
        blo = np.minimum(bu, bv)
        bhi = np.maximum(bu, bv)
        equal = (alo == blo) & (ahi == bhi)
        out[equal] = True
        todo = ~equal
        if not todo.any():
            return out
        # split each edge into its anchor (kernel owner) and query vertex
        sa = np.where(self._in_s1[alo], alo, ahi)
        va = np.where(self._in_s1[alo], ahi, alo)
        sb = np.where(self._in_s1[blo], blo, bhi)
        vb = np.where(self._in_s1[blo], bhi, blo)
        bad = todo & ((~self._in_s1[sa]) | (~self._in_s1[sb]))
        if bad.any():
            raise ValueError("tester edges must touch the first sample set")
        # the side whose kernel holds the overall last-ranked edge loses its
        # kernel for voting; the other side's trimmed kernel votes. Shared
        # anchors tie in rank; the query vertex then fixes the orientation so
        # both argument orders run the identical physical test.
        a_is_estar = (self._kmr[sa] > self._kmr[sb]) | \
            ((self._kmr[sa] == self._kmr[sb]) & (va < vb))
        sx = np.where(a_is_estar, sa, sb)
        vx = np.where(a_is_estar, va, vb)
        sy = np.where(a_is_estar, sb, sa)
        vy = np.where(a_is_estar, vb, va)
        cuts = np.zeros(m, dtype=np.int64)
        idx_todo = np.flatnonzero(todo)
        pair_code = sx[idx_todo] * np.int64(self.session.n) + sy[idx_todo]
        uniq, inv = np.unique(pair_code, return_inverse=True)
        cut_per_pair = np.empty(len(uniq), dtype=np.int64)
        for t, code in enumerate(uniq):
            cx = int(code) // self.session.n
            cy = int(code) % self.session.n
            if cx == cy:
                size = self.rs.params.m_win
                cut_per_pair[t] = size - 1 if size % 2 == 0 else size
            else:
                cut_per_pair[t] = self._trim_cut(cx, cy)
        cuts[idx_todo] = cut_per_pair[inv]
        degenerate = todo & (cuts < 3)
        if degenerate.any():
            self.fallbacks += int(degenerate.sum())
            idx = np.flatnonzero(degenerate)
            out[idx] = self.session.quad_query_batch(
                au[idx], av[idx], bu[idx], bv[idx])
        vote_items = np.flatnonzero(todo & (cuts >= 3))
        if len(vote_items):
            lens = cuts[vote_items]
            total = int(lens.sum())
            seg = np.repeat(np.arange(len(vote_items)), lens)
            starts = np.concatenate([[0], np.cumsum(lens)[:-1]])
            within = np.arange(total) - np.repeat(starts, lens)
            w_flat = self._pool[self._pool_off[sy[vote_items]][seg] + within]
            e1u = sx[vote_items][seg]
            e1v = vx[vote_items][seg]
            e2v = vy[vote_items][seg]
            ans = self.session.quad_query_batch(e1u, e1v, w_flat, e2v)
            # NO means the x-side edge looks bigger than the vote edge
            bigger_votes = np.add.reduceat((~ans).astype(np.int64), starts)
            x_bigger = bigger_votes > lens // 2
            # x was the e*-side edge; translate back to "a <= b"
            a_site = a_is_estar[vote_items]
            out[vote_items] = np.where(a_site, ~x_bigger, x_bigger)
        return out


def alg_tester(rs: RoundState, e1, e2) -> bool:
    """Single tester query; True iff the first edge is judged not longer."""
    t = AlgTester(rs)
    return bool(t.compare_batch(np.array([e1[0]]), np.array([e1[1]]),
                                np.array([e2[0]]), np.array([e2[1]]))[0])


# -- ground-truth audits (test support) ----------------------------------------


def kernel_guard_separation_violations(space, rs: RoundState) -> int:
    """Number of samples whose farthest kernel vertex is not strictly closer
    than every guard vertex (ground truth)."""
    bad = 0
    for s in rs.s1:
        ker = rs.kernel[int(s)]
        gua = rs.guard[int(s)]
        dk = space.pair_distances(np.full(len(ker), s), ker).max()
        dg = space.pair_distances(np.full(len(gua), s), gua).min()
        bad += not (dk < dg)
    return bad


def survivor_kernel_radius_violations(space, rs: RoundState,
                                      survivors: np.ndarray) -> int:
    """Survivors closer to some sample than that sample's kernel radius."""
    bad = 0
    for s in rs.s1:
        ker = rs.kernel[int(s)]
        radius = space.pair_distances(np.full(len(ker), s), ker).max()
        dv = space.pair_distances(np.full(len(survivors), s), survivors)
        bad += int(np.sum(dv <= radius))
    return bad
