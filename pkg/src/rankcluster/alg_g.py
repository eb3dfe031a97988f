"""General-metric coreset-with-mapping construction.

Each round samples, orders the cross edges, filters the vicinity of the first
sample, finds approximate nearest sample centers through the majority-vote
comparator, maps a safe prefix of the induced order, and recurses on the
rest. The union of samples plus the final remainder is the center set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .noisy_sort import OracleComparator, adv_sort
from .oracle import OracleSession
from .round_machinery import (
    AlgoConstants, AlgTester, RoundState, TerminalRound, build_kernel_guard,
    draw_samples, filter_survivors,
)


@dataclass
class RoundReport:
    index: int
    n_active: int
    n_s1: int = 0
    n_s2: int = 0
    n_survivors: int = 0
    n_safe: int = 0
    terminal: bool = False
    tester_calls: int = 0
    tester_fallbacks: int = 0
    chi: int = 0
    eliminated: int = 0


@dataclass
class CoresetPlus:
    """Center set plus a total mapping of every vertex to a center."""

    centers: np.ndarray
    mapping: np.ndarray          # mapping[v] = center vertex id
    round_of: np.ndarray         # round that fixed each vertex's mapping
    p: int
    order_provenance: dict[int, np.ndarray] = field(default_factory=dict)
    reports: list[RoundReport] = field(default_factory=list)

    def __post_init__(self):
        self.centers = np.unique(np.asarray(self.centers, dtype=np.int64))
        self.mapping = np.asarray(self.mapping, dtype=np.int64)
        n = len(self.mapping)
        if np.any((self.mapping < 0) | (self.mapping >= n)):
            raise ValueError("mapping must be total")
        center_set = set(self.centers.tolist())
        if not set(np.unique(self.mapping).tolist()) <= center_set:
            raise ValueError("mapping image must lie inside the center set")
        if np.any(self.mapping[self.centers] != self.centers):
            raise ValueError("centers must map to themselves")

    @property
    def n(self) -> int:
        return len(self.mapping)

    def dump_text(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("vertex,center,round\n")
            for v in range(self.n):
                fh.write(f"{v},{self.mapping[v]},{self.round_of[v]}\n")


@dataclass
class _RoundOutcome:
    terminal: bool
    s_all: np.ndarray = None
    safe_vertices: np.ndarray = None   # in safe-order (pi_N rank order)
    safe_centers: np.ndarray = None
    survivors: np.ndarray = None
    rs: RoundState | None = None
    report: RoundReport | None = None


def first_incident_edges(pi_edges: np.ndarray, s1_mask: np.ndarray
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per non-sample vertex: position, vertex, and sample endpoint of its
    first incident edge in the given edge order."""
    lo = pi_edges[:, 0]
    hi = pi_edges[:, 1]
    v_end = np.where(s1_mask[lo], hi, lo)
    s_end = np.where(s1_mask[lo], lo, hi)
    uniq, first_pos = np.unique(v_end, return_index=True)
    order = np.argsort(first_pos, kind="stable")
    return first_pos[order], uniq[order], s_end[first_pos[order]]


def run_round_general(session: OracleSession, active: np.ndarray, k: int,
                      constants: AlgoConstants, seed: int, round_index: int,
                      n_ambient: int) -> _RoundOutcome:
    report = RoundReport(index=round_index, n_active=len(active))
    rng = np.random.default_rng(
        np.random.SeedSequence([seed, round_index, 0xA16]))
    s1, s2, terminal = draw_samples(rng, active, k, constants, n_ambient)
    if terminal:
        report.terminal = True
        return _RoundOutcome(terminal=True, report=report)
    report.n_s1 = len(s1)
    report.n_s2 = len(s2)
    params = constants.derived(n_ambient, k)
    try:
        with session.stage(f"g_r{round_index}_probsort"):
            rs = build_kernel_guard(session, round_index, active, s1, s2,
                                    params, constants,
                                    seed=seed * 1013 + round_index)
    except TerminalRound:
        report.terminal = True
        return _RoundOutcome(terminal=True, report=report)
    s_all = np.union1d(s1, s2)
    candidates = np.setdiff1d(active, s_all, assume_unique=False)
    with session.stage(f"g_r{round_index}_pcount"):
        survivors = filter_survivors(rs, candidates)
    report.n_survivors = len(survivors)
    if len(survivors) == 0:
        report.terminal = True
        return _RoundOutcome(terminal=True, report=report)
    tester = AlgTester(rs)
    ys = np.repeat(s1, len(survivors))
    yv = np.tile(survivors, len(s1))
    with session.stage(f"g_r{round_index}_tester"):
        pi_y = adv_sort(ys, yv, tester, seed=seed * 2027 + round_index)
    report.tester_calls = tester.calls
    report.tester_fallbacks = tester.fallbacks
    s1_mask = np.zeros(session.n, dtype=bool)
    s1_mask[s1] = True
    _, f_vertices, f_centers = first_incident_edges(pi_y.edges, s1_mask)
    safe_count = min(math.floor(constants.safe_fraction * len(active)),
                     len(f_vertices))
    report.n_safe = safe_count
    return _RoundOutcome(
        terminal=False, s_all=s_all,
        safe_vertices=f_vertices[:safe_count],
        safe_centers=f_centers[:safe_count],
        survivors=survivors, rs=rs, report=report)


def alg_g(session: OracleSession, k: int, p: int,
          constants: AlgoConstants | None = None, seed: int = 0,
          collect_states: list | None = None) -> CoresetPlus:
    """O(1)-quality center set and mapping using only quadruplet queries."""
    constants = constants or AlgoConstants()
    n = session.n
    params = constants.derived(n, k)
    mapping = np.full(n, -1, dtype=np.int64)
    round_of = np.full(n, -1, dtype=np.int64)
    centers: list[np.ndarray] = []
    provenance: dict[int, np.ndarray] = {}
    reports: list[RoundReport] = []
    active = np.arange(n)
    for r in range(1, params.round_cap + 1):
        if len(active) <= params.term_threshold:
            break
        out = run_round_general(session, active, k, constants, seed, r, n)
        reports.append(out.report)
        if collect_states is not None:
            collect_states.append(out)
        if out.terminal:
            break
        mapping[out.s_all] = out.s_all
        round_of[out.s_all] = r
        centers.append(out.s_all)
        mapping[out.safe_vertices] = out.safe_centers
        round_of[out.safe_vertices] = r
        for s in np.unique(out.safe_centers):
            provenance[int(s)] = out.safe_vertices[out.safe_centers == s]
        removed = np.union1d(out.s_all, out.safe_vertices)
        active = np.setdiff1d(active, removed, assume_unique=False)
        if len(active) == 0:
            break
    if len(active):
        mapping[active] = active
        round_of[active] = len(reports) + 1
        centers.append(active)
    all_centers = np.concatenate(centers) if centers else np.arange(n)
    return CoresetPlus(centers=all_centers, mapping=mapping,
                       round_of=round_of, p=p,
                       order_provenance=provenance, reports=reports)


def baseline_generic(session: OracleSession, k: int, p: int,
                     constants: AlgoConstants | None = None,
                     seed: int = 0) -> CoresetPlus:
    """The generic recursive-sampling algorithm run on raw oracle answers.

    Nearest samples come from single-query tournaments and the removal order
    from a noisy quicksort; every answer is trusted as correct.
    """
    constants = constants or AlgoConstants()
    n = session.n
    params = constants.derived(n, k)
    m_nominal = params.m1 + params.m2
    mapping = np.full(n, -1, dtype=np.int64)
    round_of = np.full(n, -1, dtype=np.int64)
    centers: list[np.ndarray] = []
    reports: list[RoundReport] = []
    active = np.arange(n)
    for r in range(1, params.round_cap + 1):
        if len(active) <= params.term_threshold:
            break
        report = RoundReport(index=r, n_active=len(active))
        rng = np.random.default_rng(np.random.SeedSequence([seed, r, 0xBA5E]))
        m_t = min(m_nominal, len(active) // 4)
        if m_t < 2:
            report.terminal = True
            reports.append(report)
            break
        samples = np.unique(rng.choice(active, size=m_t, replace=True))
        if len(samples) < max(2, math.ceil(0.5 * m_nominal)):
            report.terminal = True
            reports.append(report)
            break
        report.n_s1 = len(samples)
        rest = np.setdiff1d(active, samples, assume_unique=False)
        if len(rest) == 0:
            report.terminal = True
            reports.append(report)
            break
        best = np.full(len(rest), samples[0], dtype=np.int64)
        with session.stage(f"b_r{r}_tournament"):
            for s in samples[1:]:
                challenger = np.full(len(rest), s, dtype=np.int64)
                better = session.quad_query_batch(challenger, rest, best, rest)
                best = np.where(better, challenger, best)
        with session.stage(f"b_r{r}_sort"):
            pi = adv_sort(rest, best, OracleComparator(session),
                          seed=seed * 3041 + r)
        s1_mask = np.zeros(n, dtype=bool)
        s1_mask[samples] = True
        _, f_vertices, f_centers = first_incident_edges(pi.edges, s1_mask)
        safe_count = min(math.floor(constants.safe_fraction * len(active)),
                         len(f_vertices))
        report.n_survivors = len(rest)
        report.n_safe = safe_count
        reports.append(report)
        safe_v = f_vertices[:safe_count]
        safe_c = f_centers[:safe_count]
        mapping[samples] = samples
        round_of[samples] = r
        centers.append(samples)
        mapping[safe_v] = safe_c
        round_of[safe_v] = r
        active = np.setdiff1d(active, np.union1d(samples, safe_v),
                              assume_unique=False)
        if len(active) == 0:
            break
    if len(active):
        mapping[active] = active
        round_of[active] = len(reports) + 1
        centers.append(active)
    all_centers = np.concatenate(centers) if centers else np.arange(n)
    return CoresetPlus(centers=all_centers, mapping=mapping,
                       round_of=round_of, p=p, reports=reports)
