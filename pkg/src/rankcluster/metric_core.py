"""Ground-truth metric spaces, dataset generation, and brute-force clustering oracles.

This module is the only place where true distances live. Everything downstream
(the algorithms under test) must go through an oracle session instead.

Distances are made effectively distinct by comparing (distance, canonical
edge key) lexicographically wherever an order over edges is needed; the
geometry itself is never perturbed.
"""

from __future__ import annotations

import csv
import math
import warnings
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np

Edge = tuple[int, int]

#: default cap on the number of center subsets brute_force_opt will enumerate
BRUTE_FORCE_CAP = 10**6


def make_edge(u: int, v: int) -> Edge:
    """Canonical unordered pair (min, max). Self-loops are rejected."""
    if u == v:
        raise ValueError(f"self-loop edge ({u},{u}) is not a valid edge")
    return (u, v) if u < v else (v, u)


def canonical_edges(us: np.ndarray, vs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized canonicalization of endpoint arrays."""
    us = np.asarray(us, dtype=np.int64)
    vs = np.asarray(vs, dtype=np.int64)
    if np.any(us == vs):
        raise ValueError("self-loop edge in batch")
    lo = np.minimum(us, vs)
    hi = np.maximum(us, vs)
    return lo, hi


class MetricSpace:
    """A finite metric space, either Euclidean points or an explicit matrix.

    Immutable after construction; safe for concurrent reads.
    """

    def __init__(self, *, points: np.ndarray | None = None,
                 dmat: np.ndarray | None = None, validate: bool = True,
                 rng_seed: int = 0):
        if (points is None) == (dmat is None):
            raise ValueError("exactly one of points/dmat must be given")
        if points is not None:
            pts = np.asarray(points, dtype=np.float64)
            if pts.ndim != 2 or pts.shape[0] < 1:
                raise ValueError("points must be a non-empty n x dim matrix")
            self.kind = "euclidean"
            self.points: np.ndarray | None = pts
            self.dmat: np.ndarray | None = None
            self.n = pts.shape[0]
            self.dim = pts.shape[1]
        else:
            m = np.asarray(dmat, dtype=np.float64)
            if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
                raise ValueError("dmat must be a square matrix")
            if np.any(m < 0):
                raise ValueError("distances must be nonnegative")
            if not np.allclose(m, m.T):
                raise ValueError("distance matrix must be symmetric")
            if np.any(np.diagonal(m) != 0):
                raise ValueError("diagonal must be zero")
            self.kind = "explicit"
            self.points = None
            self.dmat = m
            self.n = m.shape[0]
            self.dim = 0
        if validate:
            self._check_triangle(rng_seed)
        self._frozen = True

    def __setattr__(self, name, value):
        if getattr(self, "_frozen", False):
            raise AttributeError("MetricSpace is immutable")
        super().__setattr__(name, value)

    # -- distances ---------------------------------------------------------

    def _check_range(self, idx: np.ndarray | int) -> None:
        arr = np.asarray(idx)
        if arr.size and (arr.min() < 0 or arr.max() >= self.n):
            raise IndexError(f"vertex index out of range [0,{self.n})")

    def pair_distance(self, u: int, v: int) -> float:
        self._check_range(np.array([u, v]))
        if u == v:
            return 0.0
        if self.kind == "euclidean":
            return float(np.linalg.norm(self.points[u] - self.points[v]))
        return float(self.dmat[u, v])

    def pair_distances(self, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
        """Vectorized d(u_i, v_i)."""
        us = np.asarray(us, dtype=np.int64)
        vs = np.asarray(vs, dtype=np.int64)
        self._check_range(us)
        self._check_range(vs)
        if self.kind == "euclidean":
            diff = self.points[us] - self.points[vs]
            return np.sqrt(np.einsum("ij,ij->i", diff, diff))
        return self.dmat[us, vs]

    def cross_distances(self, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
        """Full |us| x |vs| distance matrix."""
        us = np.asarray(us, dtype=np.int64)
        vs = np.asarray(vs, dtype=np.int64)
        self._check_range(us)
        self._check_range(vs)
        if self.kind == "euclidean":
            a = self.points[us]
            b = self.points[vs]
            sq = (np.einsum("ij,ij->i", a, a)[:, None]
                  + np.einsum("ij,ij->i", b, b)[None, :]
                  - 2.0 * (a @ b.T))
            np.maximum(sq, 0.0, out=sq)
            return np.sqrt(sq)
        return self.dmat[np.ix_(us, vs)]

    # -- invariants --------------------------------------------------------

    def _check_triangle(self, rng_seed: int) -> None:
        # exhaustive for n <= 64, sampled (1e4 triples) otherwise
        tol = 1e-9
        if self.n <= 2:
            return
        if self.n <= 64:
            idx = np.arange(self.n)
            d = self.cross_distances(idx, idx)
            for a in range(self.n):
                lhs = d[a][None, :]  # d(a,c)
                rhs = d[a][:, None] + d  # d(a,b) + d(b,c)
                if np.any(lhs > rhs + tol):
                    raise ValueError("triangle inequality violated")
        else:
            rng = np.random.default_rng(rng_seed)
            a = rng.integers(0, self.n, 10_000)
            b = rng.integers(0, self.n, 10_000)
            c = rng.integers(0, self.n, 10_000)
            dab = self.pair_distances(a, b)
            dbc = self.pair_distances(b, c)
            dac = self.pair_distances(a, c)
            if np.any(dac > dab + dbc + tol):
                raise ValueError("triangle inequality violated (sampled)")

    # -- ordering helpers (tie-broken by canonical edge key) -----------------

    def edge_order_keys(self, us: np.ndarray, vs: np.ndarray):
        """Sort keys (d, u, v) realizing the distinct-distance convention."""
        lo, hi = canonical_edges(us, vs)
        return self.pair_distances(lo, hi), lo, hi

    def sort_edges(self, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
        """Indices that sort the given edges ascending by (d, edge key)."""
        d, lo, hi = self.edge_order_keys(us, vs)
        return np.lexsort((hi, lo, d))

    # -- text format ---------------------------------------------------------

    def dump_text(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"metric v1 {self.kind} {self.n} {self.dim}\n")
            if self.kind == "euclidean":
                for row in self.points:
                    fh.write(" ".join(repr(float(x)) for x in row) + "\n")
            else:
                for row in self.dmat:
                    fh.write(" ".join(repr(float(x)) for x in row) + "\n")

    @classmethod
    def load_text(cls, path: str) -> "MetricSpace":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 5 or header[0] != "metric" or header[1] != "v1":
                raise ValueError(f"bad metric file header: {header}")
            kind, n = header[2], int(header[3])
            rows = [[float(x) for x in fh.readline().split()] for _ in range(n)]
        arr = np.array(rows, dtype=np.float64)
        if kind == "euclidean":
            return cls(points=arr)
        if kind == "explicit":
            return cls(dmat=arr)
        raise ValueError(f"unknown metric kind {kind!r}")


# -- operations ---------------------------------------------------------------

def distance(space: MetricSpace, e: Edge) -> float:
    """Exact ground-truth distance of an edge."""
    u, v = make_edge(*e)
    return space.pair_distance(u, v)


def _as_center_array(centers) -> np.ndarray:
    arr = np.asarray(sorted(set(int(c) for c in centers)), dtype=np.int64)
    if arr.size == 0:
        raise ValueError("center set must be nonempty")
    return arr


def clustering_cost(space: MetricSpace, centers_or_mapping, p: int,
                    W: Sequence[int] | np.ndarray | None = None) -> float:
    """Sum over w in W of d(w, centers)^p, or of d(w, M(w))^p for a mapping.

    A mapping may be a dict {vertex: center} or an integer array of length n.
    """
    if W is None:
        W = np.arange(space.n)
    W = np.asarray(W, dtype=np.int64)
    if isinstance(centers_or_mapping, Mapping):
        m = centers_or_mapping
        targets = np.array([m[int(w)] for w in W], dtype=np.int64)
        d = space.pair_distances(W, targets)
    elif isinstance(centers_or_mapping, np.ndarray) and \
            centers_or_mapping.shape == (space.n,):
        targets = centers_or_mapping[W]
        d = space.pair_distances(W, targets)
    else:
        centers = _as_center_array(centers_or_mapping)
        d = space.cross_distances(W, centers).min(axis=1)
    return float(np.sum(d ** p))


def brute_force_opt(space: MetricSpace, k: int, p: int,
                    W: Sequence[int] | np.ndarray | None = None,
                    cap: int = BRUTE_FORCE_CAP) -> tuple[float, tuple[int, ...]]:
    """Exact (k,p)-clustering optimum by exhaustive center enumeration.

    Centers range over all of V; ties broken by lexicographic center set.
    """
    if W is None:
        W = np.arange(space.n)
    W = np.asarray(W, dtype=np.int64)
    if k < 1 or k > space.n:
        raise ValueError("k out of range")
    if math.comb(space.n, k) > cap:
        raise ValueError(f"C({space.n},{k}) exceeds cap {cap}")
    dmat = space.cross_distances(W, np.arange(space.n)) ** p
    best_cost = math.inf
    best: tuple[int, ...] | None = None
    for subset in combinations(range(space.n), k):
        cost = float(dmat[:, subset].min(axis=1).sum())
        if cost < best_cost - 1e-15:
            best_cost = cost
            best = subset
    assert best is not None
    return best_cost, best


def synth_gaussians(k: int, n: int, dim: int, stddev: float, seed: int,
                    separation: float = 12.0) -> MetricSpace:
    """~n/k Gaussian points around each of k well-separated centers, shuffled.

    Centers sit on a circle in the first two coordinates with minimum pairwise
    distance separation*stddev.
    """
    if n < k:
        raise ValueError("need n >= k")
    if dim < 1:
        raise ValueError("need dim >= 1")
    rng = np.random.default_rng(seed)
    centers = np.zeros((k, dim))
    if k > 1:
        radius = separation * stddev / (2.0 * math.sin(math.pi / k))
        angles = 2.0 * math.pi * np.arange(k) / k
        centers[:, 0] = radius * np.cos(angles)
        if dim >= 2:
            centers[:, 1] = radius * np.sin(angles)
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    blocks = [rng.normal(centers[j], stddev, size=(sizes[j], dim))
              for j in range(k)]
    pts = np.concatenate(blocks, axis=0)
    rng.shuffle(pts, axis=0)
    return MetricSpace(points=pts)


def load_tabular(path: str, columns: Sequence[str],
                 normalize: bool = True) -> MetricSpace:
    """Load numeric columns from a CSV with header; min-max normalize to [0,1].

    Rows with missing or non-numeric values in the selected columns are
    dropped; a single warning reports the dropped-row count.
    """
    rows: list[list[float]] = []
    dropped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in columns if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"columns not in header: {missing}")
        for rec in reader:
            try:
                rows.append([float(rec[c]) for c in columns])
            except (TypeError, ValueError):
                dropped += 1
    if dropped:
        warnings.warn(f"load_tabular: dropped {dropped} rows with "
                      f"missing/non-numeric values", stacklevel=2)
    if not rows:
        raise ValueError("no usable rows")
    pts = np.array(rows, dtype=np.float64)
    if normalize:
        lo = pts.min(axis=0)
        span = pts.max(axis=0) - lo
        span[span == 0] = 1.0
        pts = (pts - lo) / span
    return MetricSpace(points=pts)


def meyerson_sample(space: MetricSpace, m: int, seed: int) -> MetricSpace:
    """Sequential distance-proportional subsample of m points.

    First point always taken; each later point is accepted with probability
    min(1, d(x,S)/tau) where tau = (mean pairwise distance of the accepted
    set)/m. If the pass accepts more than m points, a farthest-first sweep
    over the acceptances keeps m of them (plain prefix truncation would throw
    away exactly the far points the sampler exists to keep); if it accepts
    fewer, the sample is topped up with the farthest remaining points.
    """
    if m > space.n:
        raise ValueError("m exceeds n")
    if m < 1:
        raise ValueError("m must be positive")
    rng = np.random.default_rng(seed)
    accepted = [0]
    all_idx = np.arange(space.n)
    d_to_set = space.pair_distances(all_idx, np.zeros(space.n, dtype=np.int64))
    pair_sum = 0.0  # running sum of pairwise distances within the accepted set
    for x in range(1, space.n):
        dx = d_to_set[x]
        if dx <= 0.0:
            continue
        npairs = len(accepted) * (len(accepted) - 1) // 2
        if npairs == 0:
            prob = 1.0
        else:
            tau = (pair_sum / npairs) / m
            prob = min(1.0, dx / tau) if tau > 0 else 1.0
        if rng.random() < prob:
            acc = np.asarray(accepted, dtype=np.int64)
            pair_sum += float(space.pair_distances(
                np.full(len(accepted), x, dtype=np.int64), acc).sum())
            accepted.append(x)
            d_to_set = np.minimum(
                d_to_set, space.pair_distances(
                    all_idx, np.full(space.n, x, dtype=np.int64)))
    if len(accepted) > m:
        pool = np.asarray(accepted, dtype=np.int64)
        keep = [int(pool[0])]
        dk = space.pair_distances(pool, np.full(len(pool), pool[0]))
        while len(keep) < m:
            far = int(np.argmax(dk))
            keep.append(int(pool[far]))
            dk = np.minimum(dk, space.pair_distances(
                pool, np.full(len(pool), pool[far])))
        accepted = keep
    else:
        chosen = set(accepted)
        while len(accepted) < m:
            cand = np.array([i for i in range(space.n) if i not in chosen],
                            dtype=np.int64)
            far = int(cand[int(np.argmax(d_to_set[cand]))])
            accepted.append(far)
            chosen.add(far)
            d_to_set = np.minimum(
                d_to_set, space.pair_distances(
                    all_idx, np.full(space.n, far, dtype=np.int64)))
    idx = np.asarray(accepted[:m], dtype=np.int64)
    if space.kind == "euclidean":
        return MetricSpace(points=space.points[idx])
    return MetricSpace(dmat=space.dmat[np.ix_(idx, idx)])


def lower_bound_instance(n: int, k: int, zeta: float) -> MetricSpace:
    """The rank-indistinguishable instance family showing 2k-1 centers are needed.

    Layout: k-1 hub vertices at mutual distance zeta (and zeta to everything),
    one group Y of n/k coincident vertices, and k-1 groups X_h of n/k - 1
    coincident vertices each, with unit distance across distinct groups.
    """
    if zeta <= 1:
        raise ValueError("zeta must exceed 1")
    if k < 2 or k > math.isqrt(n) / 2:
        raise ValueError("k must lie in [2, sqrt(n)/2]")
    if n % k != 0:
        raise ValueError("n/k must be an integer")
    npr = n // k
    # vertex layout: [0, k-1) hubs U; then Y (npr); then X_2.. X_k (npr-1 each)
    group = np.empty(n, dtype=np.int64)  # -1 hubs, 0 = Y, h = X_h (1..k-1)
    group[: k - 1] = -1
    group[k - 1: k - 1 + npr] = 0
    pos = k - 1 + npr
    for h in range(1, k):
        group[pos: pos + npr - 1] = h
        pos += npr - 1
    assert pos == n
    g1 = group[:, None]
    g2 = group[None, :]
    dm = np.ones((n, n), dtype=np.float64)          # cross-group default 1
    dm[(g1 == g2)] = 0.0                            # coincident within a group
    dm[(g1 == -1) | (g2 == -1)] = zeta              # hubs see zeta everywhere
    np.fill_diagonal(dm, 0.0)
    return MetricSpace(dmat=dm, validate=True)
