"""Persistent noisy quadruplet oracle, strong distance oracle, and query ledgers.

Persistence is by construction: each answer is a pure function of the session
seed and the canonical key of the unordered pair of edges, so repeated calls
agree and reversed calls flip, with O(1) memory. Probabilistic noise flips the
truthful answer with probability exactly phi per distinct key.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .metric_core import Edge, MetricSpace, canonical_edges

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_SALT = np.uint64(0xD1B54A32D192ED03)


def _mix64(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _absorb(h: np.ndarray, x: np.ndarray) -> np.ndarray:
    return _mix64(h ^ (x * _GOLDEN + _SALT))


class _Hll:
    """Small HyperLogLog for approximate distinct-key counting (2^12 registers)."""

    P = 12

    def __init__(self):
        self.reg = np.zeros(1 << self.P, dtype=np.uint8)

    def add_hashes(self, h: np.ndarray) -> None:
        idx = (h >> np.uint64(64 - self.P)).astype(np.int64)
        rest = h << np.uint64(self.P)
        # rank = leading zeros of the remaining bits + 1, capped
        rank = np.ones(len(h), dtype=np.uint8)
        mask = np.uint64(1) << np.uint64(63)
        cur = rest.copy()
        alive = np.ones(len(h), dtype=bool)
        for _ in range(52):
            alive &= (cur & mask) == 0
            if not alive.any():
                break
            rank[alive] += 1
            cur = cur << np.uint64(1)
        np.maximum.at(self.reg, idx, rank)

    def estimate(self) -> int:
        m = float(len(self.reg))
        alpha = 0.7213 / (1.0 + 1.079 / m)
        s = np.sum(np.exp2(-self.reg.astype(np.float64)))
        est = alpha * m * m / s
        zeros = int(np.sum(self.reg == 0))
        if est <= 2.5 * m and zeros > 0:
            est = m * np.log(m / zeros)
        return int(round(est))


@dataclass(frozen=True)
class NoiseModel:
    kind: str  # "perfect" | "probabilistic" | "adversarial"
    phi: float = 0.0
    mu: float = 0.0
    policy: str = "constant_no"  # adversarial in-band rule

    @classmethod
    def perfect(cls) -> "NoiseModel":
        return cls("perfect")

    @classmethod
    def probabilistic(cls, phi: float) -> "NoiseModel":
        if not (0.0 <= phi < 0.25):
            raise ValueError("phi must lie in [0, 1/4)")
        return cls("probabilistic", phi=phi)

    @classmethod
    def adversarial(cls, mu: float, policy: str = "constant_no") -> "NoiseModel":
        if mu < 0:
            raise ValueError("mu must be nonnegative")
        if policy not in ("constant_no", "constant_yes", "key_parity"):
            raise ValueError(f"unknown adversarial policy {policy!r}")
        return cls("adversarial", mu=mu, policy=policy)


@dataclass
class StageLedger:
    quad_total: int = 0
    strong_total: int = 0
    hll: _Hll = field(default_factory=_Hll)
    keys: list = field(default_factory=list)  # uint64 chunks when tracking

    def distinct(self, exact: bool) -> int:
        if exact:
            if not self.keys:
                return 0
            return int(np.unique(np.concatenate(self.keys)).size)
        return self.hll.estimate()


class OracleSession:
    """Gateway between algorithms and a hidden metric space.

    The quadruplet oracle answers whether the first edge is at most as long as
    the second (YES=True); ties in true distance are broken by canonical edge
    key, so every pair of distinct edges has a definite truthful answer.
    """

    def __init__(self, space: MetricSpace, noise: NoiseModel, seed: int,
                 track_keys: bool = False):
        self._space = space
        self.noise = noise
        self.seed = int(seed)
        self.track_keys = track_keys
        self._seed_h = _mix64(np.array([np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF)
                                        ^ _GOLDEN]))[0]
        self._stage = "default"
        self.ledger: dict[str, StageLedger] = {"default": StageLedger()}
        self._downstream_stages: set[str] = set()
        self._lock = threading.Lock()

    @property
    def n(self) -> int:
        return self._space.n

    # -- stages --------------------------------------------------------------

    def set_stage(self, name: str, downstream: bool = False) -> None:
        self._stage = name
        self.ledger.setdefault(name, StageLedger())
        if downstream:
            self._downstream_stages.add(name)

    @contextmanager
    def stage(self, name: str, downstream: bool = False):
        prev = self._stage
        self.set_stage(name, downstream)
        try:
            yield self
        finally:
            self._stage = prev

    def stage_key_hashes(self, name: str) -> np.ndarray:
        if not self.track_keys:
            raise RuntimeError("session was created with track_keys=False")
        led = self.ledger[name]
        if not led.keys:
            return np.empty(0, dtype=np.uint64)
        return np.unique(np.concatenate(led.keys))

    def export_ledger(self) -> str:
        lines = []
        for name in sorted(self.ledger):
            led = self.ledger[name]
            lines.append(f"{name},{led.quad_total},"
                         f"{led.distinct(self.track_keys)},{led.strong_total}")
        return "\n".join(lines) + "\n"

    def non_downstream_strong_calls(self) -> int:
        return sum(led.strong_total for name, led in self.ledger.items()
                   if name not in self._downstream_stages)

    # -- quadruplet oracle -----------------------------------------------------

    def _pair_key_hash(self, alo, ahi, blo, bhi):
        """Canonical pair-of-edges hash plus the caller-order-swapped mask."""
        swapped = (alo > blo) | ((alo == blo) & (ahi > bhi))
        lo_u = np.where(swapped, blo, alo).astype(np.uint64)
        lo_v = np.where(swapped, bhi, ahi).astype(np.uint64)
        hi_u = np.where(swapped, alo, blo).astype(np.uint64)
        hi_v = np.where(swapped, ahi, bhi).astype(np.uint64)
        h = np.full(len(alo), self._seed_h, dtype=np.uint64)
        h = _absorb(h, lo_u)
        h = _absorb(h, lo_v)
        h = _absorb(h, hi_u)
        h = _absorb(h, hi_v)
        return h, swapped

    def quad_query_batch(self, e1u, e1v, e2u, e2v) -> np.ndarray:
        """Vectorized oracle: True means the first edge is the closer pair."""
        alo, ahi = canonical_edges(e1u, e1v)
        blo, bhi = canonical_edges(e2u, e2v)
        self._space._check_range(np.concatenate([alo, ahi, blo, bhi])
                                 if len(alo) else alo)
        equal = (alo == blo) & (ahi == bhi)
        d1 = self._space.pair_distances(alo, ahi)
        d2 = self._space.pair_distances(blo, bhi)
        # tie-broken strict order: (d, lo, hi)
        truth = (d1 < d2) | ((d1 == d2) & ((alo < blo)
                                           | ((alo == blo) & (ahi < bhi))))
        h, swapped = self._pair_key_hash(alo, ahi, blo, bhi)
        if self.noise.kind == "perfect":
            ans = truth
        elif self.noise.kind == "probabilistic":
            u01 = (h >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
            ans = truth ^ (u01 < self.noise.phi)
        else:
            scale = 1.0 + self.noise.mu
            in_band = (d1 * scale > d2) & (d1 < d2 * scale)
            if self.noise.policy == "constant_no":
                policy = np.zeros(len(alo), dtype=bool)
            elif self.noise.policy == "constant_yes":
                policy = np.ones(len(alo), dtype=bool)
            else:
                policy = (h & np.uint64(1)).astype(bool)
            # policy is stated for the canonical key order; flip for callers
            # that passed the pair reversed, preserving antisymmetry
            policy = policy ^ swapped
            ans = np.where(in_band, policy, truth)
        ans = np.where(equal, True, ans)
        with self._lock:
            led = self.ledger[self._stage]
            led.quad_total += len(alo)
            led.hll.add_hashes(h)
            if self.track_keys:
                led.keys.append(h.copy())
        return ans

    def quad_query(self, e1: Edge, e2: Edge) -> bool:
        out = self.quad_query_batch(np.array([e1[0]]), np.array([e1[1]]),
                                    np.array([e2[0]]), np.array([e2[1]]))
        return bool(out[0])

    # -- strong oracle --------------------------------------------------------

    def strong_distance(self, u: int, v: int) -> float:
        with self._lock:
            self.ledger[self._stage].strong_total += 1
        if u == v:
            return 0.0
        return self._space.pair_distance(u, v)

    def strong_distance_batch(self, us, vs) -> np.ndarray:
        us = np.asarray(us, dtype=np.int64)
        with self._lock:
            self.ledger[self._stage].strong_total += len(us)
        vs = np.asarray(vs, dtype=np.int64)
        same = us == vs
        if same.any():
            out = np.zeros(len(us))
            mask = ~same
            if mask.any():
                out[mask] = self._space.pair_distances(us[mask], vs[mask])
            return out
        return self._space.pair_distances(us, vs)

    def strong_cross_distances(self, us, vs) -> np.ndarray:
        us = np.asarray(us, dtype=np.int64)
        vs = np.asarray(vs, dtype=np.int64)
        with self._lock:
            self.ledger[self._stage].strong_total += len(us) * len(vs)
        return self._space.cross_distances(us, vs)

    # -- diagnostics -----------------------------------------------------------

    def empirical_error_rate(self, trials: int, seed: int = 1) -> float:
        """Fraction of wrong answers over random distinct-edge queries."""
        rng = np.random.default_rng(seed)
        n = self._space.n
        got = 0
        wrong = 0
        while got < trials:
            take = min(trials - got, 200_000)
            u1 = rng.integers(0, n, take)
            v1 = rng.integers(0, n, take)
            u2 = rng.integers(0, n, take)
            v2 = rng.integers(0, n, take)
            ok = (u1 != v1) & (u2 != v2)
            lo1 = np.minimum(u1, v1)
            hi1 = np.maximum(u1, v1)
            lo2 = np.minimum(u2, v2)
            hi2 = np.maximum(u2, v2)
            ok &= ~((lo1 == lo2) & (hi1 == hi2))
            if not ok.any():
                continue
            u1, v1, u2, v2 = u1[ok], v1[ok], u2[ok], v2[ok]
            d1 = self._space.pair_distances(*canonical_edges(u1, v1))
            d2 = self._space.pair_distances(*canonical_edges(u2, v2))
            lo1, hi1 = canonical_edges(u1, v1)
            lo2, hi2 = canonical_edges(u2, v2)
            truth = (d1 < d2) | ((d1 == d2) & ((lo1 < lo2)
                                               | ((lo1 == lo2) & (hi1 < hi2))))
            with self.stage("error_probe"):
                ans = self.quad_query_batch(u1, v1, u2, v2)
            wrong += int(np.sum(ans != truth))
            got += len(u1)
        return wrong / got
