import numpy as np
import pytest

from rankcluster.metric_core import synth_gaussians
from rankcluster.oracle import NoiseModel, OracleSession
from rankcluster.round_machinery import (
    AlgoConstants, AlgTester, TerminalRound, alg_tester, build_kernel_guard,
    draw_samples, filter_survivors, kernel_guard_separation_violations,
)


def make_round(n=600, k=3, phi=0.0, seed=0, session_seed=1, **overrides):
    sp = synth_gaussians(k=k, n=n, dim=2, stddev=1.0, seed=seed)
    sess = OracleSession(sp, NoiseModel.probabilistic(phi), seed=session_seed)
    # second sample large enough that the rank windows stay blob-local
    overrides.setdefault("c_s2", 0.08)
    consts = AlgoConstants().with_overrides(**overrides)
    rng = np.random.default_rng(session_seed)
    active = np.arange(n)
    s1, s2, terminal = draw_samples(rng, active, k, consts, n)
    assert not terminal
    params = consts.derived(n, k)
    rs = build_kernel_guard(sess, 0, active, s1, s2, params, consts,
                            seed=session_seed + 7)
    return sp, sess, consts, rs


def test_sample_size_formulas():
    consts = AlgoConstants(c_s1=1.0, c_s2=1.0)
    p = consts.derived(2048, 5)  # log2 = 11
    assert p.m1 == 5 * 121
    assert p.m2 == 5 * 1331
    # clamping: small active set forces the terminal flag
    rng = np.random.default_rng(0)
    s1, s2, terminal = draw_samples(rng, np.arange(100), 5, consts, 2048)
    assert terminal


def test_draw_samples_deterministic():
    consts = AlgoConstants()
    a1 = draw_samples(np.random.default_rng(3), np.arange(500), 3, consts, 500)
    a2 = draw_samples(np.random.default_rng(3), np.arange(500), 3, consts, 500)
    assert np.array_equal(a1[0], a2[0]) and np.array_equal(a1[1], a2[1])


def test_kernel_guard_bookkeeping():
    sp, sess, consts, rs = make_round(phi=0.15)
    p = rs.params
    for s in rs.s1:
        s = int(s)
        assert len(rs.kernel[s]) == p.m_win
        assert len(rs.guard[s]) == p.m_win
        assert not set(rs.kernel[s]) & set(rs.guard[s])
        # windows hold exactly the stated induced ranks of pi_x
        ranks_k = rs.pi_x.ranks_of(np.full(p.m_win, s), rs.kernel[s])
        ranks_g = rs.pi_x.ranks_of(np.full(p.m_win, s), rs.guard[s])
        assert np.array_equal(np.sort(ranks_k), rs.kernel_ranks[s])
        assert ranks_k.max() < ranks_g.min()  # gap of at least 2D by layout


def test_kernel_is_true_nearest_when_noiseless():
    sp, sess, consts, rs = make_round(phi=0.0)
    for s in rs.s1[:3]:
        s = int(s)
        d = sp.pair_distances(np.full(len(rs.s2), s), rs.s2)
        order = np.argsort(d, kind="stable")
        want = set(rs.s2[order[:rs.params.m_win]].tolist())
        assert set(rs.kernel[s].tolist()) == want


def test_kernel_guard_separation_noiseless():
    sp, sess, consts, rs = make_round(phi=0.0)
    assert kernel_guard_separation_violations(sp, rs) == 0


def test_pcount_extremes_noiseless():
    sp, sess, consts, rs = make_round(phi=0.0)
    s = int(rs.s1[0])
    guards = rs.guard[s]
    dg = sp.pair_distances(np.full(len(guards), s), guards)
    # farther than every guard -> 0; the true nearest vertex -> full count
    d_all = sp.pair_distances(np.full(sp.n, s), np.arange(sp.n))
    far = int(np.argmax(d_all))
    assert rs.pcount(s, far) == 0
    near = int(np.argsort(d_all)[1])  # skip s itself
    if near not in set(guards.tolist()) and near not in set(rs.s2.tolist()):
        assert rs.pcount(s, near) == len(guards)


def test_pcount_deterministic_and_cached():
    sp, sess, consts, rs = make_round(phi=0.2)
    s = int(rs.s1[0])
    v = int([x for x in range(sp.n) if x not in set(rs.s2.tolist())
             and x != s][0])
    before = sess.ledger["default"].quad_total
    c1 = rs.pcount(s, v)
    mid = sess.ledger["default"].quad_total
    c2 = rs.pcount(s, v)
    after = sess.ledger["default"].quad_total
    assert c1 == c2
    assert mid > before and after == mid  # cached second time


def test_filter_survivors_noiseless_far():
    sp, sess, consts, rs = make_round(phi=0.0)
    sample_set = set(rs.s1.tolist()) | set(rs.s2.tolist())
    cand = np.array([v for v in range(sp.n) if v not in sample_set])
    survivors = filter_survivors(rs, cand)
    # noiseless: a survivor is never within a kernel radius of any sample
    for s in rs.s1:
        ker = rs.kernel[int(s)]
        radius = sp.pair_distances(np.full(len(ker), s), ker).max()
        dv = sp.pair_distances(np.full(len(survivors), s), survivors)
        assert np.all(dv > radius)


def test_tester_equal_edges():
    sp, sess, consts, rs = make_round(phi=0.15)
    s = int(rs.s1[0])
    v = int(rs.s2[0]) + 1 if int(rs.s2[0]) + 1 < sp.n else 0
    assert alg_tester(rs, (s, v), (v, s)) is True


def test_tester_noiseless_far_ratio():
    sp, sess, consts, rs = make_round(phi=0.0, n=800)
    sample_set = set(rs.s1.tolist()) | set(rs.s2.tolist())
    cand = np.array([v for v in range(sp.n) if v not in sample_set])
    survivors = filter_survivors(rs, cand)
    t = AlgTester(rs)
    rng = np.random.default_rng(5)
    checked = 0
    for _ in range(2000):
        s_a, s_b = rng.choice(rs.s1, 2)
        v_a, v_b = rng.choice(survivors, 2, replace=False)
        d_a = sp.pair_distance(int(s_a), int(v_a))
        d_b = sp.pair_distance(int(s_b), int(v_b))
        if d_b == 0 or not (d_a / d_b > 2 or d_b / d_a > 2):
            continue
        got = t.compare_batch(np.array([s_a]), np.array([v_a]),
                              np.array([s_b]), np.array([v_b]))[0]
        assert bool(got) == (d_a < d_b)
        checked += 1
        if checked > 300:
            break
    assert checked > 50


def test_tester_antisymmetric():
    sp, sess, consts, rs = make_round(phi=0.2, n=700, session_seed=9)
    t = AlgTester(rs)
    rng = np.random.default_rng(3)
    sample_set = set(rs.s1.tolist()) | set(rs.s2.tolist())
    cand = np.array([v for v in range(sp.n) if v not in sample_set])
    for _ in range(200):
        s_a, s_b = rng.choice(rs.s1, 2)
        v_a, v_b = rng.choice(cand, 2, replace=False)
        ab = t.compare_batch(np.array([s_a]), np.array([v_a]),
                             np.array([s_b]), np.array([v_b]))[0]
        ba = t.compare_batch(np.array([s_b]), np.array([v_b]),
                             np.array([s_a]), np.array([v_a]))[0]
        assert bool(ab) != bool(ba)


def test_terminal_round_raised():
    sp = synth_gaussians(k=2, n=400, dim=2, stddev=1.0, seed=0)
    sess = OracleSession(sp, NoiseModel.perfect(), seed=1)
    consts = AlgoConstants()
    params = consts.derived(400, 2)
    s1 = np.arange(4)
    s2 = np.arange(10, 14)  # far too small for the windows
    with pytest.raises(TerminalRound):
        build_kernel_guard(sess, 0, np.arange(400), s1, s2, params, consts,
                           seed=3)


def test_isolation_of_query_keys():
    # within one round, probsort keys never collide with pcount/tester keys
    sp = synth_gaussians(k=3, n=800, dim=2, stddev=1.0, seed=2)
    sess = OracleSession(sp, NoiseModel.probabilistic(0.15), seed=4,
                         track_keys=True)
    consts = AlgoConstants(c_s2=0.05)
    rng = np.random.default_rng(11)
    active = np.arange(sp.n)
    s1, s2, terminal = draw_samples(rng, active, 3, consts, sp.n)
    assert not terminal
    params = consts.derived(sp.n, 3)
    with sess.stage("probsort"):
        rs = build_kernel_guard(sess, 0, active, s1, s2, params, consts, seed=5)
    sample_set = set(s1.tolist()) | set(s2.tolist())
    cand = np.array([v for v in range(sp.n) if v not in sample_set])
    with sess.stage("pcount"):
        filter_survivors(rs, cand)
    with sess.stage("tester"):
        t = AlgTester(rs)
        t.compare_batch(np.array([s1[0]]), np.array([cand[0]]),
                        np.array([s1[1]]), np.array([cand[1]]))
    k_sort = sess.stage_key_hashes("probsort")
    k_pc = sess.stage_key_hashes("pcount")
    k_t = sess.stage_key_hashes("tester")
    assert len(np.intersect1d(k_sort, k_pc)) == 0
    assert len(np.intersect1d(k_sort, k_t)) == 0
