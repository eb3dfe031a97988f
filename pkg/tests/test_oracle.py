import numpy as np
import pytest

from rankcluster.metric_core import MetricSpace, synth_gaussians
from rankcluster.oracle import NoiseModel, OracleSession


def line_space():
    return MetricSpace(points=np.array([[0.0], [1.0], [3.0], [7.0]]))


def test_noiseless_truth():
    s = OracleSession(line_space(), NoiseModel.probabilistic(0.0), seed=1)
    # d(0,1)=1 < d(1,3)=6
    assert s.quad_query((0, 1), (1, 3)) is True
    assert s.quad_query((1, 3), (0, 1)) is False


def test_equal_edges_yes():
    s = OracleSession(line_space(), NoiseModel.probabilistic(0.2), seed=1)
    assert s.quad_query((2, 1), (1, 2)) is True


def test_persistence_and_flip():
    sp = synth_gaussians(k=2, n=50, dim=2, stddev=1.0, seed=0)
    s = OracleSession(sp, NoiseModel.probabilistic(0.15), seed=7)
    first = s.quad_query((0, 1), (2, 3))
    for _ in range(100):
        assert s.quad_query((0, 1), (2, 3)) == first
        assert s.quad_query((2, 3), (0, 1)) == (not first)


def test_persistence_batch_probes():
    sp = synth_gaussians(k=2, n=100, dim=2, stddev=1.0, seed=0)
    s = OracleSession(sp, NoiseModel.probabilistic(0.15), seed=3)
    rng = np.random.default_rng(5)
    u1, v1 = rng.integers(0, 50, 10_000), rng.integers(50, 100, 10_000)
    u2, v2 = rng.integers(0, 50, 10_000), rng.integers(50, 100, 10_000)
    a = s.quad_query_batch(u1, v1, u2, v2)
    b = s.quad_query_batch(u1, v1, u2, v2)
    c = s.quad_query_batch(u2, v2, u1, v1)
    assert np.array_equal(a, b)
    same = (np.minimum(u1, v1) == np.minimum(u2, v2)) & \
           (np.maximum(u1, v1) == np.maximum(u2, v2))
    assert np.array_equal(a[~same], ~c[~same])


def test_error_rate_probabilistic():
    sp = synth_gaussians(k=3, n=300, dim=2, stddev=1.0, seed=2)
    s = OracleSession(sp, NoiseModel.probabilistic(0.15), seed=11)
    rate = s.empirical_error_rate(100_000)
    assert abs(rate - 0.15) < 0.01


def test_error_rate_perfect_and_adversarial_mu0():
    sp = synth_gaussians(k=3, n=100, dim=2, stddev=1.0, seed=2)
    s0 = OracleSession(sp, NoiseModel.probabilistic(0.0), seed=1)
    assert s0.empirical_error_rate(10_000) == 0.0
    sa = OracleSession(sp, NoiseModel.adversarial(0.0), seed=1)
    assert sa.empirical_error_rate(10_000) == 0.0


def test_adversarial_band_policy():
    # coordinates 0,1,2.5: d(0,1)=1, d(1,2)=1.5 ratio in [1/2,2] at mu=1
    sp = MetricSpace(points=np.array([[0.0], [1.0], [2.5]]))
    s = OracleSession(sp, NoiseModel.adversarial(1.0, "constant_no"), seed=1)
    # (0,1) precedes (1,2) canonically, so the canonical policy answer NO applies
    assert s.quad_query((0, 1), (1, 2)) is False
    assert s.quad_query((1, 2), (0, 1)) is True  # flipped for reversed order
    # outside the band the oracle is truthful
    sp2 = MetricSpace(points=np.array([[0.0], [1.0], [4.0]]))
    s2 = OracleSession(sp2, NoiseModel.adversarial(1.0, "constant_no"), seed=1)
    assert s2.quad_query((0, 1), (1, 2)) is True  # 1 vs 3, ratio 3 > 2


def test_strong_distance_and_ledger():
    sp = line_space()
    s = OracleSession(sp, NoiseModel.perfect(), seed=1)
    assert s.strong_distance(0, 3) == 7.0
    assert s.strong_distance(2, 2) == 0.0
    for _ in range(3):
        s.strong_distance(0, 1)
    assert s.ledger["default"].strong_total == 5


def test_stage_ledger_export():
    sp = synth_gaussians(k=2, n=60, dim=2, stddev=1.0, seed=2)
    s = OracleSession(sp, NoiseModel.probabilistic(0.1), seed=1)
    with s.stage("phase_a"):
        s.quad_query((0, 1), (2, 3))
        s.quad_query((0, 1), (2, 3))
    with s.stage("downstream", downstream=True):
        s.strong_distance(0, 1)
    text = s.export_ledger()
    rows = {line.split(",")[0]: line.split(",") for line in text.strip().split("\n")}
    assert rows["phase_a"][1] == "2"
    assert rows["phase_a"][3] == "0"
    assert rows["downstream"][3] == "1"
    assert s.non_downstream_strong_calls() == 0


def test_distinct_counting_exact():
    sp = synth_gaussians(k=2, n=60, dim=2, stddev=1.0, seed=2)
    s = OracleSession(sp, NoiseModel.probabilistic(0.1), seed=1, track_keys=True)
    with s.stage("probe"):
        for _ in range(5):
            s.quad_query((0, 1), (2, 3))
        s.quad_query((0, 1), (2, 4))
    led = s.ledger["probe"]
    assert led.quad_total == 6
    assert led.distinct(exact=True) == 2
    assert len(s.stage_key_hashes("probe")) == 2


def test_distinct_hll_rough():
    sp = synth_gaussians(k=2, n=200, dim=2, stddev=1.0, seed=2)
    s = OracleSession(sp, NoiseModel.probabilistic(0.1), seed=1)
    rng = np.random.default_rng(0)
    with s.stage("bulk"):
        u1 = rng.integers(0, 100, 20_000)
        v1 = u1 + rng.integers(1, 100, 20_000)
        u2 = rng.integers(0, 100, 20_000)
        v2 = u2 + rng.integers(1, 100, 20_000)
        s.quad_query_batch(u1, v1, u2, v2)
    est = s.ledger["bulk"].distinct(exact=False)
    assert 0.8 * 15_000 < est < 1.25 * 21_000


def test_independence_sanity():
    # answers across distinct keys should be roughly independent coin flips
    # biased by phi; a loose chi-square-style bound on the flip fraction
    sp = synth_gaussians(k=2, n=400, dim=2, stddev=1.0, seed=3)
    s = OracleSession(sp, NoiseModel.probabilistic(0.25 - 1e-9), seed=5)
    rate = s.empirical_error_rate(10_000, seed=2)
    assert 0.22 < rate < 0.28


def test_out_of_range_vertex():
    s = OracleSession(line_space(), NoiseModel.perfect(), seed=1)
    with pytest.raises(IndexError):
        s.quad_query((0, 9), (1, 2))


def test_phi_validation():
    with pytest.raises(ValueError):
        NoiseModel.probabilistic(0.25)
    with pytest.raises(ValueError):
        NoiseModel.probabilistic(-0.1)
