import math

import numpy as np
import pytest

from helpers import families
from qnet_is import (TargetSet, build_tandem, estimate, exact_decay_rate, exact_probability,
                     kernel_plain, solve_exact)
from qnet_is.oracle import (OracleCache, OracleError, StateIndex, StateSpaceTooLarge,
                            state_count, transition_system)

TOTAL = TargetSet.total()


def test_n1(tandem2):
    assert exact_probability(tandem2, TOTAL, 1, start="uniformized") == pytest.approx(0.1)
    assert exact_probability(tandem2, TOTAL, 1) == 1.0


def test_n2_hand_derivation(tandem2):
    lam, mu1, mu2 = tandem2.theta
    q01 = lam / (1 - mu1)
    q10 = (lam + mu1 * q01) / (1 - mu2)
    assert exact_probability(tandem2, TOTAL, 2, start="uniformized") == pytest.approx(lam * q10, rel=1e-12)
    assert lam * q10 == pytest.approx(3.3058e-2, rel=1e-4)
    assert exact_probability(tandem2, TOTAL, 2) == pytest.approx(q10, rel=1e-12)


@pytest.mark.parametrize("name, model, target", families())
def test_matches_dense_solve(name, model, target):
    n = 9
    index = StateIndex.build(model, target, n)
    P, b = transition_system(model, target, n, index)
    q = np.linalg.solve(np.eye(len(b)) - P.toarray(), b)
    e1 = np.zeros(model.d, dtype=np.int64)
    e1[0] = 1
    want = q[index.lookup(e1[None, :])[0] - 1]
    assert exact_probability(model, target, n) == pytest.approx(want, rel=1e-10)


def test_index_layout(tandem2):
    idx = StateIndex.build(tandem2, TOTAL, 5)
    assert len(idx) == state_count(tandem2, TOTAL, 5) == 15
    assert not idx.states[0].any()
    np.testing.assert_array_equal(idx.lookup(idx.states), np.arange(len(idx)))
    buf = TargetSet.buffers((0.9, 0.6))
    assert state_count(tandem2, buf, 10) == 9 * 6


def test_row_sums_are_substochastic(feedback8):
    idx = StateIndex.build(feedback8, TOTAL, 8)
    P, b = transition_system(feedback8, TOTAL, 8, idx)
    rows = np.asarray(P.sum(axis=1)).ravel() + b
    assert np.all(rows <= 1 + 1e-12)


def test_monotone_iterates(feedback9):
    res = solve_exact(feedback9, TOTAL, 15, check_monotone=True)
    assert res.p > 0 and res.iterations > 1


def test_scale_invariance():
    a = build_tandem(3, 0.1, [0.5, 0.4, 0.45])
    b = build_tandem(3, 7.3, [36.5, 29.2, 32.85])
    target = TargetSet.buffers((0.7, 0.8, 0.9))
    for t in (TOTAL, target):
        assert exact_probability(a, t, 12) == pytest.approx(exact_probability(b, t, 12), rel=1e-10)


def test_state_cap(tandem2):
    with pytest.raises(StateSpaceTooLarge) as info:
        solve_exact(tandem2, TOTAL, 100, state_cap=1000)
    assert info.value.count == math.comb(101, 2)


def test_iteration_cap(tandem2):
    with pytest.raises(OracleError):
        solve_exact(tandem2, TOTAL, 20, max_iter=3)


def test_bad_inputs(tandem2):
    with pytest.raises(ValueError):
        solve_exact(tandem2, TOTAL, 5, tolerance=0)
    with pytest.raises(ValueError):
        solve_exact(tandem2, TOTAL, 5, start="other")


def test_decay_rate_examples(tandem2, tandem4, feedback8):
    dr = exact_decay_rate(tandem2, TOTAL, 50)
    assert dr.empirical == pytest.approx(-math.log(3.80e-31) / 50, abs=2e-3)
    assert dr.analytic == pytest.approx(math.log(4.5))
    assert exact_decay_rate(tandem4, TOTAL, 5).analytic == pytest.approx(math.log(6))
    assert exact_decay_rate(feedback8, TOTAL, 5).analytic == pytest.approx(math.log(3.6))


def test_buffer_target_truncation():
    # B = (0.55, 1), n = 2: a node hits at z_i = 2, transient states (1,0), (0,1), (1,1)
    m = build_tandem(2, 0.1, [0.5, 0.4])
    t = TargetSet.buffers((0.55, 1.0))
    lam, mu1, mu2 = m.theta
    A = np.array([
        [1 - mu2, -mu1, 0],   # (1,0): arrival hits, v1 -> (0,1), v2 blocked
        [0, 1 - mu1, -lam],   # (0,1): arrival -> (1,1), v1 blocked, v2 -> origin
        [-mu2, 0, 1],         # (1,1): arrival and v1 hit, v2 -> (1,0)
    ])
    q = np.linalg.solve(A, [lam, 0, lam + mu1])
    assert exact_probability(m, t, 2) == pytest.approx(q[0], rel=1e-12)


@pytest.mark.parametrize("name, model, target", families())
def test_plain_monte_carlo_agreement(name, model, target):
    reps = 1_000_000
    p = exact_probability(model, target, 5, start="uniformized")
    s = estimate(model, target, 5, kernel_plain(model), reps, seed=3, start="uniformized")
    assert abs(s.mean - p) < 4 * math.sqrt(p * (1 - p) / reps)


def test_cache_roundtrip(tmp_path, tandem2):
    path = tmp_path / "cache.json"
    c = OracleCache(path)
    first = c.get(tandem2, TOTAL, 12)
    again = OracleCache(path).get(tandem2, TOTAL, 12)
    assert again == first
    assert OracleCache(path).get(tandem2, TOTAL, 12, start="uniformized").p != first.p
