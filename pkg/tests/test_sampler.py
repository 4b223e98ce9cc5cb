import math

import numpy as np
import pytest

from helpers import families
from qnet_is import (ReplicationStream, TargetSet, build_for, build_tandem, estimate,
                     exact_probability, kernel_plain, kernel_standard_heuristic,
                     kernel_subsolution, run_episode)
from qnet_is.sampler import (Moments, StepCapExceeded, counter_uniform, replay_likelihood_ratio,
                             replication_key, simulate)

TOTAL = TargetSet.total()


def test_counter_uniform_range_and_mean():
    key = replication_key(np.uint64(7), 0)
    u = np.array([counter_uniform(key, np.uint64(i)) for i in range(20000)])
    assert u.min() >= 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 4 * math.sqrt(1 / 12 / len(u))


def test_streams_are_reproducible_and_distinct():
    a = [ReplicationStream(5, 3).uniform() for _ in range(1)]
    s1, s2 = ReplicationStream(5, 3), ReplicationStream(5, 3)
    assert [s1.uniform() for _ in range(10)] == [s2.uniform() for _ in range(10)]
    assert ReplicationStream(5, 4).uniform() != a[0]
    assert ReplicationStream(6, 3).uniform() != a[0]


def test_plain_kernel_is_theta(tandem2):
    k = kernel_plain(tandem2)
    np.testing.assert_allclose(k.at_state((3, 4), 10), tandem2.theta)


def test_standard_heuristic_examples(tandem2, tandem4, feedback8):
    np.testing.assert_allclose(kernel_standard_heuristic(tandem2)([0.3, 0.3]), [0.45, 0.45, 0.1])
    np.testing.assert_allclose(kernel_standard_heuristic(tandem4)(np.zeros(4)),
                               [0.24, 0.24, 0.24, 0.24, 0.04], rtol=1e-12)
    m = build_tandem(3, 0.1, [0.5, 0.3, 0.4])
    np.testing.assert_allclose(kernel_standard_heuristic(m)(np.zeros(3)) * 1.3,
                               [0.3, 0.5, 0.1, 0.4], rtol=1e-12)
    with pytest.raises(ValueError):
        kernel_standard_heuristic(feedback8)


def test_subsolution_kernel_limits(tandem2):
    k = kernel_subsolution(tandem2, build_for(tandem2, TOTAL, 0.02))
    # deep inside the region of the steepest piece
    np.testing.assert_allclose(k([0.5, 0.45]), [0.45, 0.45, 0.1], atol=1e-6)
    k0 = kernel_subsolution(tandem2, build_for(tandem2, TOTAL, 0.001))
    np.testing.assert_allclose(k0([0, 0]), tandem2.theta, atol=2e-3)


def test_feedback_boundary_classes(feedback8):
    k = kernel_subsolution(feedback8, build_for(feedback8, TOTAL, 0.02))
    assert [k.classify(z) for z in [(2, 2), (0, 3), (3, 0), (0, 0)]] == [0, 1, 2, 2]
    assert k.components.shape == (3, 3, 4)


@pytest.mark.parametrize("name, model, target", families())
def test_kernel_positivity(name, model, target):
    rng = np.random.default_rng(0)
    n = 20
    for label, k in _kernels(model, target):
        lv = target.levels(n, model.d)
        hi = lv if len(lv) == model.d else np.full(model.d, lv[0])
        states = rng.integers(0, hi, size=(10_000, model.d))
        dists = np.array([k.at_state(z, n) for z in states[:2000]])
        assert dists.min() > 0, label
        np.testing.assert_allclose(dists.sum(axis=1), 1.0, atol=1e-12)


def _kernels(model, target, eps=0.05):
    out = [("plain", kernel_plain(model)), ("subsolution", kernel_subsolution(model, build_for(model, target, eps)))]
    if model.kind == "tandem":
        out.append(("standard", kernel_standard_heuristic(model)))
    return out


def test_plain_episode_has_zero_lr(tandem2):
    k = kernel_plain(tandem2)
    for r in range(20):
        res = run_episode(tandem2, TOTAL, 5, k, ReplicationStream(1, r))
        assert res.log_lr == 0.0


def test_uniformized_first_service_ends_episode(tandem2):
    k = kernel_plain(tandem2)
    # find a replication whose first draw is a service
    for r in range(50):
        u = ReplicationStream(3, r).uniform()
        if u >= tandem2.theta[0]:
            res = run_episode(tandem2, TOTAL, 5, k, ReplicationStream(3, r), start="uniformized")
            assert (res.hit, res.steps, res.terminal) == (False, 1, (0, 0))
            return
    pytest.fail("no service draw found")


def test_uniformized_n1_arrival(tandem2):
    k = kernel_subsolution(tandem2, build_for(tandem2, TOTAL, 0.02))
    q = k.at_state((0, 0), 1)
    for r in range(50):
        if ReplicationStream(2, r).uniform() < q[0]:
            res = run_episode(tandem2, TOTAL, 1, k, ReplicationStream(2, r), start="uniformized")
            assert res.hit and res.steps == 1
            assert res.log_lr == pytest.approx(math.log(tandem2.theta[0] / q[0]), abs=1e-14)
            return
    pytest.fail("no arrival draw found")


def test_arrival_start_n1_always_hits(tandem2):
    res = run_episode(tandem2, TOTAL, 1, kernel_plain(tandem2), ReplicationStream(0, 0))
    assert res.hit and res.steps == 1 and res.log_lr == 0.0


@pytest.mark.parametrize("start", ["arrival", "uniformized"])
@pytest.mark.parametrize("name, model, target", families())
def test_python_and_compiled_paths_agree(name, model, target, start):
    n = 8
    for label, k in _kernels(model, target):
        hit, log_lr, steps = simulate(model, target, n, k, 0, 40, 99, start=start)
        for r in range(40):
            ref = run_episode(model, target, n, k, ReplicationStream(99, r), start=start)
            assert (bool(hit[r]), int(steps[r])) == (ref.hit, ref.steps), (label, r)
            assert log_lr[r] == pytest.approx(ref.log_lr, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("name, model, target", families())
def test_likelihood_ratio_replay(name, model, target):
    k = kernel_subsolution(model, build_for(model, target, 0.05))
    for r in range(30):
        res = run_episode(model, target, 10, k, ReplicationStream(4, r), record=True)
        assert len(res.events) == res.steps
        ratio = replay_likelihood_ratio(model, k, 10, res.events)
        assert ratio == pytest.approx(math.exp(res.log_lr), rel=1e-12)


def test_chunking_does_not_change_results(feedback8):
    k = kernel_subsolution(feedback8, build_for(feedback8, TOTAL, 0.02))
    whole = simulate(feedback8, TOTAL, 10, k, 0, 100, 5)
    parts = [simulate(feedback8, TOTAL, 10, k, a, b, 5) for a, b in [(0, 37), (37, 63)]]
    for w, p0, p1 in zip(whole, *parts):
        np.testing.assert_array_equal(w, np.concatenate([p0, p1]))


def test_estimate_is_deterministic(tandem2):
    k = kernel_subsolution(tandem2, build_for(tandem2, TOTAL, 0.02))
    a = estimate(tandem2, TOTAL, 10, k, 20000, seed=17, workers=1)
    b = estimate(tandem2, TOTAL, 10, k, 20000, seed=17, workers=2)
    c = estimate(tandem2, TOTAL, 10, k, 20000, seed=17)
    assert a == b == c
    assert estimate(tandem2, TOTAL, 10, k, 20000, seed=18) != a


def test_plain_estimator_moments(tandem2):
    s = estimate(tandem2, TOTAL, 4, kernel_plain(tandem2), 5000, seed=1)
    assert s.mean == s.hit_count / s.replications
    assert s.second_moment == s.mean
    assert s.ci95_low < s.mean < s.ci95_high
    assert s.empirical_decay_rate == pytest.approx(-math.log(s.mean) / 4)


def test_plain_n1_frequency(tandem2):
    s = estimate(tandem2, TOTAL, 1, kernel_plain(tandem2), 20000, seed=2, start="uniformized")
    lam = tandem2.theta[0]
    assert abs(s.mean - lam) < 4 * math.sqrt(lam * (1 - lam) / 20000)
    assert estimate(tandem2, TOTAL, 1, kernel_plain(tandem2), 100, seed=2).mean == 1.0


def test_zero_hits_reported(tandem2):
    s = estimate(tandem2, TOTAL, 20, kernel_plain(tandem2), 1000, seed=1)
    assert s.hit_count == 0 and s.mean == 0.0
    assert s.empirical_decay_rate is None
    assert s.to_dict()["relative_error"] is None


def test_step_cap(tandem2):
    k = kernel_plain(tandem2)
    with pytest.raises(StepCapExceeded):
        estimate(tandem2, TOTAL, 50, k, 200, seed=1, step_cap=3)
    with pytest.raises(StepCapExceeded):
        for r in range(200):
            run_episode(tandem2, TOTAL, 50, k, ReplicationStream(1, r), step_cap=3)


def test_moments_merge_is_associative():
    rng = np.random.default_rng(0)
    parts = [Moments.from_values(rng.random(10), 3, 30) for _ in range(3)]
    a = parts[0].merge(parts[1]).merge(parts[2])
    b = parts[0].merge(parts[1].merge(parts[2]))
    assert a.count == b.count == 30
    assert a.total == pytest.approx(b.total) and a.total_sq == pytest.approx(b.total_sq)


def test_mismatched_kernel_rejected(tandem2, tandem4):
    with pytest.raises(ValueError):
        simulate(tandem2, TOTAL, 5, kernel_plain(tandem4), 0, 10, 1)


def test_importance_sampling_small_n(tandem2):
    k = kernel_subsolution(tandem2, build_for(tandem2, TOTAL, 0.05))
    s = estimate(tandem2, TOTAL, 6, k, 20000, seed=8)
    exact = exact_probability(tandem2, TOTAL, 6)
    assert abs(s.mean - exact) < 4 * s.std_err


@pytest.mark.parametrize("mu", [[0.45, 0.45], [0.5, 0.4, 0.45]])
def test_standard_heuristic_boundary_loop_has_infinite_second_moment(mu):
    # a blocked event repeated k times contributes (theta^2 / theta_bar)^k to
    # E_Q[LR^2]; a factor above 1 makes the second moment diverge
    m = build_tandem(len(mu), 0.1, mu)
    k = kernel_standard_heuristic(m)(np.zeros(m.d))
    factors = m.theta[1:] ** 2 / k[1:]
    assert factors.max() > 1
