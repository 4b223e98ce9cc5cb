"""Importance-sampling kernels and the seeded episode/estimator machinery.

Every replication ``r`` draws its uniforms from a counter-based stream keyed
by ``(seed, r)``, so a replication can be replayed in isolation and the
estimate does not depend on how replications are spread over threads.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numba
import numpy as np
from numba import njit, prange
from scipy.special import softmax

from .hamiltonian import boundary_change_of_measure, saddle_change_of_measure
from .network import FEEDBACK, TANDEM, TOTAL_POPULATION, NetworkModel, TargetSet
from .oracle import ARRIVAL_START, check_start
from .subsolution import SubsolutionSpec

# prefer OpenMP; an outdated TBB otherwise triggers a warning on first launch
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

DEFAULT_STEP_CAP = 10_000_000
CHUNK = 8192

_G1 = np.uint64(0x9E3779B97F4A7C15)
_G2 = np.uint64(0xD1B54A32D192ED03)
_SALT = np.uint64(0x5851F42D4C957F2D)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0


class StepCapExceeded(RuntimeError):
    """An episode ran past the step cap; the kernel is almost surely wrong."""


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def replication_key(seed, replication):
    # explicit casts: int64 mixed with uint64 would silently promote to float
    seed, replication = np.uint64(seed), np.uint64(replication)
    return _mix64(_mix64(seed ^ _SALT) + (replication + _ONE) * _G2)


@njit(cache=True, inline="always")
def counter_uniform(key, counter):
    """The ``counter``-th uniform in [0, 1) of the stream ``key``."""
    key, counter = np.uint64(key), np.uint64(counter)
    return float(_mix64(key + (counter + _ONE) * _G1) >> _S11) * _INV53


class ReplicationStream:
    """Uniform stream of one replication, reproducible from (seed, replication)."""

    def __init__(self, seed: int, replication: int = 0):
        self.seed = int(seed)
        self.replication = int(replication)
        self.key = np.uint64(replication_key(np.uint64(self.seed), np.uint64(self.replication)))
        self.counter = 0

    def uniform(self) -> float:
        u = counter_uniform(self.key, np.uint64(self.counter))
        self.counter += 1
        return u


# ---------------------------------------------------------------------------
# kernels

CLASS_NONE = 0
CLASS_FEEDBACK = 1


@dataclass(frozen=True, eq=False)
class ISKernel:
    """State-dependent mixture ``sum_k rho_k(x) components[c, k]``.

    ``rho`` is the softmax of ``-(<r_k, x> + c_k)/eps`` and ``c`` the boundary
    class of the state (always 0 unless ``classes == CLASS_FEEDBACK``, where
    1 means node 1 empty and 2 means node 2 empty, the origin included).
    Constant kernels are the one-piece case.
    """

    label: str
    gradients: np.ndarray
    offsets: np.ndarray
    eps: float
    components: np.ndarray
    classes: int = CLASS_NONE

    @property
    def n_pieces(self) -> int:
        return self.gradients.shape[0]

    def classify(self, z) -> int:
        if self.classes == CLASS_NONE:
            return 0
        if z[1] == 0:
            return 2
        if z[0] == 0:
            return 1
        return 0

    def weights(self, x) -> np.ndarray:
        a = -(self.gradients @ np.asarray(x, dtype=float) + self.offsets) / self.eps
        return softmax(a)

    def __call__(self, x, boundary: int = 0) -> np.ndarray:
        """Event distribution at scaled state x with boundary class ``boundary``."""
        return self.weights(x) @ self.components[boundary]

    def at_state(self, z, n: int) -> np.ndarray:
        z = np.asarray(z)
        return self(z / n, self.classify(z))


def _constant_kernel(label: str, model: NetworkModel, dist) -> ISKernel:
    comps = np.asarray(dist, dtype=float).reshape(1, 1, model.n_events)
    return ISKernel(label, np.zeros((1, model.d)), np.zeros(1), 1.0, comps)


def kernel_plain(model: NetworkModel) -> ISKernel:
    return _constant_kernel("plain", model, model.theta)


def kernel_standard_heuristic(model: NetworkModel) -> ISKernel:
    """Static kernel swapping the arrival rate with the smallest service rate.

    Ties go to the highest-index bottleneck, which makes the kernel equal to
    the saddle point of the steepest affine piece.
    """
    if model.kind != TANDEM:
        raise ValueError("the standard heuristic is only defined for tandem networks")
    theta = np.array(model.theta)
    mu = theta[1:]
    j = 1 + int(np.flatnonzero(mu == mu.min())[-1])
    theta[0], theta[j] = theta[j], theta[0]
    return _constant_kernel("standard", model, theta)


def kernel_subsolution(model: NetworkModel, spec: SubsolutionSpec) -> ISKernel:
    if spec.gradients.shape[1] != model.d:
        raise ValueError("subsolution dimension does not match the model")
    interior = np.array([saddle_change_of_measure(model, r) for r in spec.gradients])
    if model.kind == FEEDBACK:
        comps = np.stack([
            interior,
            np.array([boundary_change_of_measure(model, 1, r) for r in spec.gradients]),
            np.array([boundary_change_of_measure(model, 2, r) for r in spec.gradients]),
        ])
        classes = CLASS_FEEDBACK
    else:
        comps = interior[None, :, :]
        classes = CLASS_NONE
    return ISKernel("subsolution", spec.gradients, spec.offsets, spec.eps, comps, classes)


# ---------------------------------------------------------------------------
# episodes


@dataclass
class EpisodeResult:
    hit: bool
    log_lr: float
    steps: int
    terminal: tuple
    events: list | None = None


def run_episode(model: NetworkModel, target: TargetSet, n: int, kernel: ISKernel,
                rng_stream: ReplicationStream, step_cap: int = DEFAULT_STEP_CAP,
                record: bool = False, start: str = ARRIVAL_START) -> EpisodeResult:
    """Reference (pure Python) episode from the empty state.

    With ``start="arrival"`` the first transition is the arrival that the
    network must make from the empty state; it carries no likelihood factor
    and is recorded as event 0.  With ``start="uniformized"`` the first event
    is drawn from the kernel at the origin and a blocked service ends the
    episode as a return to 0.
    """
    check_start(start)
    if n < 1:
        raise ValueError("scale n must be >= 1")
    levels = target.levels(n, model.d)
    total = target.kind == TOTAL_POPULATION
    z = np.zeros(model.d, dtype=np.int64)
    log_lr = 0.0
    trace = [] if record else None
    k0 = 0
    if start == ARRIVAL_START:
        z[0] = 1
        k0 = 1
        if record:
            trace.append(0)
        if target.hit(z, n):
            return EpisodeResult(True, 0.0, 1, tuple(int(v) for v in z), trace)
    for k in range(k0 + 1, step_cap + 1):
        dist = kernel.at_state(z, n)
        u = rng_stream.uniform()
        cum = 0.0
        e = model.n_events - 1
        for j in range(model.n_events):
            cum += dist[j]
            if u < cum:
                e = j
                break
        log_lr += model.log_theta[e] - math.log(dist[e])
        if record:
            trace.append(e)
        c = model.blocked[e]
        if c < 0 or z[c] > 0:
            z = z + model.events[e]
        hit = z.sum() >= levels[0] if total else bool(np.any(z >= levels))
        if hit or not z.any():
            return EpisodeResult(bool(hit), log_lr, k, tuple(int(v) for v in z), trace)
    raise StepCapExceeded(f"episode exceeded {step_cap} steps")


@njit(cache=True)
def _episode(key, events, event_sum, blocked, log_theta, grads, offsets, eps, comps,
             feedback_classes, total_target, levels, n, step_cap, arrival_start):
    d = events.shape[1]
    m = events.shape[0]
    kpieces = grads.shape[0]
    z = np.zeros(d, dtype=np.int64)
    a = np.empty(kpieces)
    dist = np.empty(m)
    s = 0
    log_lr = 0.0
    inv = 1.0 / (n * eps)
    one_piece = kpieces == 1
    k0 = 0
    if arrival_start:
        # forced first arrival, identical under both measures
        z[0] = 1
        s = 1
        k0 = 1
        if total_target:
            if s >= levels[0]:
                return True, 0.0, 1, 0
        elif z[0] >= levels[0]:
            return True, 0.0, 1, 0
    for k in range(k0 + 1, step_cap + 1):
        c = 0
        if feedback_classes:
            if z[1] == 0:
                c = 2
            elif z[0] == 0:
                c = 1
        if one_piece:
            for j in range(m):
                dist[j] = comps[c, 0, j]
        else:
            amax = -np.inf
            for q in range(kpieces):
                acc = 0.0
                for i in range(d):
                    acc += grads[q, i] * z[i]
                a[q] = -(acc * inv + offsets[q] / eps)
                if a[q] > amax:
                    amax = a[q]
            tot = 0.0
            for q in range(kpieces):
                a[q] = math.exp(a[q] - amax)
                tot += a[q]
            for j in range(m):
                acc = 0.0
                for q in range(kpieces):
                    acc += a[q] * comps[c, q, j]
                dist[j] = acc / tot
        u = counter_uniform(key, np.uint64(k - 1 - k0))
        cum = 0.0
        e = m - 1
        for j in range(m):
            cum += dist[j]
            if u < cum:
                e = j
                break
        log_lr += log_theta[e] - math.log(dist[e])
        b = blocked[e]
        if b < 0 or z[b] > 0:
            for i in range(d):
                z[i] += events[e, i]
            s += event_sum[e]
        if total_target:
            if s >= levels[0]:
                return True, log_lr, k, 0
        else:
            for i in range(d):
                if z[i] >= levels[i]:
                    return True, log_lr, k, 0
        if s == 0:
            return False, log_lr, k, 0
    return False, log_lr, step_cap, 1


@njit(parallel=True, cache=True)
def _run_batch(seed, first, count, events, event_sum, blocked, log_theta, grads, offsets,
               eps, comps, feedback_classes, total_target, levels, n, step_cap, arrival_start):
    hit = np.zeros(count, dtype=np.bool_)
    log_lr = np.zeros(count)
    steps = np.zeros(count, dtype=np.int64)
    status = np.zeros(count, dtype=np.int64)
    for j in prange(count):
        key = replication_key(seed, np.uint64(first + j))
        h, l, st, flag = _episode(key, events, event_sum, blocked, log_theta, grads, offsets,
                                  eps, comps, feedback_classes, total_target, levels, n, step_cap,
                                  arrival_start)
        hit[j] = h
        log_lr[j] = l
        steps[j] = st
        status[j] = flag
    return hit, log_lr, steps, status


def simulate(model: NetworkModel, target: TargetSet, n: int, kernel: ISKernel, first: int,
             count: int, seed: int, step_cap: int = DEFAULT_STEP_CAP, start: str = ARRIVAL_START):
    """Replications ``first .. first+count-1``: arrays (hit, log_lr, steps)."""
    check_start(start)
    if kernel.components.shape[-1] != model.n_events or kernel.gradients.shape[1] != model.d:
        raise ValueError("kernel does not match the model")
    if n < 1:
        raise ValueError("scale n must be >= 1")
    levels = target.levels(n, model.d)
    hit, log_lr, steps, status = _run_batch(
        np.uint64(seed), first, count, np.ascontiguousarray(model.events),
        model.events.sum(axis=1).astype(np.int64), np.array(model.blocked, dtype=np.int64),
        np.ascontiguousarray(model.log_theta), np.ascontiguousarray(kernel.gradients, dtype=float),
        np.ascontiguousarray(kernel.offsets, dtype=float), float(kernel.eps),
        np.ascontiguousarray(kernel.components, dtype=float), kernel.classes == CLASS_FEEDBACK,
        target.kind == TOTAL_POPULATION, levels, int(n), int(step_cap), start == ARRIVAL_START)
    if status.any():
        bad = first + int(np.flatnonzero(status)[0])
        raise StepCapExceeded(f"replication {bad} exceeded {step_cap} steps")
    return hit, log_lr, steps


# ---------------------------------------------------------------------------
# estimator


@dataclass(frozen=True)
class Moments:
    """Mergeable partial sums of estimator values."""

    count: int = 0
    total: float = 0.0
    total_sq: float = 0.0
    hits: int = 0
    steps: int = 0

    @classmethod
    def from_values(cls, values: np.ndarray, hits: int, steps: int) -> "Moments":
        return cls(len(values), float(np.sum(values)), float(np.sum(values * values)), hits, steps)

    def merge(self, other: "Moments") -> "Moments":
        return Moments(self.count + other.count, self.total + other.total,
                       self.total_sq + other.total_sq, self.hits + other.hits,
                       self.steps + other.steps)


@dataclass(frozen=True)
class EstimatorStats:
    n: int
    replications: int
    mean: float
    second_moment: float
    std_err: float
    ci95_low: float
    ci95_high: float
    empirical_decay_rate: float | None
    hit_count: int
    mean_steps: float

    @property
    def relative_error(self) -> float:
        return self.std_err / self.mean if self.mean > 0 else math.inf

    @classmethod
    def from_moments(cls, n: int, m: Moments) -> "EstimatorStats":
        mean = m.total / m.count
        m2 = m.total_sq / m.count
        se = math.sqrt(max(m2 - mean * mean, 0.0) / m.count)
        rate = -math.log(mean) / n if mean > 0 else None
        return cls(n, m.count, mean, m2, se, mean - 1.96 * se, mean + 1.96 * se, rate,
                   m.hits, m.steps / m.count)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["relative_error"] = self.relative_error if self.mean > 0 else None
        return out


def estimate(model: NetworkModel, target: TargetSet, n: int, kernel: ISKernel,
             replications: int, seed: int, workers: int | None = None,
             step_cap: int = DEFAULT_STEP_CAP, start: str = ARRIVAL_START) -> EstimatorStats:
    """Average of ``1{hit} * exp(log_lr)`` over ``replications`` episodes.

    Chunks of fixed size are reduced in index order, so the result depends on
    (model, target, n, kernel, replications, seed) only.
    """
    if replications < 2:
        raise ValueError("need at least two replications")
    if workers is not None:
        numba.set_num_threads(max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS)))
    acc = Moments()
    for first in range(0, replications, CHUNK):
        count = min(CHUNK, replications - first)
        hit, log_lr, steps = simulate(model, target, n, kernel, first, count, seed, step_cap, start)
        values = np.where(hit, np.exp(np.where(hit, log_lr, 0.0)), 0.0)
        acc = acc.merge(Moments.from_values(values, int(hit.sum()), int(steps.sum())))
    return EstimatorStats.from_moments(n, acc)


def replay_likelihood_ratio(model: NetworkModel, kernel: ISKernel, n: int, events,
                            start: str = ARRIVAL_START) -> float:
    """Recompute prod Theta[Y]/Theta_bar[Y|X] along a recorded event sequence."""
    z = np.zeros(model.d, dtype=np.int64)
    ratio = 1.0
    events = list(events)
    if start == ARRIVAL_START:
        z[0] = 1
        events = events[1:]
    for e in events:
        ratio *= model.theta[e] / kernel.at_state(z, n)[e]
        c = model.blocked[e]
        if c < 0 or z[c] > 0:
            z = z + model.events[e]
    return ratio
