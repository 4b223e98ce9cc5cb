"""Exact overflow probabilities by first-step analysis.

On the finite set of states outside nΓ, the probability q(z) of reaching nΓ
before the origin solves q(z) = sum_i Theta_i q(step(z, v_i)) with q = 1 on
nΓ and q(0) = 0.  Monotone fixed-point iteration from q = 0 converges to it.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .network import TOTAL_POPULATION, NetworkModel, TargetSet, analytic_decay_rate

DEFAULT_STATE_CAP = 5_000_000
DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 2_000_000
ARRIVAL_START = "arrival"
UNIFORMIZED_START = "uniformized"


def check_start(start: str) -> None:
    if start not in (ARRIVAL_START, UNIFORMIZED_START):
        raise ValueError(f"start must be {ARRIVAL_START!r} or {UNIFORMIZED_START!r}, got {start!r}")


class OracleError(RuntimeError):
    pass


class StateSpaceTooLarge(OracleError):
    def __init__(self, count: int, cap: int):
        super().__init__(f"{count} states exceed the cap of {cap}")
        self.count = count
        self.cap = cap


def state_count(model: NetworkModel, target: TargetSet, n: int) -> int:
    levels = target.levels(n, model.d)
    if target.kind == TOTAL_POPULATION:
        return math.comb(int(levels[0]) - 1 + model.d, model.d)
    return int(np.prod(levels))


def _simplex_states(d: int, top: int) -> np.ndarray:
    """All z in Z_+^d with sum(z) <= top, as rows."""
    states = np.zeros((1, 0), dtype=np.int64)
    rem = np.array([top], dtype=np.int64)
    for _ in range(d):
        reps = rem + 1
        states = np.repeat(states, reps, axis=0)
        vals = np.concatenate([np.arange(r) for r in reps])
        rem = np.repeat(rem, reps) - vals
        states = np.hstack([states, vals[:, None]])
    return states


@dataclass(frozen=True, eq=False)
class StateIndex:
    """Sorted lattice states with mixed-radix keys; index 0 is the origin."""

    states: np.ndarray
    radix: np.ndarray
    keys: np.ndarray

    @classmethod
    def build(cls, model: NetworkModel, target: TargetSet, n: int) -> "StateIndex":
        levels = target.levels(n, model.d)
        if target.kind == TOTAL_POPULATION:
            states = _simplex_states(model.d, int(levels[0]) - 1)
            radix = np.full(model.d, int(levels[0]), dtype=np.int64)
        else:
            grids = np.meshgrid(*[np.arange(lv) for lv in levels], indexing="ij")
            states = np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)
            radix = levels.astype(np.int64)
        weights = np.cumprod(np.concatenate([[1], radix[:-1]])).astype(np.int64)
        keys = states @ weights
        order = np.argsort(keys, kind="stable")
        return cls(states[order], weights, keys[order])

    def __len__(self) -> int:
        return len(self.states)

    def lookup(self, z: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.keys, z @ self.radix)


def transition_system(model: NetworkModel, target: TargetSet, n: int, index: StateIndex):
    """Substochastic matrix P among non-origin states and one-step hit mass b."""
    z = index.states
    size = len(index)
    rows, cols, vals = [], [], []
    b = np.zeros(size)
    levels = target.levels(n, model.d)
    for e in range(model.n_events):
        c = model.blocked[e]
        moves = np.ones(size, dtype=bool) if c < 0 else z[:, c] > 0
        nxt = z + np.where(moves[:, None], model.events[e][None, :], 0)
        if target.kind == TOTAL_POPULATION:
            hit = nxt.sum(axis=1) >= levels[0]
        else:
            hit = np.any(nxt >= levels[None, :], axis=1)
        b[hit] += model.theta[e]
        rest = ~hit
        dest = np.full(size, -1, dtype=np.int64)
        dest[rest] = index.lookup(nxt[rest])
        keep = rest & (dest > 0)
        rows.append(np.flatnonzero(keep))
        cols.append(dest[keep])
        vals.append(np.full(int(keep.sum()), model.theta[e]))
    P = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(size, size))
    # the origin is absorbing with value 0
    P = P[1:, 1:].tocsr()
    return P, b[1:]


@dataclass(frozen=True)
class ExactResult:
    p: float
    n: int
    states: int
    iterations: int
    seconds: float


def solve_exact(model: NetworkModel, target: TargetSet, n: int, tolerance: float = DEFAULT_TOL,
                state_cap: int = DEFAULT_STATE_CAP, max_iter: int = DEFAULT_MAX_ITER,
                check_monotone: bool = False, start: str = ARRIVAL_START) -> ExactResult:
    """Exact p_n with the sweep count and state-space size.

    ``start`` selects how the excursion leaves the empty state:
    ``"arrival"`` (jump chain of the network, the first move is an arrival)
    or ``"uniformized"`` (fictitious services at 0 count as a return).
    """
    check_start(start)
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    count = state_count(model, target, n)
    if count > state_cap:
        raise StateSpaceTooLarge(count, state_cap)
    t0 = time.perf_counter()
    index = StateIndex.build(model, target, n)
    P, b = transition_system(model, target, n, index)
    q = np.zeros(len(b))
    it = 0
    while len(q):
        it += 1
        nxt = P @ q + b
        if check_monotone and np.any(nxt < q):
            raise OracleError(f"iterates decreased at sweep {it}")
        diff = nxt - q
        q = nxt
        if np.all(q > 0) and float(np.max(diff / q)) < tolerance:
            break
        if it >= max_iter:
            raise OracleError(f"no convergence after {max_iter} sweeps")
    e1 = np.zeros(model.d, dtype=np.int64)
    e1[0] = 1
    q1 = 1.0 if target.hit(e1, n) else float(q[index.lookup(e1[None, :])[0] - 1])
    # from the origin only an arrival moves the chain; under the uniformized
    # convention the blocked services there end the excursion at once
    p = q1 if start == ARRIVAL_START else model.theta[0] * q1
    return ExactResult(float(p), n, count, it, time.perf_counter() - t0)


def exact_probability(model: NetworkModel, target: TargetSet, n: int,
                      tolerance: float = DEFAULT_TOL, **kwargs) -> float:
    return solve_exact(model, target, n, tolerance, **kwargs).p


@dataclass(frozen=True)
class DecayRate:
    empirical: float
    analytic: float


def exact_decay_rate(model: NetworkModel, target: TargetSet, n: int, **kwargs) -> DecayRate:
    p = exact_probability(model, target, n, **kwargs)
    return DecayRate(-math.log(p) / n, analytic_decay_rate(model, target))


class OracleCache:
    """JSON sidecar of exact values keyed by (model, target, n, tolerance)."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self._data = json.loads(self.path.read_text()) if self.path.exists() else {}

    @staticmethod
    def key(model: NetworkModel, target: TargetSet, n: int, tolerance: float,
            start: str = ARRIVAL_START) -> str:
        return json.dumps([model.fingerprint(), target.describe(), int(n), float(tolerance), start],
                          sort_keys=True)

    def get(self, model, target, n, tolerance=DEFAULT_TOL, start=ARRIVAL_START,
            **kwargs) -> ExactResult:
        k = self.key(model, target, n, tolerance, start)
        if k in self._data:
            return ExactResult(**self._data[k])
        res = solve_exact(model, target, n, tolerance, start=start, **kwargs)
        self._data[k] = asdict(res)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        tmp.write_text(json.dumps(self._data, indent=1, sort_keys=True))
        tmp.replace(self.path)
        return res
