"""Embedded jump chains of tandem and feedback Jackson networks.

States are unscaled integer queue-length vectors.  Scaled states ``x = z / n``
only appear where kernels and subsolutions are evaluated.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

TANDEM = "tandem"
FEEDBACK = "feedback"
TOTAL_POPULATION = "total_population"
INDIVIDUAL_BUFFERS = "individual_buffers"

# slack used when turning B_i * n into an integer buffer level
_LATTICE_TOL = 1e-9


class ModelError(ValueError):
    """Raised for invalid or unstable network parameters."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class EventBasis:
    """Ordered event vectors ``v_0..v_m`` in ``Z^d``."""

    dimension: int
    events: np.ndarray

    @classmethod
    def tandem(cls, d: int) -> "EventBasis":
        ev = np.zeros((d + 1, d), dtype=np.int64)
        ev[0, 0] = 1
        for i in range(1, d + 1):
            ev[i, i - 1] = -1
            if i < d:
                ev[i, i] = 1
        return cls(d, _frozen(ev))

    @classmethod
    def feedback(cls) -> "EventBasis":
        ev = np.array([[1, 0], [-1, 1], [0, -1], [1, -1]], dtype=np.int64)
        return cls(2, _frozen(ev))

    def __len__(self) -> int:
        return self.events.shape[0]


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Immutable description of the embedded chain.

    ``theta`` is the normalized jump distribution over ``basis.events``;
    ``blocked[j]`` is the coordinate whose emptiness turns event ``j`` into a
    self-loop (``-1`` if never blocked).  ``rate_scale`` is the sum of the raw
    rates and is kept for reporting only.
    """

    kind: str
    basis: EventBasis
    theta: np.ndarray
    blocked: tuple[int, ...]
    raw_rates: tuple[float, ...]
    beta: float | None = None
    rate_scale: float = 1.0
    log_theta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "log_theta", _frozen(np.log(self.theta)))

    @property
    def d(self) -> int:
        return self.basis.dimension

    @property
    def events(self) -> np.ndarray:
        return self.basis.events

    @property
    def n_events(self) -> int:
        return len(self.basis)

    @property
    def lam(self) -> float:
        return float(self.theta[0])

    @property
    def mu(self) -> tuple[float, ...]:
        """Normalized service rates, one per node."""
        if self.kind == TANDEM:
            return tuple(float(t) for t in self.theta[1:])
        return (float(self.theta[1]), float(self.theta[2] + self.theta[3]))

    def describe(self) -> dict:
        out = {"kind": self.kind, "lam": self.raw_rates[0], "mu": list(self.raw_rates[1:])}
        if self.beta is not None:
            out["beta"] = self.beta
        return out

    def fingerprint(self) -> str:
        payload = {"kind": self.kind, "theta": [repr(float(t)) for t in self.theta]}
        return hashlib.sha256(json.dumps(payload).encode()).hexdigest()[:16]

    def __repr__(self) -> str:
        th = ", ".join(f"{t:.6g}" for t in self.theta)
        return f"NetworkModel({self.kind}, d={self.d}, theta=({th}))"


def build_tandem(d: int, lam: float, mu) -> NetworkModel:
    """d-node tandem network with Poisson(lam) arrivals and service rates mu."""
    mu = [float(m) for m in np.atleast_1d(mu)]
    if d < 1 or len(mu) != d:
        raise ModelError(f"need d >= 1 and {d} service rates, got {len(mu)}")
    rates = [float(lam)] + mu
    if any(not math.isfinite(r) or r <= 0 for r in rates):
        raise ModelError(f"all rates must be positive and finite, got {rates}")
    if not lam < min(mu):
        raise ModelError(f"unstable tandem: lam={lam} >= min(mu)={min(mu)}")
    scale = math.fsum(rates)
    theta = np.array(rates) / scale
    blocked = (-1,) + tuple(range(d))
    return NetworkModel(TANDEM, EventBasis.tandem(d), _frozen(theta), blocked,
                        tuple(rates), None, scale)


def build_feedback(lam: float, mu1: float, mu2: float, beta: float) -> NetworkModel:
    """Two-node network where a job leaving node 2 rejoins node 1 w.p. beta."""
    rates = [float(lam), float(mu1), float(mu2)]
    if any(not math.isfinite(r) or r <= 0 for r in rates):
        raise ModelError(f"all rates must be positive and finite, got {rates}")
    if not 0.0 < beta < 1.0:
        raise ModelError(f"feedback probability must lie in (0, 1), got {beta}")
    if not lam < min(mu1, mu2) * (1.0 - beta):
        raise ModelError(
            f"unstable feedback network: lam={lam} >= (1-beta)*min(mu)={min(mu1, mu2) * (1 - beta)}")
    scale = math.fsum(rates)
    theta = np.array([lam, mu1, (1.0 - beta) * mu2, beta * mu2]) / scale
    blocked = (-1, 0, 1, 1)
    return NetworkModel(FEEDBACK, EventBasis.feedback(), _frozen(theta), blocked,
                        tuple(rates), float(beta), scale)


def step(model: NetworkModel, z, event_index: int) -> tuple[int, ...]:
    """Apply event ``event_index`` at state z; blocked events leave z unchanged."""
    if not 0 <= event_index < model.n_events:
        raise IndexError(f"event index {event_index} out of range")
    z = tuple(int(c) for c in z)
    c = model.blocked[event_index]
    if c >= 0 and z[c] == 0:
        return z
    v = model.events[event_index]
    return tuple(zi + int(vi) for zi, vi in zip(z, v))


def net_drift(model: NetworkModel) -> np.ndarray:
    """Mean increment of the unconstrained walk under theta."""
    return model.theta @ model.events


@dataclass(frozen=True)
class TargetSet:
    """Scaled overflow set: total population >= 1, or some x_i >= B_i."""

    kind: str
    bounds: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind == TOTAL_POPULATION:
            if self.bounds is not None:
                raise ModelError("total population target takes no bounds")
        elif self.kind == INDIVIDUAL_BUFFERS:
            if not self.bounds or any(not b > 0 for b in self.bounds):
                raise ModelError(f"buffer bounds must be positive, got {self.bounds}")
            object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))
        else:
            raise ModelError(f"unknown target kind {self.kind!r}")

    @classmethod
    def total(cls) -> "TargetSet":
        return cls(TOTAL_POPULATION)

    @classmethod
    def buffers(cls, bounds) -> "TargetSet":
        return cls(INDIVIDUAL_BUFFERS, tuple(bounds))

    def levels(self, n: int, d: int) -> np.ndarray:
        """Integer levels defining nΓ on the lattice.

        total population: one entry, hit iff sum(z) >= n.
        individual buffers: hit iff z_i >= ceil(B_i n) for some i.
        """
        if self.kind == TOTAL_POPULATION:
            return np.array([n], dtype=np.int64)
        if len(self.bounds) != d:
            raise ModelError(f"target has {len(self.bounds)} bounds for a {d}-node model")
        return np.array([max(1, math.ceil(b * n - _LATTICE_TOL)) for b in self.bounds],
                        dtype=np.int64)

    def hit(self, z, n: int) -> bool:
        z = np.asarray(z)
        lv = self.levels(n, len(z))
        if self.kind == TOTAL_POPULATION:
            return int(z.sum()) >= lv[0]
        return bool(np.any(z >= lv))

    def describe(self) -> dict:
        out = {"kind": self.kind}
        if self.bounds is not None:
            out["bounds"] = list(self.bounds)
        return out


def in_target(target: TargetSet, x) -> bool:
    """Membership of a scaled state in Γ."""
    x = np.asarray(x, dtype=float)
    if target.kind == TOTAL_POPULATION:
        return bool(x.sum() >= 1.0 - _LATTICE_TOL)
    return bool(np.any(x >= np.asarray(target.bounds) - _LATTICE_TOL))


def analytic_decay_rate(model: NetworkModel, target: TargetSet) -> float:
    """Large-deviation rate lim -(1/n) log p_n for the supported problems."""
    lam = model.lam
    mu = model.mu
    if model.kind == TANDEM and target.kind == TOTAL_POPULATION:
        return math.log(min(mu) / lam)
    if model.kind == TANDEM and target.kind == INDIVIDUAL_BUFFERS:
        if len(target.bounds) != model.d:
            raise ModelError("bounds/dimension mismatch")
        return min(b * math.log(m / lam) for b, m in zip(target.bounds, mu))
    if model.kind == FEEDBACK and target.kind == TOTAL_POPULATION:
        return math.log((1.0 - model.beta) * min(mu) / lam)
    raise ModelError(f"no decay rate for {model.kind} network with {target.kind} target")
