"""Piecewise-affine subsolutions and their exponential-weighting mollification.

A subsolution is ``min_k <r_k, x> + c_k``; mollifying with parameter ``eps``
replaces the minimum by the soft-min ``-eps log sum exp(-(<r_k,x>+c_k)/eps)``
whose gradient is the softmax-weighted average of the ``r_k``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax
from scipy.stats import qmc

from .hamiltonian import boundary_hamiltonian, hamiltonian
from .network import (FEEDBACK, INDIVIDUAL_BUFFERS, TANDEM, TOTAL_POPULATION, ModelError,
                      NetworkModel, TargetSet, analytic_decay_rate)

TANDEM_TOTAL = "tandem_total"
TANDEM_BUFFERS = "tandem_buffers"
FEEDBACK_TOTAL = "feedback_total"


def auto_delta(eps: float) -> float:
    """``delta = -eps log eps``."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"automatic delta needs 0 < eps < 1, got {eps}")
    return -eps * math.log(eps)


def resolve_delta(eps: float, delta) -> float:
    if delta is None or delta == "auto":
        return auto_delta(eps)
    delta = float(delta)
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    return delta


def schedule(n: int) -> tuple[float, float]:
    """n-dependent parameters: eps_n = n^{-1/2}, delta_n = -eps_n log eps_n."""
    eps = 1.0 / math.sqrt(n)
    return eps, auto_delta(eps) if eps < 1.0 else 1.0


@dataclass(frozen=True, eq=False)
class AffinePiece:
    r: np.ndarray
    offset: float

    def __call__(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.r + self.offset


@dataclass(frozen=True, eq=False)
class SubsolutionSpec:
    """Affine pieces plus mollification parameters.

    ``neumann_coefficient`` is the constant ``C`` in the boundary slack floor
    ``-C exp(-delta/eps)`` that the construction guarantees on tandem faces.
    """

    gradients: np.ndarray
    offsets: np.ndarray
    gamma: float
    eps: float
    delta: float
    problem: str
    neumann_coefficient: float = 0.0
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        g = np.array(self.gradients, dtype=float)
        o = np.array(self.offsets, dtype=float)
        if g.ndim != 2 or o.shape != (g.shape[0],):
            raise ValueError("gradients must be (K, d) with K offsets")
        g.flags.writeable = False
        o.flags.writeable = False
        object.__setattr__(self, "gradients", g)
        object.__setattr__(self, "offsets", o)

    @property
    def n_pieces(self) -> int:
        return self.gradients.shape[0]

    @property
    def pieces(self) -> list[AffinePiece]:
        return [AffinePiece(r, float(c)) for r, c in zip(self.gradients, self.offsets)]

    def with_params(self, eps: float, delta: float, model: NetworkModel) -> "SubsolutionSpec":
        """Rebuild with new (eps, delta); offsets depend on delta."""
        return _BUILDERS[self.problem](model, eps, delta, **self.extras)

    def describe(self) -> dict:
        return {"problem": self.problem, "gamma": self.gamma, "eps": self.eps,
                "delta": self.delta, "gradients": self.gradients.tolist(),
                "offsets": self.offsets.tolist(), **self.extras}


def build_tandem_total(model: NetworkModel, eps: float, delta="auto") -> SubsolutionSpec:
    """d+1 pieces; piece k has slope -2γ on the first d+1-k coordinates."""
    if model.kind != TANDEM:
        raise ModelError("tandem construction needs a tandem model")
    delta = resolve_delta(eps, delta)
    d = model.d
    gamma = analytic_decay_rate(model, TargetSet.total())
    r = np.zeros((d + 1, d))
    for k in range(1, d + 1):
        r[k - 1, : d + 1 - k] = -2.0 * gamma
    offsets = 2.0 * gamma - delta * np.arange(1, d + 2)
    return SubsolutionSpec(r, offsets, gamma, float(eps), delta, TANDEM_TOTAL,
                           neumann_coefficient=2.0 * gamma)


def build_individual_buffer(model: NetworkModel, eps: float, delta="auto", bounds=None) -> SubsolutionSpec:
    """Three pieces for the two-node tandem with per-node buffers ``bounds``."""
    if model.kind != TANDEM or model.d != 2:
        raise ModelError("individual-buffer construction is only available for a two-node tandem")
    if bounds is None:
        raise ModelError("individual-buffer construction needs bounds")
    delta = resolve_delta(eps, delta)
    target = TargetSet.buffers(bounds)
    gamma = analytic_decay_rate(model, target)
    lam = model.lam
    mu1, mu2 = model.mu
    g1, g2 = math.log(mu1 / lam), math.log(mu2 / lam)
    if mu1 >= mu2:
        r1 = (-2.0 * g2, -2.0 * g2)
    else:
        r1 = (-2.0 * g1, -2.0 * g2)
    r = np.array([r1, (-2.0 * g1, 0.0), (0.0, 0.0)])
    offsets = 2.0 * gamma - delta * np.arange(1, 4)
    return SubsolutionSpec(r, offsets, gamma, float(eps), delta, TANDEM_BUFFERS,
                           neumann_coefficient=2.0 * max(g1, g2),
                           extras={"bounds": list(target.bounds)})


def feedback_tilt(model: NetworkModel) -> float:
    """Second-piece slope reduction ``a`` of the feedback construction."""
    lam, beta = model.lam, model.beta
    mu1, mu2 = model.mu
    if mu1 >= mu2:
        denom = mu1 + lam - (1.0 - beta) * mu2
    else:
        denom = lam + beta * mu1
    if not denom > 0 or not mu1 / denom > 1.0:
        raise ModelError(f"degenerate feedback parameters: a = log({mu1}/{denom}) <= 0")
    return math.log(mu1 / denom)


def build_feedback_total(model: NetworkModel, eps: float, delta="auto") -> SubsolutionSpec:
    if model.kind != FEEDBACK:
        raise ModelError("feedback construction needs a feedback model")
    delta = resolve_delta(eps, delta)
    gamma = analytic_decay_rate(model, TargetSet.total())
    a = feedback_tilt(model)
    r = np.array([[-2.0 * gamma, -2.0 * gamma],
                  [-2.0 * gamma, -2.0 * (gamma - a)],
                  [0.0, 0.0]])
    offsets = np.array([2.0 * gamma - delta,
                        2.0 * gamma - 2.0 * delta,
                        2.0 * gamma - (1.0 + 2.0 * gamma / a) * delta])
    return SubsolutionSpec(r, offsets, gamma, float(eps), delta, FEEDBACK_TOTAL,
                           extras={"a": a})


_BUILDERS = {
    TANDEM_TOTAL: build_tandem_total,
    TANDEM_BUFFERS: lambda m, e, dl, bounds=None, **_: build_individual_buffer(m, e, dl, bounds),
    FEEDBACK_TOTAL: lambda m, e, dl, **_: build_feedback_total(m, e, dl),
}


def build_for(model: NetworkModel, target: TargetSet, eps: float, delta="auto") -> SubsolutionSpec:
    """Pick the construction matching the model/target pair."""
    if model.kind == TANDEM and target.kind == TOTAL_POPULATION:
        return build_tandem_total(model, eps, delta)
    if model.kind == TANDEM and target.kind == INDIVIDUAL_BUFFERS:
        return build_individual_buffer(model, eps, delta, target.bounds)
    if model.kind == FEEDBACK and target.kind == TOTAL_POPULATION:
        return build_feedback_total(model, eps, delta)
    raise ModelError(f"no subsolution construction for {model.kind} with {target.kind}")


def _affine_values(spec: SubsolutionSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x @ spec.gradients.T + spec.offsets


def evaluate_piecewise(spec: SubsolutionSpec, x) -> np.ndarray | float:
    v = _affine_values(spec, x).min(axis=-1)
    return float(v) if np.ndim(v) == 0 else v


def mollified_value(spec: SubsolutionSpec, x) -> np.ndarray | float:
    h = _affine_values(spec, x)
    # shift by the minimum so that W_bar - W = eps log(sum) >= 0 holds exactly
    low = h.min(axis=-1, keepdims=True)
    v = low[..., 0] - spec.eps * np.log(np.exp(-(h - low) / spec.eps).sum(axis=-1))
    return float(v) if np.ndim(v) == 0 else v


def mollified_weights(spec: SubsolutionSpec, x) -> np.ndarray:
    return softmax(-_affine_values(spec, x) / spec.eps, axis=-1)


def mollified_gradient(spec: SubsolutionSpec, x) -> np.ndarray:
    return mollified_weights(spec, x) @ spec.gradients


# ---------------------------------------------------------------------------
# numerical verification of the subsolution inequalities


def _simplex_points(m: int, count: int, seed: int) -> np.ndarray:
    """Quasi-random points, uniform on the open probability simplex in R^m."""
    u = qmc.Halton(d=m, scramble=True, seed=seed).random(count)
    e = -np.log(np.clip(u, 1e-300, None))
    return e / e.sum(axis=1, keepdims=True)


def _region_samples(target: TargetSet, d: int, samples: int, boundary_points: int, seed: int):
    """Interior, exit-boundary and per-face sample points of the scaled domain."""
    faces = {}
    if target.kind == TOTAL_POPULATION:
        interior = _simplex_points(d + 1, samples, seed)[:, :d]
        interior = np.vstack([interior, np.full((1, d), 1.0 / (d + 1))])
        exit_pts = np.vstack([_simplex_points(d, samples, seed + 1), np.eye(d)])
        for i in range(d):
            if d == 1:
                face = np.zeros((1, 1))
            elif d == 2:
                t = np.linspace(0.0, 1.0, boundary_points + 1)[:-1]
                face = np.zeros((len(t), 2))
                face[:, 1 - i] = t
            else:
                inner = _simplex_points(d, boundary_points, seed + 2 + i)[:, : d - 1]
                face = np.insert(inner, i, 0.0, axis=1)
                face = np.vstack([np.zeros((1, d)), face])
            faces[i + 1] = face
    else:
        b = np.asarray(target.bounds)
        interior = qmc.Halton(d=d, scramble=True, seed=seed).random(samples) * b
        interior = np.vstack([interior, 0.5 * b[None, :]])
        t = np.linspace(0.0, 1.0, boundary_points + 1)
        pieces = []
        for i in range(d):
            pts = np.outer(t, b)
            pts[:, i] = b[i]
            pieces.append(pts)
        exit_pts = np.vstack(pieces)
        for i in range(d):
            pts = np.outer(t[:-1], b)
            pts[:, i] = 0.0
            faces[i + 1] = pts
    return interior, exit_pts, faces


@dataclass
class VerificationReport:
    problem: str
    gamma: float
    eps: float
    delta: float
    piece_hamiltonians: list
    min_piece_hamiltonian: float
    min_interior_hamiltonian: float
    min_interior_mixture: float
    max_exit_value: float
    value_at_origin: float
    weight_bound: float
    boundaries: dict
    ok: bool

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def verify_subsolution(spec: SubsolutionSpec, model: NetworkModel, target: TargetSet,
                       samples: int = 1000, seed: int = 0, boundary_points: int = 200,
                       tol: float = 1e-10) -> VerificationReport:
    """Check the subsolution inequalities on deterministic and sampled points.

    Violations are reported through ``ok`` and the per-boundary entries; this
    function never raises on a failed inequality.
    """
    d = model.d
    if spec.gradients.shape[1] != d:
        raise ValueError("subsolution dimension does not match the model")
    interior, exit_pts, faces = _region_samples(target, d, samples, boundary_points, seed)
    piece_h = [hamiltonian(model, r) for r in spec.gradients]
    grads = mollified_gradient(spec, interior)
    h_int = min(hamiltonian(model, g) for g in grads)
    mix_int = float(np.min(mollified_weights(spec, interior) @ np.array(piece_h)))
    max_exit = float(np.max(mollified_value(spec, exit_pts)))
    bound = math.exp(-spec.delta / spec.eps)
    ok = min(piece_h) >= -tol and h_int >= -tol and max_exit <= tol

    boundaries = {}
    for i, pts in faces.items():
        rho = mollified_weights(spec, pts)
        if model.kind == TANDEM:
            direction = -model.events[i]
            dots = spec.gradients @ direction
            slack = float(np.min(rho @ dots))
            floor = -spec.neumann_coefficient * bound
            bad = dots < -tol
            entry = {"min_neumann_slack": slack, "floor": floor,
                     "max_violating_weight": float(np.max(rho[:, bad].sum(axis=1))) if bad.any() else 0.0}
            ok = ok and slack >= floor - tol
        else:
            hb = np.array([boundary_hamiltonian(model, i, r) for r in spec.gradients])
            mix = float(np.min(rho @ hb))
            hdw = min(boundary_hamiltonian(model, i, g) for g in rho @ spec.gradients)
            c_bar = 2.0 * float(np.max(np.abs(hb)))
            floor = -c_bar * bound
            bad = hb < -tol
            entry = {"min_mixture": mix, "min_hamiltonian": hdw, "floor": floor, "c_bar": c_bar,
                     "piece_boundary_hamiltonians": hb.tolist(),
                     "max_violating_weight": float(np.max(rho[:, bad].sum(axis=1))) if bad.any() else 0.0}
            ok = ok and mix >= floor - tol and hdw >= mix - tol
        ok = ok and entry["max_violating_weight"] <= bound * (1 + 1e-9)
        boundaries[str(i)] = entry

    w0 = mollified_value(spec, np.zeros(d))
    return VerificationReport(spec.problem, spec.gamma, spec.eps, spec.delta, piece_h,
                              min(piece_h), h_int, mix_int, max_exit, w0, bound,
                              boundaries, bool(ok))
