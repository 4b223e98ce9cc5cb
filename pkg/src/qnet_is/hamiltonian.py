"""Interior and boundary Hamiltonians and their closed-form saddle points.

For a gradient ``p`` the saddle-point change of measure tilts each event
probability by ``exp(-<p, v>/2)``; the Hamiltonian is ``2 log`` of the
normalizer.  On a feedback boundary the exponent is dropped for the events
that are blocked there.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import logsumexp, xlogy

from .network import FEEDBACK, NetworkModel


def _as_gradient(model: NetworkModel, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (model.d,):
        raise ValueError(f"gradient must have length {model.d}, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("gradient must be finite")
    return p


def drift(model: NetworkModel, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.n_events,):
        raise ValueError(f"distribution must have {model.n_events} entries, got {theta.shape}")
    return theta @ model.events


def relative_entropy(theta, ref) -> float:
    """Relative entropy R(theta || ref), ``inf`` when theta is not << ref."""
    theta = np.asarray(theta, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if theta.shape != ref.shape:
        raise ValueError("distributions must share the same support")
    if np.any((theta > 0) & (ref <= 0)):
        return math.inf
    pos = theta > 0
    return float(np.sum(xlogy(theta[pos], theta[pos]) - xlogy(theta[pos], ref[pos])))


def _tilt_exponents(model: NetworkModel, p: np.ndarray, boundary: int | None) -> np.ndarray:
    expo = -0.5 * (model.events @ p)
    if boundary is not None:
        # events blocked on this boundary keep their original weight
        for j, c in enumerate(model.blocked):
            if c == boundary - 1:
                expo[j] = 0.0
    return model.log_theta + expo


def _check_boundary(model: NetworkModel, i: int) -> None:
    if model.kind != FEEDBACK:
        raise ValueError("boundary Hamiltonians are only defined for the feedback network")
    if i not in (1, 2):
        raise ValueError(f"boundary index must be 1 or 2, got {i}")


def saddle_change_of_measure(model: NetworkModel, p) -> np.ndarray:
    p = _as_gradient(model, p)
    logw = _tilt_exponents(model, p, None)
    return np.exp(logw - logsumexp(logw))


def hamiltonian(model: NetworkModel, p) -> float:
    p = _as_gradient(model, p)
    return -2.0 * float(logsumexp(_tilt_exponents(model, p, None)))


def boundary_change_of_measure(model: NetworkModel, i: int, p) -> np.ndarray:
    _check_boundary(model, i)
    p = _as_gradient(model, p)
    logw = _tilt_exponents(model, p, i)
    return np.exp(logw - logsumexp(logw))


def boundary_hamiltonian(model: NetworkModel, i: int, p) -> float:
    _check_boundary(model, i)
    p = _as_gradient(model, p)
    return -2.0 * float(logsumexp(_tilt_exponents(model, p, i)))


def saddle_objective(model: NetworkModel, p, theta) -> np.ndarray:
    """``<p, F(theta)> + 2 R(theta || Theta)``, vectorized over rows of theta."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    p = np.asarray(p, dtype=float)
    lin = theta @ (model.events @ p)
    ent = np.sum(xlogy(theta, theta) - theta * model.log_theta, axis=1)
    return lin + 2.0 * ent


def simplex_lattice(n_parts: int, resolution: int) -> np.ndarray:
    """Interior barycentric lattice points with spacing 1/resolution."""
    if resolution < n_parts:
        raise ValueError("resolution too small for an interior point")
    cuts = np.array(list(itertools.combinations(range(1, resolution), n_parts - 1)), dtype=np.int64)
    cuts = cuts.reshape(-1, n_parts - 1)
    edges = np.hstack([np.zeros((len(cuts), 1), np.int64), cuts,
                       np.full((len(cuts), 1), resolution, np.int64)])
    return np.diff(edges, axis=1) / resolution


def _round_to_lattice(theta: np.ndarray, resolution: int) -> np.ndarray:
    # largest-remainder rounding, every part kept >= 1
    m = len(theta)
    free = resolution - m
    target = theta * free
    k = np.floor(target).astype(np.int64)
    short = free - k.sum()
    order = np.argsort(-(target - k), kind="stable")
    k[order[:short]] += 1
    return (k + 1) / resolution


@dataclass(frozen=True)
class SaddleReport:
    numeric_inf: float
    analytic: float
    gap: float
    hamiltonian: float
    grid_error_bound: float
    resolution: int

    def to_dict(self) -> dict:
        return asdict(self)


def verify_saddle(model: NetworkModel, p, resolution: int = 40) -> SaddleReport:
    """Brute-force the variational formula for H(p) on a simplex grid.

    ``analytic`` is the objective evaluated at the closed-form minimizer and
    ``grid_error_bound`` is the objective excess of the lattice point nearest
    to that minimizer, which bounds the gap from above.
    """
    if resolution < 10:
        raise ValueError("resolution must be at least 10")
    p = _as_gradient(model, p)
    grid = simplex_lattice(model.n_events, resolution)
    numeric = float(np.min(saddle_objective(model, p, grid)))
    theta_star = saddle_change_of_measure(model, p)
    analytic = float(saddle_objective(model, p, theta_star)[0])
    h = hamiltonian(model, p)
    rounded = _round_to_lattice(theta_star, resolution)
    bound = float(saddle_objective(model, p, rounded)[0]) - h
    return SaddleReport(numeric, analytic, numeric - analytic, h, bound, resolution)
