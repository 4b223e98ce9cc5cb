"""Dynamic importance sampling for overflow probabilities in Jackson networks."""

from .network import (EventBasis, ModelError, NetworkModel, TargetSet, analytic_decay_rate,
                      build_feedback, build_tandem, in_target, step)
from .hamiltonian import (boundary_change_of_measure, boundary_hamiltonian, drift, hamiltonian,
                          relative_entropy, saddle_change_of_measure, verify_saddle)
from .subsolution import (SubsolutionSpec, build_feedback_total, build_for,
                          build_individual_buffer, build_tandem_total, evaluate_piecewise,
                          mollified_gradient, mollified_value, mollified_weights,
                          verify_subsolution)
from .sampler import (EstimatorStats, ISKernel, ReplicationStream, estimate, kernel_plain,
                      kernel_standard_heuristic, kernel_subsolution, run_episode)
from .oracle import exact_decay_rate, exact_probability, solve_exact

__version__ = "0.1.0"
