"""Random stable parameter sets shared by the property and acceptance tests."""

import numpy as np

from qnet_is import TargetSet, build_feedback, build_tandem


def random_tandem(rng, d):
    mu = rng.uniform(0.2, 1.0, size=d)
    lam = rng.uniform(0.1, 0.8) * mu.min()
    return build_tandem(d, lam, mu)


def random_buffers(rng):
    model = random_tandem(rng, 2)
    return model, TargetSet.buffers(rng.uniform(0.4, 1.0, size=2).round(3))


def random_feedback(rng):
    # keep a = log(mu1/denominator) away from 0 so the construction exists
    while True:
        mu1, mu2 = rng.uniform(0.2, 1.0, size=2)
        beta = rng.uniform(0.02, 0.5)
        lam = rng.uniform(0.05, 0.6) * min(mu1, mu2) * (1 - beta)
        denom = mu1 + lam - (1 - beta) * mu2 if mu1 >= mu2 else lam + beta * mu1
        if denom > 0 and mu1 / denom > 1.05:
            return build_feedback(lam, mu1, mu2, beta)


def families(seed=0):
    """One (name, model, target) per model family, at moderate parameters."""
    return [
        ("tandem d=2", build_tandem(2, 0.1, [0.45, 0.45]), TargetSet.total()),
        ("tandem d=3", build_tandem(3, 0.1, [0.5, 0.4, 0.45]), TargetSet.total()),
        ("buffers mu1>=mu2", build_tandem(2, 0.1, [0.5, 0.4]), TargetSet.buffers((0.9, 1.0))),
        ("buffers mu1<mu2", build_tandem(2, 0.05, [0.35, 0.6]), TargetSet.buffers((1.0, 0.6))),
        ("feedback mu1>=mu2", build_feedback(0.1, 0.5, 0.4, 0.1), TargetSet.total()),
        ("feedback mu1<mu2", build_feedback(0.1, 0.43, 0.47, 0.2), TargetSet.total()),
    ]
