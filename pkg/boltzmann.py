"""
Bradley-Terry / Luce stochastic choice and Boltzmann policies.

Non-normative extension: composing objectives by summing utilities and taking a
softmax is a practical choice, not something the aggregation results justify.
Nothing here feeds the value or eta tables.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from errors import IndexMismatchError
from planning import PlanConfig, action_utilities

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChoiceMass:
    """Positive mass per action and a shared temperature k."""
    masses: tuple
    k: float = 1.0

    def __post_init__(self):
        masses = tuple(float(m) for m in self.masses)
        if any(m <= 0 for m in masses):
            raise ValueError("choice masses must be positive")
        if self.k <= 0:
            raise ValueError("temperature must be positive")
        object.__setattr__(self, "masses", masses)


def bt_prob(mass, i, j):
    """Probability of choosing i over j."""
    if i == j:
        raise ValueError("pairwise choice needs two distinct actions")
    return mass.masses[i] / (mass.masses[i] + mass.masses[j])


def utilities_of(mass):
    return mass.k * np.log(np.asarray(mass.masses))


def softmax_policy(utilities, k):
    if k <= 0:
        raise ValueError("temperature must be positive")
    return softmax(np.asarray(utilities, dtype=float) / k)


def compose_utilities(utility_sets, weights):
    """sum_i w_i U_i, per action."""
    sets = [np.asarray(u, dtype=float) for u in utility_sets]
    if len(sets) != len(weights):
        raise IndexMismatchError(f"{len(sets)} utility sets for {len(weights)} weights")
    if len({u.shape for u in sets}) != 1:
        raise IndexMismatchError("utility sets cover different actions")
    return np.tensordot(np.asarray(weights, dtype=float), np.stack(sets), axes=1)


def product_of_masses(masses, weights, k):
    """prod_i masses_i ** (w_i / k), renormalized. Computed in log space."""
    if k <= 0:
        raise ValueError("temperature must be positive")
    logs = [np.log(np.asarray(m, dtype=float)) for m in masses]
    return softmax(compose_utilities(logs, weights) / k)


def sample_action(probs, rng):
    """Draw one action index with a caller-owned numpy Generator."""
    return int(rng.choice(len(probs), p=np.asarray(probs)))


def boltzmann_policy(objs, ws, start, k, cfg=None, tails=None):
    """Softmax over the weighted sum of per-objective utilities of each opening action."""
    utilities = action_utilities(objs, ws, start, cfg or PlanConfig(), tails)
    composed = compose_utilities(list(utilities.T), ws.effective_weights)
    logger.debug(f"[boltzmann] composed utilities {np.round(composed, 6).tolist()}")
    return softmax_policy(composed, k)
