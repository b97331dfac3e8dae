"""
Harsanyi aggregation of several objectives that share dynamics but have their own
rewards and discounts, and the propagation of aggregation weights along histories.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np

from errors import IndexMismatchError, SensitivityError, ZeroWeightSumError
from generalized_mdp import GeneralizedMDP, return_of_trajectory

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Objective:
    name: str
    mdp: GeneralizedMDP


@dataclass(frozen=True, eq=False)
class ObjectiveSet:
    """Objectives over identical states, actions and transition kernel."""
    objectives: tuple

    def __post_init__(self):
        objectives = tuple(self.objectives)
        if not objectives:
            raise IndexMismatchError("an objective set needs at least one objective")
        first = objectives[0].mdp
        for obj in objectives[1:]:
            if obj.mdp.transition.shape != first.transition.shape or \
                    not np.array_equal(obj.mdp.transition, first.transition):
                raise IndexMismatchError(f"objective '{obj.name}' does not share the transition kernel")
        names = [obj.name for obj in objectives]
        if len(set(names)) != len(names):
            raise IndexMismatchError(f"duplicate objective names: {names}")
        object.__setattr__(self, "objectives", objectives)
        rewards = np.stack([obj.mdp.reward for obj in objectives])
        discounts = np.stack([obj.mdp.discount for obj in objectives])
        rewards.setflags(write=False)
        discounts.setflags(write=False)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "discounts", discounts)

    def __len__(self):
        return len(self.objectives)

    def __iter__(self):
        return iter(self.objectives)

    def __getitem__(self, i):
        return self.objectives[i]

    @property
    def names(self):
        return [obj.name for obj in self.objectives]

    @property
    def mdp(self):
        """The shared dynamics (first objective's model)."""
        return self.objectives[0].mdp

    def index(self, name):
        return self.names.index(name)

    def returns(self, trajectory):
        """Per-objective discounted returns of one trajectory."""
        return np.array([return_of_trajectory(obj.mdp, trajectory) for obj in self.objectives])


@dataclass(frozen=True)
class WeightState:
    """
    Aggregation weights w, accumulated factors y and the Harsanyi constant c.
    The weights that multiply objective values are w * y.
    """
    weights: tuple
    factors: tuple
    constant: float = 0.0
    step_index: int = 0

    def __post_init__(self):
        weights = tuple(float(w) for w in self.weights)
        factors = tuple(float(y) for y in self.factors)
        if len(weights) != len(factors):
            raise IndexMismatchError(f"{len(weights)} weights but {len(factors)} factors")
        if not all(np.isfinite(weights)) or not all(np.isfinite(factors)):
            raise ValueError("weights and factors must be finite")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "factors", factors)

    @classmethod
    def initial(cls, weights, constant=0.0):
        """Fresh state with all factors at 1. At least one weight must be nonzero."""
        weights = tuple(float(w) for w in weights)
        if not any(weights):
            raise SensitivityError("at least one aggregation weight must be nonzero")
        return cls(weights, (1.0,) * len(weights), float(constant), 0)

    @property
    def effective_weights(self):
        return np.asarray(self.weights) * np.asarray(self.factors)

    def with_weights(self, weights):
        return replace(self, weights=tuple(weights))

    def with_factors(self, factors):
        return replace(self, factors=tuple(factors))


@dataclass(frozen=True)
class GammaSigmaStrategy:
    """How the aggregate discount is chosen: "max", "const" (with value) or "normalize"."""
    tag: str = "max"
    value: float = None

    def __post_init__(self):
        if self.tag not in ("max", "const", "normalize"):
            raise ValueError(f"unknown gamma_sigma strategy '{self.tag}'")
        if self.tag == "const" and (self.value is None or not self.value > 0):
            raise ValueError("constant gamma_sigma must be > 0")

    @classmethod
    def parse(cls, text):
        text = text.strip()
        if text.startswith("const:"):
            try:
                return cls("const", float(text[len("const:"):]))
            except ValueError:
                raise ValueError(f"bad constant in gamma_sigma '{text}'") from None
        return cls(text)

    def __str__(self):
        if self.tag == "const":
            return f"const:{self.value:g}"
        return self.tag


def _check_aligned(ws, values):
    if len(values) != len(ws.weights):
        raise IndexMismatchError(f"{len(values)} values for {len(ws.weights)} weights")


def harsanyi_value(ws, values):
    """c + sum_i w_i v_i."""
    _check_aligned(ws, values)
    return float(ws.constant + np.dot(ws.effective_weights, np.asarray(values, dtype=float)))


def propagate_weights(ws, s, a, objs):
    """w_i <- w_i * gamma_i(s, a); factors, constant and step index untouched."""
    _check_aligned(ws, objs.objectives)
    return ws.with_weights(np.asarray(ws.weights) * objs.discounts[:, s, a])


def gamma_sigma(strategy, ws, s, a, objs):
    gammas = objs.discounts[:, s, a]
    if strategy.tag == "max":
        return float(gammas.max())
    if strategy.tag == "const":
        return float(strategy.value)
    weights = ws.effective_weights
    total = weights.sum()
    if total == 0.0:
        raise ZeroWeightSumError("weight-normalizing gamma_sigma with zero weight sum")
    return float(np.dot(weights, gammas) / total)


def gamma_sigma_table(strategy, ws, objs):
    mdp = objs.mdp
    return np.array([[gamma_sigma(strategy, ws, s, a, objs) for a in range(mdp.n_actions)]
                     for s in range(mdp.n_states)])


def aggregate_trajectory_value(objs, ws, trajectory):
    """c + sum_i w_i V_i(trajectory)."""
    return harsanyi_value(ws, objs.returns(trajectory))


def markovian_scalarization(objs, ws, strategy):
    """
    Single objective with reward sum_i w_i r_i and discount gamma_sigma.
    This is the Markovian aggregate that cannot track diverse discounts; planners
    use it as the inconsistent baseline.
    """
    reward = np.tensordot(ws.effective_weights, objs.rewards, axes=1)
    discount = gamma_sigma_table(strategy, ws, objs)
    logger.debug(f"[aggregation] markovian scalarization with gamma_sigma={strategy}")
    mdp = objs.mdp.with_reward(reward).with_discount(discount)
    return ObjectiveSet((Objective("markovian", mdp),))
