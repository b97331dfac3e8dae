import numpy as np
import pytest

from aggregation import Objective, ObjectiveSet, WeightState
from generalized_mdp import GeneralizedMDP

WORK, PLAY = 0, 1


def peril_objectives():
    next_states = [[0, 0]]
    play = GeneralizedMDP.from_next_states(next_states, [[0.0, 0.5]], 0.5, ("s",), ("w", "p"))
    work = GeneralizedMDP.from_next_states(next_states, [[0.3, 0.0]], 0.9, ("s",), ("w", "p"))
    return ObjectiveSet((Objective("play", play), Objective("work", work)))


def random_mdp(rng, n_states, n_actions, deterministic=True, low=0.1, high=0.95, discount=None):
    if deterministic:
        transition = np.zeros((n_states, n_actions, n_states))
        targets = rng.integers(0, n_states, size=(n_states, n_actions))
        for s in range(n_states):
            for a in range(n_actions):
                transition[s, a, targets[s, a]] = 1.0
    else:
        transition = rng.random((n_states, n_actions, n_states)) + 0.05
        transition /= transition.sum(axis=2, keepdims=True)
    reward = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    if discount is None:
        discount = rng.uniform(low, high, size=(n_states, n_actions))
    return GeneralizedMDP(transition, reward, discount)


def random_objectives(rng, n_objectives=2, n_states=None, n_actions=None, deterministic=True,
                      equal_discounts=False, low=0.1, high=0.95):
    n_states = n_states or int(rng.integers(1, 4))
    n_actions = n_actions or int(rng.integers(1, 3))
    first = random_mdp(rng, n_states, n_actions, deterministic, low, high)
    objectives = [Objective("o0", first)]
    for i in range(1, n_objectives):
        reward = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
        discount = first.discount if equal_discounts else rng.uniform(low, high, size=(n_states, n_actions))
        objectives.append(Objective(f"o{i}", first.with_reward(reward).with_discount(discount)))
    return ObjectiveSet(tuple(objectives))


def random_actions(rng, n_actions, length):
    return [int(a) for a in rng.integers(0, n_actions, size=length)]


@pytest.fixture
def peril():
    return peril_objectives()


@pytest.fixture
def peril_ws():
    return WeightState.initial((1.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
