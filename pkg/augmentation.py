"""
State augmentations that make non-Markovian aggregate rewards Markovian.

The y-factor model carries one accumulated ratio per objective alongside the base
state, so the aggregate reward sum_i y_i w_i r_i with discount gamma_sigma
reproduces the weighted per-objective returns. The window counter lift turns a
"reward the trigger only after N-1 quiet steps" rule into an ordinary objective
over (state, counter) pairs.
"""

import logging
from dataclasses import dataclass

import numpy as np

from aggregation import Objective, ObjectiveSet, gamma_sigma
from errors import DivergenceError, IndexMismatchError, ZeroAggregateDiscountError
from generalized_mdp import GeneralizedMDP, TrajectorySpec, validate_mdp

logger = logging.getLogger(__name__)

UNDERFLOW = 1e-300
LOG_UNDERFLOW = float(np.log(UNDERFLOW))
MAX_AUGMENTED_STEPS = 200_000


@dataclass(frozen=True)
class AugmentedState:
    base: int
    y: tuple


def y_update(y, s, a, objs, strategy, ws):
    """y_i <- y_i * gamma_i(s, a) / gamma_sigma(s, a)."""
    if len(y) != len(objs):
        raise IndexMismatchError(f"{len(y)} factors for {len(objs)} objectives")
    g_sigma = gamma_sigma(strategy, ws.with_factors(y), s, a, objs)
    if g_sigma <= 0.0:
        raise ZeroAggregateDiscountError(f"gamma_sigma is {g_sigma} at ({s}, {a})")
    return tuple(np.asarray(y) * objs.discounts[:, s, a] / g_sigma)


@dataclass(frozen=True, eq=False)
class AugmentedMDP:
    """Lazily generated model over AugmentedState; nothing is cached."""
    objectives: ObjectiveSet
    weights: object
    strategy: object

    def initial_state(self, s):
        return AugmentedState(int(s), (1.0,) * len(self.objectives))

    def reward(self, state, a):
        y = np.asarray(state.y)
        return float(np.dot(y * np.asarray(self.weights.weights), self.objectives.rewards[:, state.base, a]))

    def discount(self, state, a):
        return gamma_sigma(self.strategy, self.weights.with_factors(state.y), state.base, a, self.objectives)

    def step(self, state, a):
        """Next factors, shared by every successor of (state, a)."""
        return y_update(state.y, state.base, a, self.objectives, self.strategy, self.weights)

    def transitions(self, state, a):
        """List of (probability, AugmentedState) successors."""
        y_next = self.step(state, a)
        row = self.objectives.mdp.transition[state.base, a]
        return [(float(row[s]), AugmentedState(int(s), y_next)) for s in np.nonzero(row)[0]]

    def trajectory_return(self, trajectory, max_steps=MAX_AUGMENTED_STEPS):
        """
        c plus the discounted sum of augmented rewards along a base trajectory.
        Infinite trajectories are stepped until every Gamma_sigma * y_i drops under
        the underflow guard. The factors are kept rescaled to a peak of 1 with the
        scale folded into log Gamma_sigma, so a small gamma_sigma cannot overflow y.
        """
        state = self.initial_state(trajectory.pair_at(0)[0])
        total, log_scale = 0.0, 0.0  # Gamma_sigma * y_i == exp(log_scale) * state.y[i]
        steps = len(trajectory.prefix) if trajectory.is_finite else max_steps
        for t in range(steps):
            s, a = trajectory.pair_at(t)
            state = AugmentedState(s, state.y)
            total += float(np.exp(log_scale)) * self.reward(state, a)
            y_next = np.asarray(self.step(state, a))
            peak = float(np.abs(y_next).max())
            if peak == 0.0:
                logger.debug(f"[augmented] every factor vanished after {t + 1} steps")
                break
            log_scale += float(np.log(self.discount(state, a)) + np.log(peak))
            state = AugmentedState(s, tuple(y_next / peak))
            if log_scale < LOG_UNDERFLOW:
                logger.debug(f"[augmented] underflow guard hit after {t + 1} steps")
                break
        else:
            if not trajectory.is_finite:
                raise DivergenceError(f"augmented return did not settle in {max_steps} steps")
        return float(self.weights.constant + total)


def build_augmented_mdp(objs, ws, strategy):
    report = validate_mdp(objs.mdp)
    if not report.valid:
        raise ValueError("; ".join(report.violations))
    if len(ws.weights) != len(objs):
        raise IndexMismatchError(f"{len(ws.weights)} weights for {len(objs)} objectives")
    return AugmentedMDP(objs, ws, strategy)


# window counter lift

@dataclass(frozen=True)
class WindowCounterObjective:
    """
    Pays `reward` for the trigger action only when no trigger happened in the
    previous n-1 steps. The counter starts saturated, so the very first trigger pays.
    """
    name: str
    n: int
    trigger: int
    reward: float
    discount: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("window length must be >= 1")
        if self.discount < 0:
            raise ValueError("window discount must be >= 0")

    def next_counter(self, c, a):
        return 0 if a == self.trigger else min(c + 1, self.n - 1)

    def step_rewards(self, actions):
        """Direct rule over a raw action sequence, without a counter."""
        out = []
        for t, a in enumerate(actions):
            quiet = all(b != self.trigger for b in actions[max(0, t - self.n + 1):t])
            out.append(self.reward if a == self.trigger and quiet else 0.0)
        return out


@dataclass(frozen=True, eq=False)
class CounterLift:
    """Objectives over base state x counter; lifted index is s * n + c."""
    objectives: ObjectiveSet
    base: ObjectiveSet
    window: WindowCounterObjective
    position: int

    @property
    def n(self):
        return self.window.n

    def lift_state(self, s, c=None):
        return int(s) * self.n + (self.n - 1 if c is None else int(c))

    def base_state(self, lifted):
        return int(lifted) // self.n

    def counter(self, lifted):
        return int(lifted) % self.n

    def lift_trajectory(self, trajectory, start_counter=None):
        c = self.n - 1 if start_counter is None else start_counter
        prefix = []
        for s, a in trajectory.prefix:
            prefix.append((self.lift_state(s, c), a))
            c = self.window.next_counter(c, a)
        if not trajectory.cycle:
            return TrajectorySpec(tuple(prefix), ())
        # repeat the cycle until the counter at the cycle boundary recurs
        rounds, seen = [], {}
        while c not in seen:
            seen[c] = len(rounds)
            one_round = []
            for s, a in trajectory.cycle:
                one_round.append((self.lift_state(s, c), a))
                c = self.window.next_counter(c, a)
            rounds.append(one_round)
        first = seen[c]
        for one_round in rounds[:first]:
            prefix.extend(one_round)
        cycle = [pair for one_round in rounds[first:] for pair in one_round]
        return TrajectorySpec(tuple(prefix), tuple(cycle)).canonical()

    def project_trajectory(self, trajectory):
        prefix = tuple((self.base_state(s), a) for s, a in trajectory.prefix)
        cycle = tuple((self.base_state(s), a) for s, a in trajectory.cycle)
        return TrajectorySpec(prefix, cycle).canonical()


def lift_window_counter(window, base, position=None):
    """Lift every base objective unchanged and add the window objective at `position`."""
    mdp = base.mdp
    n, n_states, n_actions = window.n, mdp.n_states, mdp.n_actions
    size = n_states * n
    transition = np.zeros((size, n_actions, size))
    window_reward = np.zeros((size, n_actions))
    for s in range(n_states):
        for c in range(n):
            i = s * n + c
            for a in range(n_actions):
                c_next = window.next_counter(c, a)
                for s_next in np.nonzero(mdp.transition[s, a])[0]:
                    transition[i, a, s_next * n + c_next] = mdp.transition[s, a, s_next]
                if a == window.trigger and c >= n - 1:
                    window_reward[i, a] = window.reward
    state_names = tuple(f"{name}|{c}" for name in mdp.state_names for c in range(n))

    def lifted(table):
        return np.repeat(np.asarray(table), n, axis=0)

    objectives = [
        Objective(obj.name, GeneralizedMDP(transition, lifted(obj.mdp.reward), lifted(obj.mdp.discount),
                                           state_names, mdp.action_names))
        for obj in base
    ]
    window_obj = Objective(window.name, GeneralizedMDP(
        transition, window_reward, np.full((size, n_actions), float(window.discount)),
        state_names, mdp.action_names))
    position = len(objectives) if position is None else position
    objectives.insert(position, window_obj)
    logger.debug(f"[augmentation] lifted {n_states} states to {size} with window n={n}")
    return CounterLift(ObjectiveSet(tuple(objectives)), base, window, position)
