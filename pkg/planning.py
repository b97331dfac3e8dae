"""
Exhaustive planners and oracles for small generalized MDPs:
stationary-policy enumeration, prefix+tail search over non-stationary plans,
myopic replanning, the stationary-distribution objective and an exact check of
when a Markovian aggregate discount can exist.
"""

import itertools
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np
from scipy import linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from aggregation import GammaSigmaStrategy, harsanyi_value, markovian_scalarization, propagate_weights
from errors import (DegenerateInstanceError, DivergenceError, DivergentCycleError, NoCandidateError,
                    NonUniqueStationaryError, PlannerCapError, SingularSystemError)
from generalized_mdp import (DEFAULT_TOL, GeneralizedMDP, StationaryDeterministic, TrajectorySpec,
                             evaluate_stationary)

logger = logging.getLogger(__name__)

DEFAULT_HORIZON = 10
DEFAULT_CYCLE_PERIOD = 12
ENUMERATION_CAP = 10 ** 6
NODE_CAP = 2_000_000


@dataclass(frozen=True)
class PlanConfig:
    """Search space of the prefix+tail planner. Ties go to the lowest first action, then the shorter prefix."""
    horizon: int = DEFAULT_HORIZON
    max_cycle_period: int = DEFAULT_CYCLE_PERIOD
    include_stationary: bool = True
    include_cycles: bool = True
    enumeration_cap: int = ENUMERATION_CAP
    node_cap: int = NODE_CAP
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.max_cycle_period < 1:
            raise ValueError("max_cycle_period must be >= 1")
        if not (self.include_stationary or self.include_cycles):
            raise ValueError("at least one tail family must be enabled")


class PlanResult(NamedTuple):
    trajectory: object  # TrajectorySpec, or PolicyTree under stochastic dynamics
    value: float


def _mdp_of(objs):
    return objs if isinstance(objs, GeneralizedMDP) else objs.mdp


def _next_states(mdp):
    return np.argmax(mdp.transition, axis=2)


def enumerate_stationary(objs, cap=ENUMERATION_CAP):
    """All deterministic stationary policies, lexicographic in the per-state actions."""
    mdp = _mdp_of(objs)
    count = mdp.n_actions ** mdp.n_states
    if count > cap:
        raise PlannerCapError(f"{count} stationary policies exceed the cap of {cap}")
    return [StationaryDeterministic(acts) for acts in itertools.product(range(mdp.n_actions), repeat=mdp.n_states)]


def policy_values(objs, policy):
    """(objectives, states) matrix of stationary values."""
    return np.stack([evaluate_stationary(obj.mdp, policy) for obj in objs])


def best_stationary(objs, ws, start, cap=ENUMERATION_CAP, tol=DEFAULT_TOL):
    best_policy, best_value = None, -np.inf
    for policy in enumerate_stationary(objs, cap):
        try:
            values = policy_values(objs, policy)[:, start]
        except (DivergenceError, SingularSystemError):
            logger.debug(f"[planner] skipping divergent policy {policy.actions}")
            continue
        value = harsanyi_value(ws, values)
        if value > best_value + tol:
            best_policy, best_value = policy, value
    if best_policy is None:
        raise NoCandidateError("no stationary policy has a finite value")
    return best_policy, best_value


# tail candidates

@dataclass(frozen=True, eq=False)
class TailCandidate:
    values: np.ndarray
    first_action: int
    trajectory: TrajectorySpec = None
    policy: StationaryDeterministic = None


@dataclass(frozen=True, eq=False)
class TailTable:
    """Weight-independent tails per start state, in tie-break order."""
    candidates: tuple
    matrices: tuple

    def best(self, s, multipliers, tol):
        scores = self.matrices[s] @ multipliers
        top = scores.max()
        idx = int(np.argmax(scores >= top - tol))
        return idx, float(scores[idx])

    def size(self):
        return sum(len(c) for c in self.candidates)


def _lassos_from(mdp, next_states, start, cap):
    """Trajectories of every stationary deterministic policy from `start`: simple paths closing on themselves."""
    found = []

    def walk(path, visited):
        u = next_states[path[-1][0], path[-1][1]] if path else start
        if u in visited:
            i = visited.index(u)
            found.append(TrajectorySpec(tuple(path[:i]), tuple(path[i:])))
            if len(found) > cap:
                raise PlannerCapError(f"more than {cap} stationary tails from state {start}")
            return
        for a in range(mdp.n_actions):
            walk(path + [(u, a)], visited + [u])

    walk([], [])
    return found


def _cycles_from(mdp, next_states, start, max_period):
    found = []

    def walk(path, u):
        if len(path) == max_period:
            return
        for a in range(mdp.n_actions):
            v = next_states[u, a]
            step = path + [(u, a)]
            if v == start:
                found.append(TrajectorySpec((), tuple(step)))
            walk(step, v)

    walk([], start)
    return found


def _sort_key(trajectory, horizon):
    return tuple(a for _, a in trajectory.unroll(horizon)), len(trajectory.prefix) + len(trajectory.cycle)


def build_tail_table(objs, cfg):
    mdp = objs.mdp
    candidates, matrices = [], []
    if mdp.is_deterministic:
        next_states = _next_states(mdp)
        horizon = mdp.n_states + cfg.max_cycle_period
        for s in range(mdp.n_states):
            raw = []
            if cfg.include_stationary:
                raw += _lassos_from(mdp, next_states, s, cfg.enumeration_cap)
            if cfg.include_cycles:
                raw += _cycles_from(mdp, next_states, s, cfg.max_cycle_period)
            unique = {}
            for trajectory in raw:
                unique.setdefault(trajectory.canonical(), None)
            rows = []
            for trajectory in sorted(unique, key=lambda tr: _sort_key(tr, horizon)):
                try:
                    values = objs.returns(trajectory)
                except DivergentCycleError:
                    continue
                rows.append(TailCandidate(values, trajectory.pair_at(0)[1], trajectory=trajectory))
            candidates.append(tuple(rows))
    else:
        policies = []
        for policy in enumerate_stationary(objs, cfg.enumeration_cap):
            try:
                policies.append((policy, policy_values(objs, policy)))
            except (DivergenceError, SingularSystemError):
                continue
        for s in range(mdp.n_states):
            ordered = sorted(policies, key=lambda pv: (pv[0].actions[s], pv[0].actions))
            candidates.append(tuple(TailCandidate(v[:, s], p.actions[s], policy=p) for p, v in ordered))
    for rows in candidates:
        matrix = np.array([row.values for row in rows]) if rows else np.zeros((0, len(objs)))
        matrix.setflags(write=False)
        matrices.append(matrix)
    table = TailTable(tuple(candidates), tuple(matrices))
    logger.debug(f"[planner] tail table with {table.size()} candidates over {mdp.n_states} states")
    return table


# search

class _Entry(NamedTuple):
    value: float
    first_action: int
    prefix_len: int
    rank: int
    choice: tuple


def _gamma_key(gammas):
    with np.errstate(divide="ignore"):
        return tuple(np.round(np.log(gammas), 9))


def _select(options, tol):
    top = max(o.value for o in options)
    near = [o for o in options if o.value >= top - tol]
    return min(near, key=lambda o: (o.first_action, o.prefix_len, o.rank))


class _Search:
    """Memoized backward recursion over (remaining depth, state, accumulated discounts)."""

    def __init__(self, objs, weights, cfg, tails):
        self.objs = objs
        self.mdp = objs.mdp
        self.weights = np.asarray(weights, dtype=float)
        self.cfg = cfg
        self.tails = tails
        self.memo = {}
        self.deterministic = self.mdp.is_deterministic
        self.next_states = _next_states(self.mdp)

    def node(self, depth, s, gammas):
        key = (depth, s, _gamma_key(gammas))
        if key in self.memo:
            return self.memo[key]
        if len(self.memo) >= self.cfg.node_cap:
            raise PlannerCapError(f"planner exceeded {self.cfg.node_cap} search nodes")
        multipliers = self.weights * gammas
        options = []
        if len(self.tails.candidates[s]):
            idx, value = self.tails.best(s, multipliers, self.cfg.tol)
            options.append(_Entry(value, self.tails.candidates[s][idx].first_action, 0, idx, ("tail", idx)))
        if depth > 0:
            for a in range(self.mdp.n_actions):
                continuation = self._continuation(depth, s, a, gammas)
                if continuation is None:
                    continue
                value, prefix_len = continuation
                value += float(multipliers @ self.objs.rewards[:, s, a])
                options.append(_Entry(value, a, prefix_len + 1, -1, ("act", a)))
        entry = _select(options, self.cfg.tol) if options else None
        self.memo[key] = entry
        return entry

    def _continuation(self, depth, s, a, gammas):
        child_gammas = gammas * self.objs.discounts[:, s, a]
        if self.deterministic:
            child = self.node(depth - 1, int(self.next_states[s, a]), child_gammas)
            return None if child is None else (child.value, child.prefix_len)
        total, longest = 0.0, 0
        row = self.mdp.transition[s, a]
        for s_next in np.nonzero(row)[0]:
            child = self.node(depth - 1, int(s_next), child_gammas)
            if child is None:
                return None
            total += row[s_next] * child.value
            longest = max(longest, child.prefix_len)
        return total, longest

    def trajectory(self, depth, s, gammas):
        """Follow the chosen options from a node; deterministic dynamics only."""
        pairs = []
        while True:
            entry = self.node(depth, s, gammas)
            if entry is None:
                raise NoCandidateError(f"no plan from state {s} at depth {depth}")
            kind, x = entry.choice
            if kind == "tail":
                tail = self.tails.candidates[s][x].trajectory
                return TrajectorySpec(tuple(pairs) + tail.prefix, tail.cycle)
            pairs.append((s, x))
            gammas = gammas * self.objs.discounts[:, s, x]
            s = int(self.next_states[s, x])
            depth -= 1

    def tree(self, depth, s, gammas):
        entry = self.node(depth, s, gammas)
        if entry is None:
            raise NoCandidateError(f"no plan from state {s} at depth {depth}")
        kind, x = entry.choice
        if kind == "tail":
            return PolicyTree(s, tail=self.tails.candidates[s][x].policy)
        child_gammas = gammas * self.objs.discounts[:, s, x]
        row = self.mdp.transition[s, x]
        children = tuple((int(s_next), float(row[s_next]), self.tree(depth - 1, int(s_next), child_gammas))
                         for s_next in np.nonzero(row)[0])
        return PolicyTree(s, action=x, children=children)


@dataclass(frozen=True)
class PolicyTree:
    """Expectimax plan: act and branch on the successor, or hand over to a stationary tail."""
    state: int
    action: int = None
    tail: StationaryDeterministic = None
    children: tuple = ()

    def first_action(self):
        return self.action if self.action is not None else self.tail.actions[self.state]

    def depth(self):
        if self.action is None:
            return 0
        return 1 + max(child.depth() for _, _, child in self.children)


def plan_prefix_tail(objs, ws, start, cfg=None, consistent=True, strategy=None, tails=None):
    """
    Best plan from `start`: an action prefix of length <= horizon followed by a tail.
    With consistent=True every objective keeps its own discounting, so the weights
    propagate implicitly. With consistent=False candidates are scored by the
    Markovian scalarization under the given gamma_sigma strategy instead.
    """
    cfg = cfg or PlanConfig()
    weights = ws.effective_weights
    if not consistent:
        objs = markovian_scalarization(objs, ws, strategy or GammaSigmaStrategy())
        weights = np.ones(1)
        tails = None
    if tails is None:
        tails = build_tail_table(objs, cfg)
    search = _Search(objs, weights, cfg, tails)
    gammas = np.ones(len(objs))
    root = search.node(cfg.horizon, int(start), gammas)
    if root is None:
        raise NoCandidateError(f"no candidate plan from state {start}")
    logger.debug(f"[planner] {len(search.memo)} nodes, best={root.value:.6g}")
    if search.deterministic:
        plan = search.trajectory(cfg.horizon, int(start), gammas).canonical()
    else:
        plan = search.tree(cfg.horizon, int(start), gammas)
    return PlanResult(plan, ws.constant + root.value)


def first_action(plan):
    if isinstance(plan, PolicyTree):
        return plan.first_action()
    return plan.pair_at(0)[1]


def action_utilities(objs, ws, start, cfg=None, tails=None):
    """
    (actions, objectives) matrix: per-objective returns of the best plan that opens
    with each action. Deterministic dynamics only.
    """
    cfg = cfg or PlanConfig()
    mdp = objs.mdp
    if not mdp.is_deterministic:
        raise ValueError("action utilities need deterministic dynamics")
    tails = tails if tails is not None else build_tail_table(objs, cfg)
    search = _Search(objs, ws.effective_weights, cfg, tails)
    multipliers = ws.effective_weights
    out = np.zeros((mdp.n_actions, len(objs)))
    for a in range(mdp.n_actions):
        if cfg.horizon == 0:
            rows = [row for row in tails.candidates[start] if row.first_action == a]
            if not rows:
                raise NoCandidateError(f"no tail from state {start} opens with action {a}")
            scores = [float(multipliers @ row.values) for row in rows]
            trajectory = rows[int(np.argmax(np.asarray(scores) >= max(scores) - cfg.tol))].trajectory
        else:
            child = search.trajectory(cfg.horizon - 1, int(search.next_states[start, a]),
                                      objs.discounts[:, start, a].copy())
            trajectory = TrajectorySpec(((start, a),) + child.prefix, child.cycle)
        out[a] = objs.returns(trajectory)
    return out


# simulation

def close_history(pairs, max_period):
    """
    Turn an executed finite history into an eventually periodic trajectory: the
    period <= max_period whose periodic suffix starts earliest and repeats at least
    twice. Without one the history stays finite.
    """
    n = len(pairs)
    best = None
    for p in range(1, max_period + 1):
        if 2 * p > n:
            break
        start = n - p
        while start > 0 and pairs[start - 1] == pairs[start - 1 + p]:
            start -= 1
        if n - start >= 2 * p and (best is None or start < best[0]):
            best = (start, p)
    if best is None:
        logger.debug("[simulate] history has no periodic suffix; returning it finite")
        return TrajectorySpec(tuple(pairs), ())
    start, p = best
    logger.debug(f"[simulate] closed history with period {p} from t={start}")
    return TrajectorySpec(tuple(pairs[:start]), tuple(pairs[start:start + p])).canonical()


def myopic_replan_simulate(objs, ws, start, steps, cfg=None, propagate=True, consistent=True,
                           strategy=None, tails=None):
    """
    Replan every step and execute only the first action. propagate=False resets
    the weights each step; propagate=True advances them along the history.
    """
    cfg = cfg or PlanConfig()
    if steps < 1:
        raise ValueError("steps must be >= 1")
    mdp = objs.mdp
    if not mdp.is_deterministic:
        raise ValueError("replanning simulation needs deterministic dynamics")
    if consistent and tails is None:
        tails = build_tail_table(objs, cfg)
    initial = ws
    s, history, seen = int(start), [], {}
    for t in range(steps):
        key = (s, ws.weights)
        if key in seen:
            # the simulator state recurred, so the rest repeats exactly
            first = seen[key]
            return TrajectorySpec(tuple(history[:first]), tuple(history[first:])).canonical()
        seen[key] = t
        plan, _ = plan_prefix_tail(objs, ws, s, cfg, consistent, strategy, tails)
        a = first_action(plan)
        history.append((s, a))
        ws = propagate_weights(ws, s, a, objs) if propagate else initial
        s = mdp.next_state(s, a)
    return close_history(history, cfg.max_cycle_period)


# average-reward view

def stationary_distribution(objs, policy):
    """
    d = d P_pi with sum(d) = 1. The chain must have exactly one closed
    communicating class.
    """
    mdp = _mdp_of(objs)
    probs = policy.distribution(mdp.n_actions)
    chain = np.einsum("sa,sat->st", probs, mdp.transition)
    positive = chain > 0
    n_comp, labels = connected_components(csr_matrix(positive), directed=True, connection="strong")
    rows, cols = np.nonzero(positive)
    leaving = {labels[i] for i, j in zip(rows, cols) if labels[i] != labels[j]}
    closed = n_comp - len(leaving)
    if closed != 1:
        raise NonUniqueStationaryError(f"chain has {closed} closed classes")
    n = mdp.n_states
    system = np.vstack([chain.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    dist = linalg.lstsq(system, rhs)[0]
    dist = np.clip(dist, 0.0, None)
    return dist / dist.sum()


def avg_objective(objs, ws, policy):
    """sum_s d(s) V_sigma(s) for a stationary policy."""
    dist = stationary_distribution(objs, policy)
    values = policy_values(objs, policy)
    aggregate = ws.constant + ws.effective_weights @ values
    return float(dist @ aggregate)


# exact check for a Markovian aggregate discount

def _mix(values, beta):
    return beta * values[0] + (1 - beta) * values[1]


@dataclass(frozen=True)
class ImpossibilityInstance:
    """
    Two objectives at one (s, a). values_i are V_i(T(s, a), .) for the policies
    (Pi, Omega, Lambda); beta_i is the mixing weight of Pi that objective i is
    indifferent about.
    """
    gamma1: Fraction
    gamma2: Fraction
    values1: tuple
    values2: tuple
    beta1: Fraction
    beta2: Fraction
    weights: tuple = (1, 1)

    def __post_init__(self):
        for name in ("gamma1", "gamma2", "beta1", "beta2"):
            object.__setattr__(self, name, Fraction(getattr(self, name)))
        for name in ("values1", "values2", "weights"):
            object.__setattr__(self, name, tuple(Fraction(v) for v in getattr(self, name)))
        if self.beta1 == self.beta2:
            raise DegenerateInstanceError("beta1 == beta2: preferences are symmetric about Lambda")
        v1, v2 = self.values1, self.values2
        if not (v1[0] > 0 > v1[1] and v2[1] > 0 > v2[0]):
            raise ValueError("values must conflict: V1(Pi) > 0 > V1(Omega) and V2(Omega) > 0 > V2(Pi)")
        if v1[2] != 0 or v2[2] != 0:
            raise ValueError("V_i(Lambda) must be 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta values must lie in (0, 1)")
        if _mix(v1, self.beta1) != 0 or _mix(v2, self.beta2) != 0:
            raise ValueError("objective i must be indifferent at beta_i")
        if 0 in self.weights or self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("weights must be nonzero and discounts nonnegative")

    @classmethod
    def from_values(cls, gamma1, gamma2, values1, values2, weights=(1, 1)):
        """Solve each beta_i from V_i(Pi_beta) = 0."""
        v1 = tuple(Fraction(v) for v in values1)
        v2 = tuple(Fraction(v) for v in values2)
        beta1 = -v1[1] / (v1[0] - v1[1])
        beta2 = -v2[1] / (v2[0] - v2[1])
        return cls(gamma1, gamma2, v1, v2, beta1, beta2, weights)

    def implied_gamma_sigma(self, beta):
        """The aggregate discount that makes the one-step and the aggregate views agree at beta."""
        w1, w2 = self.weights
        x1, x2 = _mix(self.values1, beta), _mix(self.values2, beta)
        return (w1 * self.gamma1 * x1 + w2 * self.gamma2 * x2) / (w1 * x1 + w2 * x2)


@dataclass(frozen=True)
class ImpossibilityReport:
    consistent: bool
    gamma_sigma: Fraction
    implied: tuple  # gamma_sigma solved at beta1 and at beta2


def impossibility_check(inst):
    implied = (inst.implied_gamma_sigma(inst.beta1), inst.implied_gamma_sigma(inst.beta2))
    if implied[0] == implied[1]:
        return ImpossibilityReport(True, implied[0], implied)
    return ImpossibilityReport(False, None, implied)
