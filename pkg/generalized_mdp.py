"""
Generalized MDPs: finite MDPs whose discount is a function of the state-action
pair. Holds the model, eventually periodic trajectories, the policy variants and
exact valuation of trajectories, stationary policies, mixtures and prospects.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from errors import DivergenceError, DivergentCycleError, SingularSystemError

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
ROW_SUM_TOL = 1e-12
MAX_ROLLOUT_STEPS = 1_000_000


def _frozen(array, dtype=float):
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class GeneralizedMDP:
    """
    transition[s, a, s'], reward[s, a] and discount[s, a].
    Arrays are copied and made read-only on construction.
    """
    transition: np.ndarray
    reward: np.ndarray
    discount: np.ndarray
    state_names: tuple = ()
    action_names: tuple = ()

    def __post_init__(self):
        transition = _frozen(self.transition)
        if transition.ndim != 3 or transition.shape[0] != transition.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {transition.shape}")
        n_states, n_actions = transition.shape[:2]
        reward = _frozen(np.broadcast_to(self.reward, (n_states, n_actions)))
        discount = _frozen(np.broadcast_to(self.discount, (n_states, n_actions)))
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "discount", discount)
        if not self.state_names:
            object.__setattr__(self, "state_names", tuple(f"s{i}" for i in range(n_states)))
        if not self.action_names:
            object.__setattr__(self, "action_names", tuple(f"a{i}" for i in range(n_actions)))
        object.__setattr__(self, "state_names", tuple(self.state_names))
        object.__setattr__(self, "action_names", tuple(self.action_names))

    @classmethod
    def from_next_states(cls, next_states, reward, discount, state_names=(), action_names=()):
        """Deterministic model from a table next_states[s][a] -> s'."""
        table = np.asarray(next_states, dtype=int)
        n_states, n_actions = table.shape
        transition = np.zeros((n_states, n_actions, n_states))
        for s in range(n_states):
            for a in range(n_actions):
                transition[s, a, table[s, a]] = 1.0
        return cls(transition, reward, discount, state_names, action_names)

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]

    @property
    def is_deterministic(self):
        return bool(np.all(np.isclose(self.transition.max(axis=2), 1.0, atol=ROW_SUM_TOL)))

    def next_state(self, s, a):
        row = self.transition[s, a]
        s_next = int(np.argmax(row))
        if abs(row[s_next] - 1.0) > ROW_SUM_TOL:
            raise ValueError(f"transition from ({s}, {a}) is not deterministic")
        return s_next

    def with_reward(self, reward):
        return GeneralizedMDP(self.transition, reward, self.discount, self.state_names, self.action_names)

    def with_discount(self, discount):
        return GeneralizedMDP(self.transition, self.reward, discount, self.state_names, self.action_names)


@dataclass(frozen=True)
class TrajectorySpec:
    """An eventually periodic sequence of (state, action) pairs: prefix, then cycle forever."""
    prefix: tuple = ()
    cycle: tuple = ()

    def __post_init__(self):
        prefix = tuple((int(s), int(a)) for s, a in self.prefix)
        cycle = tuple((int(s), int(a)) for s, a in self.cycle)
        if not prefix and not cycle:
            raise ValueError("trajectory needs at least one step")
        object.__setattr__(self, "prefix", prefix)
        object.__setattr__(self, "cycle", cycle)

    @property
    def is_finite(self):
        return not self.cycle

    def pair_at(self, t):
        if t < len(self.prefix):
            return self.prefix[t]
        if not self.cycle:
            raise IndexError(t)
        return self.cycle[(t - len(self.prefix)) % len(self.cycle)]

    def unroll(self, n):
        """First n (state, action) pairs, fewer if the trajectory is finite."""
        if self.is_finite:
            return list(self.prefix[:n])
        return [self.pair_at(t) for t in range(n)]

    def actions(self):
        return [a for _, a in self.prefix], [a for _, a in self.cycle]

    def canonical(self):
        """Primitive cycle, then the shortest prefix."""
        prefix, cycle = list(self.prefix), list(self.cycle)
        if cycle:
            n = len(cycle)
            for p in range(1, n + 1):
                if n % p == 0 and all(cycle[i] == cycle[i % p] for i in range(n)):
                    cycle = cycle[:p]
                    break
            while prefix and prefix[-1] == cycle[-1]:
                cycle = [prefix.pop()] + cycle[:-1]
        return TrajectorySpec(tuple(prefix), tuple(cycle))

    def is_consistent(self, mdp):
        """Consecutive pairs must be reachable under the transition kernel."""
        pairs = list(self.prefix) + list(self.cycle)
        links = list(zip(pairs, pairs[1:]))
        if self.cycle:
            links.append((self.cycle[-1], self.cycle[0]))
        for (s, a), (s_next, _) in links:
            if mdp.transition[s, a, s_next] <= 0.0:
                return False
        return True


# policies

@dataclass(frozen=True)
class StationaryDeterministic:
    actions: tuple

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))

    def distribution(self, n_actions):
        probs = np.zeros((len(self.actions), n_actions))
        probs[np.arange(len(self.actions)), list(self.actions)] = 1.0
        return probs


@dataclass(frozen=True, eq=False)
class StationaryStochastic:
    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs)
        if np.any(probs < 0) or not np.allclose(probs.sum(axis=1), 1.0, atol=DEFAULT_TOL):
            raise ValueError("action distributions must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", probs)

    def distribution(self, n_actions):
        return np.asarray(self.probs)


@dataclass(frozen=True)
class Mixture:
    """components: tuple of (probability, policy); commits to one component at the start."""
    components: tuple

    def __post_init__(self):
        components = tuple((float(p), pol) for p, pol in self.components)
        if not components:
            raise ValueError("mixture needs at least one component")
        if any(p < 0 for p, _ in components) or abs(sum(p for p, _ in components) - 1.0) > DEFAULT_TOL:
            raise ValueError("mixture probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "components", components)


@dataclass(frozen=True)
class PrefixTail:
    """Open-loop action list followed by a stationary or mixture tail."""
    actions: tuple
    tail: object

    def __post_init__(self):
        if not isinstance(self.tail, (StationaryDeterministic, StationaryStochastic, Mixture)):
            raise ValueError("prefix-tail tail must be stationary or a mixture")
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))


STATIONARY = (StationaryDeterministic, StationaryStochastic)


@dataclass(frozen=True, eq=False)
class Prospect:
    start: object
    policy: object

    def start_distribution(self, n_states):
        if np.isscalar(self.start):
            dist = np.zeros(n_states)
            dist[int(self.start)] = 1.0
            return dist
        dist = np.asarray(self.start, dtype=float)
        if dist.shape != (n_states,) or abs(dist.sum() - 1.0) > DEFAULT_TOL:
            raise ValueError("start distribution must sum to 1 over the states")
        return dist


# validation

@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    finite_horizon_only: bool = False
    max_log_cycle_discount: float = float("-inf")

    @property
    def valid(self):
        return not self.violations

    def lines(self):
        out = [f"invalid: {v}" for v in self.violations] or ["valid"]
        if self.finite_horizon_only:
            out.append("finite-horizon only: a cycle has discount product >= 1")
        else:
            out.append("infinite-horizon OK")
        return out


def _max_cycle_mean(weights):
    """Karp's maximum mean cycle over a dense weight matrix; -inf marks a missing edge."""
    n = weights.shape[0]
    walks = np.full((n + 1, n), -np.inf)
    walks[0] = 0.0
    for k in range(1, n + 1):
        walks[k] = np.max(walks[k - 1][:, None] + weights, axis=0)
    best = -np.inf
    for v in range(n):
        if walks[n, v] == -np.inf:
            continue
        ratios = [(walks[n, v] - walks[k, v]) / (n - k) for k in range(n) if walks[k, v] > -np.inf]
        best = max(best, min(ratios))
    return best


def validate_mdp(mdp):
    """Report-only check of the model invariants. Never raises."""
    report = ValidationReport()
    transition, reward, discount = mdp.transition, mdp.reward, mdp.discount
    if not np.all(np.isfinite(transition)) or np.any(transition < 0):
        report.violations.append("transition probabilities must be finite and nonnegative")
    sums = transition.sum(axis=2)
    for s, a in zip(*np.nonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)):
        report.violations.append(
            f"row sum != 1 at ({mdp.state_names[s]}, {mdp.action_names[a]}): {sums[s, a]:.12g}")
    if not np.all(np.isfinite(reward)):
        report.violations.append("rewards must be finite")
    if not np.all(np.isfinite(discount)) or np.any(discount < 0):
        report.violations.append("discounts must be finite and >= 0")
    if report.violations:
        return report

    with np.errstate(divide="ignore"):
        log_discount = np.log(discount)
    edges = np.full((mdp.n_states, mdp.n_states), -np.inf)
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            reachable = transition[s, a] > 0
            edges[s, reachable] = np.maximum(edges[s, reachable], log_discount[s, a])
    report.max_log_cycle_discount = float(_max_cycle_mean(edges))
    report.finite_horizon_only = report.max_log_cycle_discount >= -ROW_SUM_TOL
    if report.finite_horizon_only:
        logger.warning("[validate] model admits a cycle with discount product >= 1; finite horizon only")
    return report


# valuation

def return_of_trajectory(mdp, trajectory):
    """Discounted return, with the cycle summed in closed form."""
    total, gamma = 0.0, 1.0
    for s, a in trajectory.prefix:
        total += gamma * mdp.reward[s, a]
        gamma *= mdp.discount[s, a]
    if not trajectory.cycle:
        return float(total)
    cycle_value, cycle_gamma = 0.0, 1.0
    for s, a in trajectory.cycle:
        cycle_value += cycle_gamma * mdp.reward[s, a]
        cycle_gamma *= mdp.discount[s, a]
    if cycle_gamma >= 1.0:
        raise DivergentCycleError(f"cycle discount product {cycle_gamma:.6g} >= 1")
    return float(total + gamma * cycle_value / (1.0 - cycle_gamma))


def trajectory_from_actions(mdp, start, prefix_actions, cycle_actions=()):
    """Walk deterministic dynamics; the action cycle repeats until the states close up."""
    s = int(start)
    prefix = []
    for a in prefix_actions:
        prefix.append((s, int(a)))
        s = mdp.next_state(s, a)
    if not cycle_actions:
        return TrajectorySpec(tuple(prefix), ())
    rounds, seen = [], {}
    while s not in seen:
        seen[s] = len(rounds)
        one_round = []
        for a in cycle_actions:
            one_round.append((s, int(a)))
            s = mdp.next_state(s, a)
        rounds.append(one_round)
    first = seen[s]
    for one_round in rounds[:first]:
        prefix.extend(one_round)
    cycle = [pair for one_round in rounds[first:] for pair in one_round]
    return TrajectorySpec(tuple(prefix), tuple(cycle))


def trajectory_of_policy(mdp, start, policy, prefix_actions=()):
    """Trajectory of a deterministic stationary policy under deterministic dynamics."""
    s = int(start)
    prefix = []
    for a in prefix_actions:
        prefix.append((s, int(a)))
        s = mdp.next_state(s, a)
    pairs, seen = [], {}
    while s not in seen:
        seen[s] = len(pairs)
        a = policy.actions[s]
        pairs.append((s, a))
        s = mdp.next_state(s, a)
    first = seen[s]
    return TrajectorySpec(tuple(prefix + pairs[:first]), tuple(pairs[first:]))


def _policy_operator(mdp, policy):
    probs = policy.distribution(mdp.n_actions)
    reward = np.sum(probs * mdp.reward, axis=1)
    operator = np.einsum("sa,sa,sat->st", probs, mdp.discount, mdp.transition)
    return reward, operator


def evaluate_stationary(mdp, policy):
    """Solve V = r_pi + P_pi V, with P_pi the discounted transition operator."""
    reward, operator = _policy_operator(mdp, policy)
    radius = float(np.max(np.abs(linalg.eigvals(operator)))) if operator.size else 0.0
    if radius >= 1.0 - ROW_SUM_TOL:
        raise DivergenceError(f"discounted operator has spectral radius {radius:.6g} >= 1")
    try:
        return linalg.solve(np.eye(mdp.n_states) - operator, reward)
    except (linalg.LinAlgError, ValueError) as e:
        raise SingularSystemError(str(e)) from e


def _rollout_tail(mdp, mass, policy, tol):
    """Truncated rollout from a discounted state mass, for tails the linear solve rejects."""
    reward, operator = _policy_operator(mdp, policy)
    adjacency = operator > 0
    reach = mass > 0
    while True:
        grown = reach | (reach @ adjacency)
        if np.array_equal(grown, reach):
            break
        reach = grown
    probs = policy.distribution(mdp.n_actions)
    used = (probs > 0) & reach[:, None]
    gamma_max = float(mdp.discount[used].max()) if used.any() else 0.0
    r_max = float(np.abs(mdp.reward[used]).max()) if used.any() else 0.0
    if gamma_max >= 1.0 and r_max > 0.0:
        raise DivergenceError("no finite horizon reaches the tolerance: reachable discount >= 1")
    total = 0.0
    for step in range(MAX_ROLLOUT_STEPS):
        if r_max * mass.sum() / (1.0 - gamma_max) < tol:
            logger.debug(f"[prospect] tail rollout converged after {step} steps")
            return total
        total += float(mass @ reward)
        mass = mass @ operator
    raise DivergenceError(f"tail rollout did not reach tol={tol} in {MAX_ROLLOUT_STEPS} steps")


def _tail_value(mdp, mass, tail, tol):
    if isinstance(tail, Mixture):
        return sum(p * _tail_value(mdp, mass, comp, tol) for p, comp in tail.components)
    try:
        return float(mass @ evaluate_stationary(mdp, tail))
    except (DivergenceError, SingularSystemError):
        return _rollout_tail(mdp, mass, tail, tol)


def _deterministic_fast_path(mdp, dist, policy):
    if not mdp.is_deterministic:
        return None
    if isinstance(policy, StationaryDeterministic):
        prefix, tail = (), policy
    elif isinstance(policy, PrefixTail) and isinstance(policy.tail, StationaryDeterministic):
        prefix, tail = policy.actions, policy.tail
    else:
        return None
    total = 0.0
    for s in np.nonzero(dist)[0]:
        trajectory = trajectory_of_policy(mdp, s, tail, prefix)
        total += dist[s] * return_of_trajectory(mdp, trajectory)
    return total


def evaluate_prospect(mdp, prospect, tol=DEFAULT_TOL):
    """Expected value of following the prospect's policy from its start distribution."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    dist = prospect.start_distribution(mdp.n_states)
    policy = prospect.policy
    if isinstance(policy, Mixture):
        return sum(p * evaluate_prospect(mdp, Prospect(dist, comp), tol) for p, comp in policy.components)

    fast = _deterministic_fast_path(mdp, dist, policy)
    if fast is not None:
        return float(fast)

    if isinstance(policy, PrefixTail):
        prefix, tail = policy.actions, policy.tail
    else:
        prefix, tail = (), policy
    # discounted state mass after each open-loop prefix action
    mass, total = dist.copy(), 0.0
    for a in prefix:
        total += float(mass @ mdp.reward[:, a])
        mass = (mass * mdp.discount[:, a]) @ mdp.transition[:, a, :]
    return total + _tail_value(mdp, mass, tail, tol)
