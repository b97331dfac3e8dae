"""
Intertemporal compromise between generations whose preferences drift.

Each environment step is one generation. The factors y carried along the history
are the planning weights themselves: they start at the first generation's weights
and are advanced by y_update (no compromise), reset every N steps (n-step
commitment) or pulled toward the current generation's weights (historical
discounting).
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from aggregation import WeightState
from augmentation import CounterLift, y_update
from errors import IndexMismatchError
from generalized_mdp import TrajectorySpec
from planning import PlanConfig, build_tail_table, close_history, first_action, plan_prefix_tail

logger = logging.getLogger(__name__)

DEFAULT_STEPS = 120
MODES = ("none", "nstep", "historical")


@dataclass(frozen=True)
class PreferenceSchedule:
    """table[n] holds generation n's initial weights for n <= window; the last row holds after that."""
    table: tuple
    window: int

    def __post_init__(self):
        table = tuple(tuple(float(w) for w in row) for row in self.table)
        if len(table) != self.window + 1:
            raise ValueError(f"schedule needs {self.window + 1} rows, got {len(table)}")
        if len({len(row) for row in table}) != 1:
            raise IndexMismatchError("schedule rows differ in length")
        object.__setattr__(self, "table", table)

    @classmethod
    def constant(cls, weights):
        return cls((tuple(weights),), 0)

    def weights_at(self, n):
        return self.table[min(int(n), self.window)]

    @property
    def phase_count(self):
        return self.window + 1


@dataclass(frozen=True)
class IntertemporalConfig:
    mode: str = "historical"
    eta: float = 1.0
    n: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown intertemporal mode '{self.mode}'")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.n < 1:
            raise ValueError("n must be >= 1")


def linear_schedule(w_start, w_end, window):
    if window < 1:
        raise ValueError("window must be >= 1")
    start, end = np.asarray(w_start, dtype=float), np.asarray(w_end, dtype=float)
    if start.shape != end.shape:
        raise IndexMismatchError("w_start and w_end differ in length")
    rows = tuple(tuple(start + (n / window) * (end - start)) for n in range(window))
    return PreferenceSchedule(rows + (tuple(end),), window)


def nstep_reset(y, t, n, w0):
    """Back to the initial weights at every positive multiple of n."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t > 0 and t % n == 0:
        return tuple(float(w) for w in w0)
    return tuple(y)


def _weights_only(y):
    return WeightState(tuple(y), (1.0,) * len(y))


def historical_update(y, s, a, objs, strategy, eta, wn):
    """y <- eta * (y * gamma_i / gamma_sigma) + (1 - eta) * wn."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    if len(wn) != len(y):
        raise IndexMismatchError(f"{len(wn)} generation weights for {len(y)} factors")
    carried = np.asarray(y_update(y, s, a, objs, strategy, _weights_only(y)))
    return tuple(eta * carried + (1.0 - eta) * np.asarray(wn, dtype=float))


def v1_of_trajectory(objs, first_step_weights, trajectory):
    """Aggregate value of a realized trajectory under the first generation's weights."""
    if len(first_step_weights) != len(objs):
        raise IndexMismatchError(f"{len(first_step_weights)} weights for {len(objs)} objectives")
    return float(np.dot(first_step_weights, objs.returns(trajectory)))


def _unpack(objs):
    if isinstance(objs, CounterLift):
        return objs.objectives, objs
    return objs, None


def simulate_generations(objs, schedule, cfg, strategy, steps=DEFAULT_STEPS, plan=None, start=0, tails=None):
    """
    Plan with the carried weights, act, then advance the weights with the configured
    rule. `objs` may be a CounterLift, in which case planning runs on the lifted
    objectives and the returned trajectory is projected back to the base states.
    Returns (trajectory, V1).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    plan = plan or PlanConfig()
    objectives, lift = _unpack(objs)
    s = lift.lift_state(start) if lift is not None else int(start)
    mdp = objectives.mdp
    if tails is None:
        tails = build_tail_table(objectives, plan)
    w0 = schedule.weights_at(0)
    if len(w0) != len(objectives):
        raise IndexMismatchError(f"{len(w0)} schedule weights for {len(objectives)} objectives")

    y = tuple(w0)
    history, seen = [], {}
    for t in range(steps):
        key = (s, y, min(t, schedule.window), t % cfg.n if cfg.mode == "nstep" else 0)
        if key in seen:
            first = seen[key]
            logger.debug(f"[generations] exact recurrence at t={t} back to t={first}")
            trajectory = TrajectorySpec(tuple(history[:first]), tuple(history[first:])).canonical()
            break
        seen[key] = t
        result = plan_prefix_tail(objectives, _weights_only(y), s, plan, True, strategy, tails)
        a = first_action(result.trajectory)
        history.append((s, a))
        wt = schedule.weights_at(t)
        if cfg.mode == "historical":
            y = historical_update(y, s, a, objectives, strategy, cfg.eta, wt)
        else:
            y = y_update(y, s, a, objectives, strategy, _weights_only(y))
            if cfg.mode == "nstep":
                y = nstep_reset(y, t + 1, cfg.n, schedule.weights_at(t + 1))
        s = mdp.next_state(s, a)
    else:
        trajectory = close_history(history, plan.max_cycle_period)

    v1 = v1_of_trajectory(objectives, w0, trajectory)
    if lift is not None:
        trajectory = lift.project_trajectory(trajectory)
    logger.info(f"[generations] mode={cfg.mode} eta={cfg.eta:g} V1={v1:.6f}")
    return trajectory, v1


def _sweep_one(args):
    objs, schedule, eta, strategy, steps, plan, start = args
    cfg = IntertemporalConfig("historical", eta)
    return simulate_generations(objs, schedule, cfg, strategy, steps, plan, start)


def shape_deviations(results, reference):
    """(eta, got, expected) for every swept eta whose trajectory differs from its reference shape."""
    reference = dict(reference)
    return [(eta, trajectory, reference[eta]) for eta, trajectory, _ in results
            if eta in reference and trajectory != reference[eta].canonical()]


def sweep_eta(objs, schedule, etas, strategy, steps=DEFAULT_STEPS, plan=None, workers=None, start=0,
              reference=()):
    """
    One historical-discounting run per eta; results come back in the order of `etas`.
    `reference` pairs eta values with expected trajectories; each mismatch is logged
    as a warning and the results are returned unchanged.
    """
    plan = plan or PlanConfig()
    jobs = [(objs, schedule, float(eta), strategy, steps, plan, start) for eta in etas]
    if workers is None:
        workers = len(jobs)
    workers = max(1, min(int(workers), len(jobs), os.cpu_count() or 1))
    if workers == 1:
        results = [_sweep_one(job) for job in jobs]
    else:
        logger.info(f"[sweep] {len(jobs)} runs on {workers} worker processes")
        with ProcessPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(_sweep_one, jobs))
    results = [(float(eta), trajectory, v1) for eta, (trajectory, v1) in zip(etas, results)]
    for eta, got, expected in shape_deviations(results, reference):
        got_prefix, got_cycle = got.actions()
        want_prefix, want_cycle = expected.canonical().actions()
        logger.warning(f"[sweep] eta={eta:g} deviates from the reference shape: "
                       f"prefix {got_prefix} cycle {got_cycle}, expected prefix {want_prefix} cycle {want_cycle}")
    return results
