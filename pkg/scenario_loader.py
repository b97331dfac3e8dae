"""
Loads scenario files: JSON documents checked against scenarios/scenario.schema.json,
then resolved into objective sets, weights and planner settings.
"""

import copy
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator
from jsonschema.exceptions import best_match

from aggregation import GammaSigmaStrategy, Objective, ObjectiveSet, WeightState
from augmentation import WindowCounterObjective, lift_window_counter
from errors import (IndexMismatchError, ScenarioParseError, ScenarioSchemaError, ScenarioSemanticError,
                    TrajectoryTokenError)
from generalized_mdp import GeneralizedMDP, trajectory_from_actions, validate_mdp
from intertemporal import DEFAULT_STEPS, IntertemporalConfig, PreferenceSchedule, linear_schedule
from planning import DEFAULT_CYCLE_PERIOD, DEFAULT_HORIZON, PlanConfig
from trajectory_parser import TrajectoryParser

logger = logging.getLogger(__name__)

SCHEMA_PATH = Path(__file__).resolve().parent / "scenarios" / "scenario.schema.json"
SCHEMA_VERSION = 1
SUM_TOL = 1e-12

_validator = None


def _schema_validator():
    global _validator
    if _validator is None:
        with open(SCHEMA_PATH, "r", encoding="utf-8") as f:
            _validator = Draft202012Validator(json.load(f))
    return _validator


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    doc: dict
    base: ObjectiveSet
    lift: object  # CounterLift or None
    weights: tuple
    constant: float
    strategy: GammaSigmaStrategy
    intertemporal: IntertemporalConfig
    schedule: PreferenceSchedule
    planner: PlanConfig
    steps: int
    start: int
    reference_shapes: tuple = ()  # (eta, TrajectorySpec) pairs on the base states

    @property
    def objectives(self):
        """Objectives to plan and value on: lifted when a window objective is present."""
        return self.lift.objectives if self.lift is not None else self.base

    @property
    def generations(self):
        return self.lift if self.lift is not None else self.base

    @property
    def action_names(self):
        return self.base.mdp.action_names

    @property
    def state_names(self):
        return self.base.mdp.state_names

    def state_index(self, name):
        try:
            return self.state_names.index(name)
        except ValueError:
            raise ScenarioSemanticError(f"unknown state '{name}'") from None

    def start_state(self, base_state=None):
        s = self.start if base_state is None else base_state
        return self.lift.lift_state(s) if self.lift is not None else s

    def weight_state(self):
        return WeightState.initial(self.weights, self.constant)

    def trajectory(self, prefix_actions, cycle_actions, base_state=None):
        s = self.start if base_state is None else base_state
        base = trajectory_from_actions(self.base.mdp, s, prefix_actions, cycle_actions)
        return self.lift.lift_trajectory(base) if self.lift is not None else base


def _error_path(error):
    path = ""
    for part in error.absolute_path:
        path += f"[{part}]" if isinstance(part, int) else (f".{part}" if path else str(part))
    if error.validator == "required" and isinstance(error.instance, dict):
        missing = [key for key in error.validator_value if key not in error.instance]
        if missing:
            path += f".{missing[0]}" if path else missing[0]
    return path


def _index(names, key, where):
    if key not in names:
        raise ScenarioSemanticError(f"{where}: unknown name '{key}'")
    return names.index(key)


def _table(doc_table, states, actions, where, default=None):
    shape = (len(states), len(actions))
    table = np.full(shape, np.nan if default is None else default)
    for state, row in doc_table.items():
        s = _index(states, state, where)
        for action, value in row.items():
            table[s, _index(actions, action, f"{where}.{state}")] = float(value)
    if np.isnan(table).any():
        s, a = map(int, np.argwhere(np.isnan(table))[0])
        raise ScenarioSemanticError(f"{where}: missing entry for ({states[s]}, {actions[a]})")
    return table


def _transitions(doc, states, actions):
    transition = np.zeros((len(states), len(actions), len(states)))
    for state in states:
        row = doc["transitions"].get(state, {})
        for action in actions:
            where = f"transitions.{state}.{action}"
            if action not in row:
                raise ScenarioSemanticError(f"{where}: missing transition")
            target = row[action]
            s, a = states.index(state), actions.index(action)
            if isinstance(target, str):
                transition[s, a, _index(states, target, where)] = 1.0
            else:
                for nxt, p in target.items():
                    transition[s, a, _index(states, nxt, where)] = p
                if abs(transition[s, a].sum() - 1.0) > SUM_TOL:
                    raise ScenarioSemanticError(f"{where}: probabilities sum to {transition[s, a].sum():.12g}")
    for state in doc["transitions"]:
        _index(states, state, "transitions")
    return transition


def scenario_from_dict(doc):
    error = best_match(_schema_validator().iter_errors(doc))
    if error is not None:
        raise ScenarioSchemaError(_error_path(error), error.message)
    doc = copy.deepcopy(doc)
    states, actions = list(doc["states"]), list(doc["actions"])
    transition = _transitions(doc, states, actions)

    base, window, position, weights = [], None, None, []
    for i, spec in enumerate(doc["objectives"]):
        where = f"objectives[{i}]"
        weights.append(float(spec["weight"]))
        if "window" in spec:
            if window is not None:
                raise ScenarioSemanticError(f"{where}: only one window objective per scenario")
            if not isinstance(spec["discount"], (int, float)):
                raise ScenarioSemanticError(f"{where}.discount: window objectives take a constant discount")
            rule = spec["window"]
            window = WindowCounterObjective(spec["name"], rule["n"],
                                            _index(actions, rule["trigger"], f"{where}.window.trigger"),
                                            float(rule["reward"]), float(spec["discount"]))
            position = i
            continue
        reward = _table(spec.get("rewards", {}), states, actions, f"{where}.rewards", default=0.0)
        if isinstance(spec["discount"], (int, float)):
            discount = np.full((len(states), len(actions)), float(spec["discount"]))
        else:
            discount = _table(spec["discount"], states, actions, f"{where}.discount")
            if (discount < 0).any():
                raise ScenarioSemanticError(f"{where}.discount: discounts must be >= 0")
        base.append(Objective(spec["name"], GeneralizedMDP(transition, reward, discount, states, actions)))
    if not base:
        raise ScenarioSemanticError("objectives: at least one objective must not be a window objective")
    names = [spec["name"] for spec in doc["objectives"]]
    if len(set(names)) != len(names):
        raise ScenarioSemanticError(f"objectives: duplicate names {names}")

    report = validate_mdp(base[0].mdp)
    if not report.valid:
        raise ScenarioSemanticError("; ".join(report.violations))
    try:
        base_set = ObjectiveSet(tuple(base))
    except IndexMismatchError as e:
        raise ScenarioSemanticError(str(e)) from e
    lift = lift_window_counter(window, base_set, position) if window is not None else None

    aggregation = doc.setdefault("aggregation", {})
    aggregation.setdefault("gamma_sigma", "max")
    aggregation.setdefault("constant", 0)
    aggregation.setdefault("allow_negative_weights", False)
    if any(w < 0 for w in weights) and not aggregation["allow_negative_weights"]:
        raise ScenarioSemanticError("objectives: negative weights need aggregation.allow_negative_weights")
    if not any(weights):
        raise ScenarioSemanticError("objectives: at least one weight must be nonzero")
    try:
        strategy = GammaSigmaStrategy.parse(aggregation["gamma_sigma"])
    except ValueError as e:
        raise ScenarioSemanticError(f"aggregation.gamma_sigma: {e}") from e

    inter = doc.setdefault("intertemporal", {})
    inter.setdefault("mode", "none")
    inter.setdefault("eta", 1.0)
    inter.setdefault("n", 1)
    config = IntertemporalConfig(inter["mode"], float(inter["eta"]), int(inter["n"]))
    if "schedule" in inter:
        sched = inter["schedule"]
        for key in ("w_start", "w_end"):
            if len(sched[key]) != len(weights):
                raise ScenarioSemanticError(
                    f"intertemporal.schedule.{key}: {len(sched[key])} weights for {len(weights)} objectives")
        if [float(w) for w in sched["w_start"]] != weights:
            raise ScenarioSemanticError("intertemporal.schedule.w_start must equal the objective weights")
        schedule = linear_schedule(sched["w_start"], sched["w_end"], sched["T"])
    else:
        schedule = PreferenceSchedule.constant(weights)

    planner = doc.setdefault("planner", {})
    planner.setdefault("horizon", DEFAULT_HORIZON)
    planner.setdefault("max_cycle_period", DEFAULT_CYCLE_PERIOD)
    planner.setdefault("include_stationary", True)
    planner.setdefault("include_cycles", True)
    planner.setdefault("steps", DEFAULT_STEPS)
    plan = PlanConfig(planner["horizon"], planner["max_cycle_period"],
                      planner["include_stationary"], planner["include_cycles"])

    doc.setdefault("start", states[0])
    start = _index(states, doc["start"], "start")
    references = _reference_shapes(inter.get("reference_shapes", {}), base_set.mdp, start)
    logger.debug(f"[scenario] loaded '{doc['name']}' with {len(names)} objectives")
    return Scenario(doc["name"], doc, base_set, lift, tuple(weights), float(aggregation["constant"]),
                    strategy, config, schedule, plan, int(planner["steps"]), start, references)


def _reference_shapes(shapes, mdp, start):
    parser = TrajectoryParser(mdp.action_names)
    references = []
    for key, text in shapes.items():
        where = f"intertemporal.reference_shapes.{key}"
        eta = float(key)
        if eta > 1:
            raise ScenarioSemanticError(f"{where}: eta must lie in [0, 1]")
        try:
            prefix, cycle = parser.parse(text)
        except TrajectoryTokenError as e:
            raise ScenarioSemanticError(f"{where}: {e}") from e
        if not cycle:
            raise ScenarioSemanticError(f"{where}: a reference shape needs a repeating cycle")
        references.append((eta, trajectory_from_actions(mdp, start, prefix, cycle).canonical()))
    return tuple(sorted(references, key=lambda pair: pair[0]))


def load_scenario(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ScenarioParseError(f"cannot read scenario '{path}': {e}") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioParseError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    return scenario_from_dict(doc)


def dump_scenario(scenario):
    """Normalized document with defaults filled in and discount tables expanded."""
    doc = copy.deepcopy(scenario.doc)
    states, actions = list(scenario.state_names), list(scenario.action_names)
    for spec in doc["objectives"]:
        if "window" in spec:
            continue
        table = scenario.base[scenario.base.index(spec["name"])].mdp.discount
        spec["discount"] = {state: {action: float(table[s, a]) for a, action in enumerate(actions)}
                            for s, state in enumerate(states)}
    return doc
