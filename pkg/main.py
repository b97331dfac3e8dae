"""
Command line for valuing, planning and simulating multi-objective scenarios with
diverse discounts. Data goes to stdout, diagnostics to stderr.

    python main.py value scenarios/peril.json --trajectory "p,w*"
    python main.py sweep-eta scenarios/peril_playn.json
    python main.py impossibility --gamma1 0.5 --gamma2 0.9
"""

import argparse
import csv
import logging
import os
import sys
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction

from dotenv import load_dotenv

from aggregation import aggregate_trajectory_value
from errors import TimePrefError
from generalized_mdp import validate_mdp
from intertemporal import IntertemporalConfig, simulate_generations, sweep_eta, v1_of_trajectory
from planning import (ImpossibilityInstance, PlanConfig, PolicyTree, impossibility_check,
                      myopic_replan_simulate, plan_prefix_tail)
from scenario_loader import load_scenario
from trajectory_parser import TrajectoryParser, format_trajectory

logger = logging.getLogger("timepref")

DEFAULT_ETAS = "0,0.3,0.5,0.9,0.95,0.98,1.0"
LIST_FLAGS = ("--values", "--values1", "--values2", "--weights", "--gamma1", "--gamma2")


def safe_command_call(func, *args, **kwargs):
    """Run a command; returns (ok, result, error) with the error's exit code attached."""
    try:
        return True, func(*args, **kwargs), None
    except TimePrefError as e:
        return False, None, e
    except ValueError as e:
        e.exit_code = 3
        return False, None, e
    except Exception as e:
        logger.exception("unexpected failure")
        e.exit_code = 1
        return False, None, e


# formatting

def format_number(x, digits):
    """Round half-even to a fixed number of decimals."""
    quantum = Decimal(1).scaleb(-digits)
    value = Decimal(repr(float(x))).quantize(quantum, rounding=ROUND_HALF_EVEN)
    if value == 0:
        value = value.copy_abs()
    return str(value)


def format_short(x, digits):
    """Rounded like format_number, without trailing zeros."""
    text = format(Decimal(format_number(x, digits)).normalize(), "f")
    return "0" if text in ("-0", "") else text


def emit(header, rows, fmt, meta=None, out=None):
    out = out or sys.stdout
    if fmt == "csv":
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        if meta:
            logger.info(meta)
        return
    if meta:
        out.write(f"# {meta}\n")
    table = [list(header)] + [[str(c) for c in row] for row in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    for row in table:
        out.write("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() + "\n")


def _meta(scenario, plan, **extra):
    parts = [f"scenario={scenario.name}", f"gamma_sigma={scenario.strategy}",
             f"horizon={plan.horizon}", f"max_cycle_period={plan.max_cycle_period}"]
    parts += [f"{k}={v}" for k, v in extra.items()]
    return " ".join(parts)


def _plan_config(scenario, args):
    plan = scenario.planner
    horizon = getattr(args, "horizon", None)
    if horizon is None:
        return plan
    return PlanConfig(horizon, plan.max_cycle_period, plan.include_stationary, plan.include_cycles)


def _start(scenario, args):
    name = getattr(args, "start", None)
    return scenario.start if name is None else scenario.state_index(name)


def _show(scenario, trajectory):
    if scenario.lift is not None:
        trajectory = scenario.lift.project_trajectory(trajectory)
    return format_trajectory(trajectory, scenario.action_names)


# commands

def cmd_validate(args):
    scenario = load_scenario(args.scenario)
    rows, ok = [], True
    for obj in scenario.objectives:
        report = validate_mdp(obj.mdp)
        ok = ok and report.valid
        rows.extend((obj.name, line) for line in report.lines())
    emit(("objective", "status"), rows, args.format, f"scenario={scenario.name}")
    return 0 if ok else 3


def cmd_value(args):
    scenario = load_scenario(args.scenario)
    prefix, cycle = TrajectoryParser(scenario.action_names).parse(args.trajectory)
    trajectory = scenario.trajectory(prefix, cycle, _start(scenario, args))
    objs = scenario.objectives
    rows = [(name, format_number(v, args.digits)) for name, v in zip(objs.names, objs.returns(trajectory))]
    total = aggregate_trajectory_value(objs, scenario.weight_state(), trajectory)
    rows.append(("aggregate", format_number(total, args.digits)))
    emit(("objective", "return"), rows, args.format, f"scenario={scenario.name} gamma_sigma={scenario.strategy}")
    return 0


def cmd_plan(args):
    scenario = load_scenario(args.scenario)
    plan = _plan_config(scenario, args)
    ws = scenario.weight_state()
    objs = scenario.objectives
    start = scenario.start_state(_start(scenario, args))
    result = plan_prefix_tail(objs, ws, start, plan, not args.markovian, scenario.strategy)
    if isinstance(result.trajectory, PolicyTree):
        shown = f"{scenario.action_names[result.trajectory.first_action()]}...(tree depth {result.trajectory.depth()})"
        value = result.value
    else:
        shown = _show(scenario, result.trajectory)
        value = aggregate_trajectory_value(objs, ws, result.trajectory)
    emit(("trajectory", "value"), [(shown, format_number(value, args.digits))], args.format,
         _meta(scenario, plan, consistent=str(not args.markovian).lower()))
    return 0


def cmd_simulate(args):
    scenario = load_scenario(args.scenario)
    plan = _plan_config(scenario, args)
    steps = args.steps or scenario.steps
    start = _start(scenario, args)
    if args.mode in ("myopic", "consistent"):
        objs = scenario.objectives
        trajectory = myopic_replan_simulate(objs, scenario.weight_state(), scenario.start_state(start), steps, plan,
                                            propagate=args.mode == "consistent", strategy=scenario.strategy)
        v1 = v1_of_trajectory(objs, scenario.schedule.weights_at(0), trajectory)
        shown = _show(scenario, trajectory)
    else:
        base = scenario.intertemporal
        eta = base.eta if args.eta is None else args.eta
        n = base.n if args.n is None else args.n
        cfg = IntertemporalConfig(args.mode, eta, n)
        trajectory, v1 = simulate_generations(scenario.generations, scenario.schedule, cfg, scenario.strategy,
                                              steps, plan, start)
        shown = format_trajectory(trajectory, scenario.action_names)
    emit(("trajectory", "v1"), [(shown, format_number(v1, args.digits))], args.format,
         _meta(scenario, plan, mode=args.mode, steps=steps))
    return 0


def cmd_sweep(args):
    scenario = load_scenario(args.scenario)
    plan = _plan_config(scenario, args)
    steps = args.steps or scenario.steps
    tokens = [t.strip() for t in args.values.split(",") if t.strip()]
    try:
        etas = [float(t) for t in tokens]
    except ValueError:
        raise ValueError(f"--values must be numbers, got '{args.values}'") from None
    for eta in etas:
        IntertemporalConfig("historical", eta)
    workers = args.workers or int(os.getenv("TIMEPREF_WORKERS", "0")) or None
    results = sweep_eta(scenario.generations, scenario.schedule, etas, scenario.strategy, steps, plan,
                        workers, scenario.start, scenario.reference_shapes)
    rows = [(token, format_trajectory(trajectory, scenario.action_names), format_number(v1, args.digits))
            for token, (_, trajectory, v1) in zip(tokens, results)]
    emit(("eta", "trajectory", "v1"), rows, args.format, _meta(scenario, plan, steps=steps))
    return 0


def _fractions(text, count, flag):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != count:
        raise ValueError(f"{flag} needs {count} comma-separated numbers")
    try:
        return tuple(Fraction(p) for p in parts)
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"{flag}: cannot read '{text}'") from None


def cmd_impossibility(args):
    inst = ImpossibilityInstance.from_values(
        _fractions(args.gamma1, 1, "--gamma1")[0], _fractions(args.gamma2, 1, "--gamma2")[0],
        _fractions(args.values1, 3, "--values1"), _fractions(args.values2, 3, "--values2"),
        _fractions(args.weights, 2, "--weights"))
    report = impossibility_check(inst)
    at_b1, at_b2 = (format_short(g, args.digits) for g in report.implied)
    verdict = "consistent" if report.consistent else "contradiction"
    if args.format == "csv":
        emit(("verdict", "gamma_sigma_at_beta1", "gamma_sigma_at_beta2"), [(verdict, at_b1, at_b2)], "csv")
    elif report.consistent:
        print(f"consistent, gamma_sigma={at_b1}")
    else:
        print(f"contradiction, gamma_sigma={at_b1} at beta1={inst.beta1} but {at_b2} at beta2={inst.beta2}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(description="Multi-objective planning with diverse time preferences")
    parser.add_argument("--digits", type=int, default=3, help="decimals in numeric output (half-even)")
    parser.add_argument("--format", choices=("table", "csv"), default="table")
    parser.add_argument("--log-level", default=None, help="overrides TIMEPREF_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario's models")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("value", help="per-objective and aggregate returns of a trajectory")
    p.add_argument("scenario")
    p.add_argument("--trajectory", required=True, help='e.g. "p,w*" or "p5,(w9,p)*"')
    p.add_argument("--start", default=None, help="start state name")
    p.set_defaults(func=cmd_value)

    p = sub.add_parser("plan", help="optimal prefix+tail plan")
    p.add_argument("scenario")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--start", default=None)
    p.add_argument("--markovian", action="store_true", help="score with the Markovian scalarization")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="replan step by step and report the realized trajectory")
    p.add_argument("scenario")
    p.add_argument("--mode", choices=("myopic", "consistent", "historical", "nstep"), required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--start", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep-eta", help="historical discounting for several eta values")
    p.add_argument("scenario")
    p.add_argument("--values", default=DEFAULT_ETAS)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--workers", type=int, default=None, help="overrides TIMEPREF_WORKERS")
    p.add_argument("--horizon", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("impossibility", help="can one aggregate discount serve two objectives")
    p.add_argument("--gamma1", required=True)
    p.add_argument("--gamma2", required=True)
    p.add_argument("--values1", default="1,-1,0", help="V1 of Pi, Omega, Lambda, e.g. --values1=1,-1,0")
    p.add_argument("--values2", default="-1,2,0", help="V2 of Pi, Omega, Lambda, e.g. --values2=-1,2,0")
    p.add_argument("--weights", default="1,1")
    p.set_defaults(func=cmd_impossibility)
    return parser


def join_list_values(argv):
    """Attach values such as -1,2,0 to their flag so argparse does not read them as options."""
    joined, i = [], 0
    while i < len(argv):
        if argv[i] in LIST_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            joined.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            joined.append(argv[i])
            i += 1
    return joined


def main(argv=None):
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(join_list_values(sys.argv[1:] if argv is None else list(argv)))
    except SystemExit as e:
        return int(e.code or 0)
    level = (args.log_level or os.getenv("TIMEPREF_LOG_LEVEL", "WARNING")).upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    if args.digits < 0:
        logger.error("--digits must be >= 0")
        return 2

    ok, code, error = safe_command_call(args.func, args)
    if not ok:
        logger.error(str(error))
        return error.exit_code
    return code


if __name__ == "__main__":
    sys.exit(main())
