import logging
from pathlib import Path

import pytest

from aggregation import GammaSigmaStrategy
from augmentation import y_update
from conftest import PLAY, WORK
from errors import IndexMismatchError
from generalized_mdp import TrajectorySpec, trajectory_from_actions
from intertemporal import (IntertemporalConfig, PreferenceSchedule, historical_update, linear_schedule,
                           nstep_reset, shape_deviations, simulate_generations, sweep_eta, v1_of_trajectory,
                           _weights_only)
from planning import PlanConfig, myopic_replan_simulate
from scenario_loader import load_scenario
from trajectory_parser import TrajectoryParser, format_trajectory

MAX = GammaSigmaStrategy("max")
PLAYN = Path(__file__).resolve().parent.parent / "scenarios" / "peril_playn.json"

ETA_TABLE = [
    (0.0, "p5,(w9,p)*", 2.635),
    (0.3, "p5,(w9,p)*", 2.635),
    (0.5, "p3,w9,(p,w9)*", 2.932),
    (0.9, "p,w14,(p,w9)*", 3.105),
    (0.95, "p,w23,(p,w9)*", 3.163),
    (0.98, "p,w50,(p,w9)*", 3.198),
    (1.0, "p,w*", 3.200),
]


@pytest.fixture(scope="module")
def playn():
    return load_scenario(PLAYN)


@pytest.fixture(scope="module")
def sweep(playn):
    etas = [eta for eta, _, _ in ETA_TABLE]
    return sweep_eta(playn.generations, playn.schedule, etas, playn.strategy, playn.steps, playn.planner,
                     workers=2, start=playn.start)


def shaped(scenario, text):
    prefix, cycle = TrajectoryParser(scenario.action_names).parse(text)
    return trajectory_from_actions(scenario.base.mdp, scenario.start, prefix, cycle).canonical()


def peril_run(peril, mode, eta=1.0, n=1, steps=20):
    schedule = PreferenceSchedule.constant((1.0, 1.0))
    return simulate_generations(peril, schedule, IntertemporalConfig(mode, eta, n), MAX, steps, PlanConfig(horizon=3))


class TestUpdates:
    def test_nstep_reset(self):
        assert nstep_reset((0.3, 0.7), 10, 10, (1, 1)) == (1.0, 1.0)
        assert nstep_reset((0.3, 0.7), 5, 10, (1, 1)) == (0.3, 0.7)
        assert nstep_reset((0.3, 0.7), 0, 10, (1, 1)) == (0.3, 0.7)

    def test_nstep_reset_rejects_negative_time(self):
        with pytest.raises(ValueError):
            nstep_reset((1.0,), -1, 2, (1.0,))

    def test_historical_half(self, peril):
        y = historical_update((1.0, 1.0), 0, PLAY, peril, MAX, 0.5, (1.0, 1.0))
        assert y == pytest.approx((0.5 * 0.5 / 0.9 + 0.5, 1.0))

    def test_historical_extremes(self, peril):
        y = (0.4, 1.3)
        carried = y_update(y, 0, WORK, peril, MAX, _weights_only(y))
        assert historical_update(y, 0, WORK, peril, MAX, 1.0, (9.0, 9.0)) == pytest.approx(carried)
        assert historical_update(y, 0, WORK, peril, MAX, 0.0, (0.2, 0.8)) == pytest.approx((0.2, 0.8))

    def test_historical_checks(self, peril):
        with pytest.raises(ValueError):
            historical_update((1.0, 1.0), 0, PLAY, peril, MAX, 1.5, (1.0, 1.0))
        with pytest.raises(IndexMismatchError):
            historical_update((1.0, 1.0), 0, PLAY, peril, MAX, 0.5, (1.0,))

    @pytest.mark.parametrize("kwargs", [dict(mode="later"), dict(eta=-0.1), dict(n=0)])
    def test_config_rejects(self, kwargs):
        with pytest.raises(ValueError):
            IntertemporalConfig(**kwargs)


class TestSchedule:
    def test_linear(self):
        schedule = linear_schedule((1, 0, 1), (0, 1, 1), 10)
        assert schedule.weights_at(0) == (1.0, 0.0, 1.0)
        assert schedule.weights_at(5) == pytest.approx((0.5, 0.5, 1.0))
        assert schedule.weights_at(10) == (0.0, 1.0, 1.0)
        assert schedule.weights_at(50) == (0.0, 1.0, 1.0)
        assert schedule.phase_count == 11

    def test_constant(self):
        schedule = PreferenceSchedule.constant((1, 2))
        assert schedule.weights_at(0) == schedule.weights_at(99) == (1.0, 2.0)

    def test_bad_window(self):
        with pytest.raises(ValueError):
            linear_schedule((1,), (0,), 0)

    def test_length_mismatch(self):
        with pytest.raises(IndexMismatchError):
            linear_schedule((1, 0), (0, 1, 1), 4)


class TestV1:
    @pytest.mark.parametrize("eta,shape,expected", ETA_TABLE)
    def test_table_rows(self, playn, eta, shape, expected):
        prefix, cycle = TrajectoryParser(playn.action_names).parse(shape)
        trajectory = playn.trajectory(prefix, cycle)
        v1 = v1_of_trajectory(playn.objectives, playn.schedule.weights_at(0), trajectory)
        assert v1 == pytest.approx(expected, abs=1e-3)

    def test_index_mismatch(self, peril):
        with pytest.raises(IndexMismatchError):
            v1_of_trajectory(peril, (1.0,), TrajectorySpec((), ((0, WORK),)))


class TestReductions:
    def test_one_step_commitment_is_memoryless(self, peril, peril_ws):
        trajectory, v1 = peril_run(peril, "nstep", n=1)
        assert format_trajectory(trajectory, ("w", "p")) == "p*"
        assert trajectory == myopic_replan_simulate(peril, peril_ws, 0, 20, PlanConfig(horizon=3), propagate=False)
        assert v1 == pytest.approx(1.0, abs=1e-9)

    def test_full_memory_is_propagation(self, peril, peril_ws):
        trajectory, v1 = peril_run(peril, "historical", eta=1.0)
        assert trajectory == myopic_replan_simulate(peril, peril_ws, 0, 20, PlanConfig(horizon=3), propagate=True)
        assert format_trajectory(trajectory, ("w", "p")) == "p,w*"
        assert v1 == pytest.approx(3.2, abs=1e-9)

    def test_no_memory_with_constant_schedule(self, peril):
        trajectory, v1 = peril_run(peril, "historical", eta=0.0)
        assert format_trajectory(trajectory, ("w", "p")) == "p*"
        assert v1 == pytest.approx(1.0, abs=1e-9)

    def test_none_mode_matches_full_memory(self, peril):
        assert peril_run(peril, "none")[0] == peril_run(peril, "historical", eta=1.0)[0]

    def test_steps_must_be_positive(self, peril):
        with pytest.raises(ValueError):
            peril_run(peril, "none", steps=0)

    def test_schedule_must_match_objectives(self, peril):
        with pytest.raises(IndexMismatchError):
            simulate_generations(peril, PreferenceSchedule.constant((1.0,)), IntertemporalConfig(), MAX, 5,
                                 PlanConfig(horizon=1))


class TestSweep:
    def test_order_follows_etas(self, peril):
        schedule = PreferenceSchedule.constant((1.0, 1.0))
        results = sweep_eta(peril, schedule, [1.0, 0.0], MAX, 20, PlanConfig(horizon=3))
        assert [eta for eta, _, _ in results] == [1.0, 0.0]
        assert [format_trajectory(t, ("w", "p")) for _, t, _ in results] == ["p,w*", "p*"]

    def test_one_worker_per_eta_by_default(self, peril, caplog, monkeypatch):
        monkeypatch.setattr("intertemporal.os.cpu_count", lambda: 8)
        schedule = PreferenceSchedule.constant((1.0, 1.0))
        with caplog.at_level(logging.INFO, logger="intertemporal"):
            results = sweep_eta(peril, schedule, [0.0, 0.5, 1.0], MAX, 20, PlanConfig(horizon=3))
        assert "[sweep] 3 runs on 3 worker processes" in caplog.text
        assert [eta for eta, _, _ in results] == [0.0, 0.5, 1.0]

    def test_deviations_are_logged(self, peril, caplog):
        schedule = PreferenceSchedule.constant((1.0, 1.0))
        reference = [(0.0, TrajectorySpec((), ((0, PLAY),))), (1.0, TrajectorySpec((), ((0, WORK),)))]
        with caplog.at_level(logging.WARNING, logger="intertemporal"):
            results = sweep_eta(peril, schedule, [0.0, 1.0], MAX, 20, PlanConfig(horizon=3), workers=1,
                                reference=reference)
        deviations = shape_deviations(results, reference)
        assert [(eta, expected) for eta, _, expected in deviations] == [(1.0, reference[1][1])]
        assert [r.levelname for r in caplog.records] == ["WARNING"]
        assert "eta=1 deviates" in caplog.records[0].getMessage()

    def test_workers_do_not_change_results(self, peril):
        schedule = PreferenceSchedule.constant((1.0, 1.0))
        serial = sweep_eta(peril, schedule, [0.0, 0.5, 1.0], MAX, 20, PlanConfig(horizon=3), workers=1)
        parallel = sweep_eta(peril, schedule, [0.0, 0.5, 1.0], MAX, 20, PlanConfig(horizon=3), workers=2)
        assert [(eta, t) for eta, t, _ in serial] == [(eta, t) for eta, t, _ in parallel]
        assert [v for _, _, v in serial] == pytest.approx([v for _, _, v in parallel])


class TestGenerationsOnPlayn:
    def test_full_memory_plays_once(self, playn, sweep):
        eta, trajectory, v1 = sweep[-1]
        assert eta == 1.0
        assert format_trajectory(trajectory, playn.action_names) == "p,w*"
        assert v1 == pytest.approx(3.2, abs=1e-3)

    def test_no_memory_settles_into_play_every_ten(self, playn, sweep):
        eta, trajectory, v1 = sweep[0]
        assert eta == 0.0
        assert trajectory == shaped(playn, "p5,(w9,p)*")
        assert v1 == pytest.approx(2.635, abs=1e-3)

    @pytest.mark.parametrize("row", range(len(ETA_TABLE)))
    def test_shape_of_every_row(self, playn, sweep, row):
        eta, shape, _ = ETA_TABLE[row]
        assert sweep[row][1] == shaped(playn, shape)

    def test_reference_shapes_match_table(self, playn, sweep):
        assert dict(playn.reference_shapes) == {eta: shaped(playn, shape) for eta, shape, _ in ETA_TABLE}
        assert shape_deviations(sweep, playn.reference_shapes) == []

    @pytest.mark.parametrize("row", range(len(ETA_TABLE)))
    def test_v1_column(self, sweep, row):
        eta, _, expected = ETA_TABLE[row]
        assert sweep[row][0] == eta
        assert sweep[row][2] == pytest.approx(expected, abs=0.01)

    @pytest.mark.parametrize("row", range(len(ETA_TABLE) - 1))
    def test_tail_plays_every_ten(self, sweep, row):
        _, cycle = sweep[row][1].actions()
        assert len(cycle) == 10
        assert cycle.count(PLAY) == 1

    def test_patient_generations_play_first(self, sweep):
        eta, trajectory, _ = sweep[-2]
        assert eta == 0.98
        assert trajectory.pair_at(0)[1] == PLAY
