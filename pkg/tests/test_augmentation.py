import numpy as np
import pytest

from aggregation import (GammaSigmaStrategy, Objective, ObjectiveSet, WeightState, aggregate_trajectory_value,
                         propagate_weights)
from augmentation import (AugmentedState, WindowCounterObjective, build_augmented_mdp, lift_window_counter,
                          y_update)
from conftest import PLAY, WORK, random_actions, random_objectives
from errors import ZeroAggregateDiscountError
from generalized_mdp import GeneralizedMDP, TrajectorySpec, return_of_trajectory, trajectory_from_actions

MAX = GammaSigmaStrategy("max")


def playn_window(n=10):
    return WindowCounterObjective("playn", n, PLAY, 0.5, 0.9)


class TestYUpdate:
    def test_peril_play(self, peril, peril_ws):
        y = y_update((1.0, 1.0), 0, PLAY, peril, MAX, peril_ws)
        assert y == pytest.approx((5 / 9, 1.0))

    def test_equal_discounts_leave_y(self, rng):
        objs = random_objectives(rng, equal_discounts=True)
        y = y_update((0.3, 0.7), 0, 0, objs, MAX, WeightState.initial((1.0, 1.0)))
        assert y == pytest.approx((0.3, 0.7))

    def test_unit_constant_matches_propagation(self, peril, peril_ws):
        y = y_update((1.0, 1.0), 0, PLAY, peril, GammaSigmaStrategy("const", 1.0), peril_ws)
        assert y == pytest.approx(propagate_weights(peril_ws, 0, PLAY, peril).weights)

    def test_zero_aggregate_discount(self, peril, peril_ws):
        with pytest.raises(ZeroAggregateDiscountError):
            y_update((1.0, 1.0), 0, PLAY, peril, GammaSigmaStrategy("normalize"),
                     WeightState.initial((1.0, -1.0)).with_weights((0.9, -0.5)))

    def test_multiplicative_along_histories(self, rng):
        for _ in range(100):
            objs = random_objectives(rng)
            ws = WeightState.initial((1.0, 1.0))
            pairs = trajectory_from_actions(objs.mdp, 0, random_actions(rng, objs.mdp.n_actions, 8)).prefix
            y_all = (1.0, 1.0)
            for s, a in pairs:
                y_all = y_update(y_all, s, a, objs, MAX, ws)
            y_head, y_tail = (1.0, 1.0), (1.0, 1.0)
            for s, a in pairs[:3]:
                y_head = y_update(y_head, s, a, objs, MAX, ws)
            for s, a in pairs[3:]:
                y_tail = y_update(y_tail, s, a, objs, MAX, ws)
            assert np.asarray(y_all) == pytest.approx(np.asarray(y_head) * np.asarray(y_tail), rel=1e-12)


class TestAugmentedMDP:
    def test_peril_tau3(self, peril, peril_ws):
        aug = build_augmented_mdp(peril, peril_ws, MAX)
        tau3 = TrajectorySpec(((0, PLAY),), ((0, WORK),))
        assert aug.trajectory_return(tau3) == pytest.approx(3.2, abs=1e-9)

    def test_single_objective_factors_stay_one(self, peril):
        objs = ObjectiveSet((peril[0],))
        aug = build_augmented_mdp(objs, WeightState.initial((2.0,)), MAX)
        state = aug.initial_state(0)
        for a in (PLAY, WORK, PLAY):
            assert aug.reward(state, a) == pytest.approx(2.0 * objs.rewards[0, 0, a])
            state = AugmentedState(0, aug.step(state, a))
            assert state.y == (1.0,)

    def test_transitions_carry_factors(self, rng):
        objs = random_objectives(rng, n_states=3, n_actions=2, deterministic=False)
        aug = build_augmented_mdp(objs, WeightState.initial((1.0, 1.0)), MAX)
        successors = aug.transitions(aug.initial_state(0), 1)
        assert sum(p for p, _ in successors) == pytest.approx(1.0)
        assert len({nxt.y for _, nxt in successors}) == 1

    @pytest.mark.parametrize("strategy", [GammaSigmaStrategy("max"), GammaSigmaStrategy("normalize"),
                                          GammaSigmaStrategy("const", 0.8), GammaSigmaStrategy("const", 0.01)])
    def test_augmentation_identity(self, rng, strategy):
        for _ in range(200):
            objs = random_objectives(rng, n_states=int(rng.integers(1, 4)), n_actions=int(rng.integers(1, 3)))
            ws = WeightState.initial(rng.uniform(0.1, 2.0, size=2), constant=float(rng.normal()))
            tau = trajectory_from_actions(objs.mdp, int(rng.integers(objs.mdp.n_states)),
                                          random_actions(rng, objs.mdp.n_actions, 50))
            aug = build_augmented_mdp(objs, ws, strategy)
            assert aug.trajectory_return(tau) == pytest.approx(aggregate_trajectory_value(objs, ws, tau), abs=1e-9)

    @pytest.mark.parametrize("strategy", [GammaSigmaStrategy("const", 0.01), GammaSigmaStrategy("const", 0.5),
                                          GammaSigmaStrategy("normalize")])
    def test_small_aggregate_discount_on_endless_trajectory(self, peril, peril_ws, strategy):
        aug = build_augmented_mdp(peril, peril_ws, strategy)
        tau3 = TrajectorySpec(((0, PLAY),), ((0, WORK),))
        assert aug.trajectory_return(tau3) == pytest.approx(3.2, abs=1e-9)
        tau_alt = TrajectorySpec((), ((0, PLAY), (0, WORK)))
        assert aug.trajectory_return(tau_alt) == pytest.approx(aggregate_trajectory_value(peril, peril_ws, tau_alt),
                                                               abs=1e-9)

    def test_factor_identity_stepwise(self, rng):
        for _ in range(100):
            objs = random_objectives(rng)
            ws = WeightState.initial(rng.uniform(0.1, 2.0, size=2))
            aug = build_augmented_mdp(objs, ws, GammaSigmaStrategy("normalize"))
            state, g_sigma, gammas = aug.initial_state(0), 1.0, np.ones(2)
            for s, a in trajectory_from_actions(objs.mdp, 0, random_actions(rng, objs.mdp.n_actions, 30)).prefix:
                state = AugmentedState(s, state.y)
                assert g_sigma * np.asarray(state.y) == pytest.approx(gammas, rel=1e-9)
                g_sigma *= aug.discount(state, a)
                gammas = gammas * objs.discounts[:, s, a]
                state = AugmentedState(s, aug.step(state, a))

    def test_infinite_random_trajectories(self, rng):
        for _ in range(20):
            objs = random_objectives(rng, high=0.8)
            ws = WeightState.initial(rng.uniform(0.1, 2.0, size=2))
            tau = trajectory_from_actions(objs.mdp, 0, random_actions(rng, objs.mdp.n_actions, 3),
                                          random_actions(rng, objs.mdp.n_actions, 2))
            aug = build_augmented_mdp(objs, ws, MAX)
            assert aug.trajectory_return(tau) == pytest.approx(aggregate_trajectory_value(objs, ws, tau), abs=1e-9)

    def test_rejects_invalid_model(self):
        transition = np.zeros((1, 1, 1))
        transition[0, 0, 0] = 0.5
        objs = ObjectiveSet((Objective("bad", GeneralizedMDP(transition, 0.0, 0.5)),))
        with pytest.raises(ValueError):
            build_augmented_mdp(objs, WeightState.initial((1.0,)), MAX)


class TestWindowCounter:
    def test_counter_rule(self):
        window = playn_window(3)
        assert window.next_counter(2, PLAY) == 0
        assert window.next_counter(0, WORK) == 1
        assert window.next_counter(2, WORK) == 2

    def test_lifted_shape(self, peril):
        lift = lift_window_counter(playn_window(), peril, position=1)
        assert lift.objectives.names == ["play", "playn", "work"]
        assert lift.objectives.mdp.n_states == 10
        assert lift.lift_state(0) == 9
        assert lift.base_state(9) == 0 and lift.counter(9) == 9

    def test_play_every_ten_always_pays(self, peril):
        lift = lift_window_counter(playn_window(), peril)
        base = TrajectorySpec((), ((0, PLAY),) + ((0, WORK),) * 9)
        lifted = lift.lift_trajectory(base)
        value = return_of_trajectory(lift.objectives[lift.position].mdp, lifted)
        assert value == pytest.approx(0.5 / (1 - 0.9 ** 10), abs=1e-12)

    def test_consecutive_plays(self, peril):
        lift = lift_window_counter(playn_window(), peril)
        lifted = lift.lift_trajectory(TrajectorySpec(((0, PLAY), (0, PLAY)), ((0, WORK),)))
        assert return_of_trajectory(lift.objectives[lift.position].mdp, lifted) == pytest.approx(0.5)

    def test_never_play(self, peril):
        lift = lift_window_counter(playn_window(), peril)
        lifted = lift.lift_trajectory(TrajectorySpec((), ((0, WORK),)))
        assert return_of_trajectory(lift.objectives[lift.position].mdp, lifted) == 0.0

    def test_base_objectives_unchanged(self, peril):
        lift = lift_window_counter(playn_window(), peril)
        tau = TrajectorySpec(((0, PLAY),) * 3, ((0, WORK),) * 4 + ((0, PLAY),))
        lifted = lift.lift_trajectory(tau)
        for obj in peril:
            i = lift.objectives.index(obj.name)
            assert return_of_trajectory(lift.objectives[i].mdp, lifted) == pytest.approx(
                return_of_trajectory(obj.mdp, tau), abs=1e-12)

    def test_lift_preserves_window_rule(self, peril, rng):
        for n in (1, 2, 5, 10):
            window = playn_window(n)
            lift = lift_window_counter(window, peril)
            for _ in range(25):
                actions = random_actions(rng, 2, 40)
                tau = TrajectorySpec(tuple((0, a) for a in actions), ())
                lifted_value = return_of_trajectory(lift.objectives[lift.position].mdp, lift.lift_trajectory(tau))
                direct = sum(0.9 ** t * r for t, r in enumerate(window.step_rewards(actions)))
                assert lifted_value == pytest.approx(direct, abs=1e-12)

    def test_project_round_trip(self, peril):
        lift = lift_window_counter(playn_window(), peril)
        tau = TrajectorySpec(((0, PLAY),) * 5, ((0, WORK),) * 9 + ((0, PLAY),))
        assert lift.project_trajectory(lift.lift_trajectory(tau)) == tau.canonical()
