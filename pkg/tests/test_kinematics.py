import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drope.errors import DimensionMismatchError, InvalidArgumentError
from drope.kinematics import (
    ACCEL_LIMIT,
    YAW_RATE_LIMIT,
    ActionGrid,
    AgentState,
    ControlAction,
    ZERO_ACTION,
    check_action_bounds,
    kinematic_step,
    min_ade,
)

action_st = st.tuples(
    st.floats(min_value=-ACCEL_LIMIT, max_value=ACCEL_LIMIT),
    st.floats(min_value=-YAW_RATE_LIMIT, max_value=YAW_RATE_LIMIT),
)


class TestKinematicStep:
    def test_straight_line(self):
        state = kinematic_step(AgentState(0, 0, 0, 1.0), ZERO_ACTION, 0.5)
        assert (state.x, state.y, state.yaw, state.v) == (0.5, 0.0, 0.0, 1.0)

    def test_turn_in_place(self):
        state = kinematic_step(AgentState(2.0, 3.0, 0.0, 0.0), ControlAction(0.0, 0.8), 0.5)
        assert (state.x, state.y) == (2.0, 3.0)
        assert state.yaw == pytest.approx(0.4)
        assert state.v == 0.0

    def test_semi_implicit_update_order(self):
        # heading advances before the position integrates
        state = kinematic_step(
            AgentState(0, 0, 0, 1.0), ControlAction(0.0, math.pi / 2), 0.5
        )
        assert state.yaw == pytest.approx(math.pi / 4)
        assert state.x == pytest.approx(0.5 * math.cos(math.pi / 4))
        assert state.y == pytest.approx(0.5 * math.sin(math.pi / 4))

    def test_speed_clamped_at_zero(self):
        state = kinematic_step(AgentState(0, 0, 0, 0.5), ControlAction(-4.0, 0.0), 0.5)
        assert state.v == 0.0

    @given(st.lists(action_st, min_size=1, max_size=30))
    @settings(max_examples=100)
    def test_speed_never_negative(self, actions):
        state = AgentState(0.0, 0.0, 0.0, 1.0)
        for accel, yaw_rate in actions:
            state = kinematic_step(state, ControlAction(accel, yaw_rate), 0.5)
            assert state.v >= 0.0
            assert 0.0 <= state.yaw < 2 * math.pi

    def test_invalid_dt(self):
        with pytest.raises(InvalidArgumentError):
            kinematic_step(AgentState(0, 0, 0, 0), ZERO_ACTION, 0.0)

    def test_non_finite_state_rejected(self):
        with pytest.raises(InvalidArgumentError):
            AgentState(float("inf"), 0, 0, 0)

    def test_action_bounds_enforced(self):
        with pytest.raises(InvalidArgumentError):
            check_action_bounds(ControlAction(ACCEL_LIMIT + 0.1, 0.0))
        with pytest.raises(InvalidArgumentError):
            check_action_bounds(ControlAction(0.0, -YAW_RATE_LIMIT - 0.1))
        assert check_action_bounds(ZERO_ACTION) is ZERO_ACTION
        with pytest.raises(InvalidArgumentError):
            ControlAction(float("nan"), 0.0)


class TestActionGrid:
    def test_default_shape_and_zero_bin(self):
        grid = ActionGrid.default()
        assert grid.n_actions == 81
        zero = grid.action(grid.zero_action_index)
        assert zero.accel == 0.0 and zero.yaw_rate == 0.0

    def test_index_layout(self):
        grid = ActionGrid.default()
        action = grid.action(2 * grid.n_yaw + 5)
        assert action.accel == grid.accel_centers[2]
        assert action.yaw_rate == grid.yaw_rate_centers[5]

    def test_out_of_range_index(self):
        with pytest.raises(InvalidArgumentError):
            ActionGrid.default().action(81)

    def test_centers_span_limits(self):
        grid = ActionGrid.default()
        assert grid.accel_centers[0] == -ACCEL_LIMIT
        assert grid.accel_centers[-1] == ACCEL_LIMIT
        assert grid.yaw_rate_centers[0] == -YAW_RATE_LIMIT


class TestMinAde:
    def test_exact_match_is_zero(self):
        truth = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
        assert min_ade(truth, truth) == 0.0

    def test_constant_offset_three_four_five(self):
        truth = np.zeros((4, 2))
        offset = truth + np.array([3.0, 4.0])
        assert min_ade(offset, truth) == pytest.approx(5.0)

    def test_min_over_samples(self):
        truth = np.zeros((4, 2))
        exact = truth.copy()
        offset = truth + np.array([3.0, 4.0])
        assert min_ade(np.stack([offset, exact]), truth) == 0.0

    def test_horizon_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            min_ade(np.zeros((3, 2)), np.zeros((4, 2)))
