import json

import numpy as np
import pytest

from drope.errors import ConfigurationError, InvalidArgumentError
from drope.kinematics import ZERO_ACTION, kinematic_step
from drope.scene import (
    MapSegment,
    Scene,
    load_scene,
    make_arc_polyline,
    make_constant_velocity_scene,
    make_scene,
    make_straight_polyline,
    polyline_arc_length,
    save_scene,
    segment_polyline,
)


class TestMapSegment:
    def test_straight_segment_local_frame(self):
        # 25 m straight road, 11 points: midpoint index 5 sits exactly at center
        points = make_straight_polyline((10.0, 5.0), 0.0, 25.0, spacing=2.5)
        assert len(points) == 11
        segment = MapSegment.from_points(points)
        assert segment.local_shape[0] == pytest.approx([-12.5, 0.0], abs=1e-9)
        assert segment.local_shape[-1] == pytest.approx([12.5, 0.0], abs=1e-9)
        assert segment.local_shape[5] == pytest.approx([0.0, 0.0], abs=1e-12)

    def test_rotated_segment_recovers_shape(self):
        heading = 0.7
        points = make_straight_polyline((0.0, 0.0), heading, 20.0, spacing=5.0)
        segment = MapSegment.from_points(points)
        assert segment.anchor_heading == pytest.approx(heading)
        assert np.max(np.abs(segment.local_shape[:, 1])) < 1e-9

    def test_single_point_has_zero_heading(self):
        segment = MapSegment.from_points(np.array([[35.0, -2.0]]))
        assert segment.anchor_heading == 0.0
        assert np.array_equal(segment.local_shape, np.zeros((1, 2)))

    def test_too_long_segment_rejected(self):
        points = make_straight_polyline((0, 0), 0.0, 30.0)
        with pytest.raises(InvalidArgumentError):
            MapSegment.from_points(points)

    def test_anchor_maps_to_origin(self):
        points = make_arc_polyline((0, 0), 20.0, 0.0, 1.0, spacing=4.0)
        segment = MapSegment.from_points(points)
        mid = (len(points) - 1) // 2
        assert segment.anchor_xy == pytest.approx(points[mid])
        assert segment.local_shape[mid] == pytest.approx([0.0, 0.0], abs=1e-12)


class TestSegmentPolyline:
    def test_segments_respect_max_length(self):
        points = make_straight_polyline((0, 0), 0.3, 90.0, spacing=3.0)
        segments = segment_polyline(points, 25.0)
        for segment in segments:
            assert segment.arc_length <= 25.0 + 1e-9

    def test_segments_cover_the_polyline(self):
        points = make_arc_polyline((0, 0), 40.0, -1.0, 2.0, spacing=2.0)
        segments = segment_polyline(points, 25.0)
        total = sum(segment.arc_length for segment in segments)
        assert total == pytest.approx(polyline_arc_length(points), rel=1e-9)
        for first, second in zip(segments, segments[1:]):
            assert first.points[-1] == pytest.approx(second.points[0])

    def test_single_point_input(self):
        segments = segment_polyline(np.array([[1.0, 2.0]]))
        assert len(segments) == 1
        assert segments[0].anchor_heading == 0.0


class TestScene:
    def test_generator_is_deterministic(self):
        a = make_scene(seed=5)
        b = make_scene(seed=5)
        assert np.array_equal(a.agent_states, b.agent_states)

    def test_agent_count_bounds(self):
        with pytest.raises(ConfigurationError):
            make_scene(n_agents=1)
        with pytest.raises(ConfigurationError):
            make_scene(n_agents=9)

    def test_constant_velocity_scene_speeds_constant(self):
        scene = make_constant_velocity_scene(seed=2)
        assert np.all(scene.agent_states[:, :, 3] == scene.agent_states[:, :1, 3])

    def test_constant_velocity_states_replay_exactly(self):
        scene = make_constant_velocity_scene(seed=3, n_steps=8)
        for agent in range(scene.n_agents):
            state = scene.state(agent, 0)
            for t in range(1, scene.n_steps):
                state = kinematic_step(state, ZERO_ACTION, scene.dt)
                assert np.array_equal(state.as_array(), scene.agent_states[agent, t])

    def test_prefix_and_append(self):
        scene = make_scene(seed=1, n_steps=10)
        prefix = scene.prefix(4)
        assert prefix.n_steps == 4
        grown = prefix.with_appended_states(prefix.agent_states[:, -1])
        assert grown.n_steps == 5

    def test_translation_moves_states_and_map(self):
        scene = make_scene(seed=4)
        moved = scene.translated(10.0, -3.0)
        assert moved.agent_states[:, :, 0] == pytest.approx(scene.agent_states[:, :, 0] + 10.0)
        assert moved.segments[0].anchor_xy == pytest.approx(
            scene.segments[0].anchor_xy + np.array([10.0, -3.0])
        )
        # anchor-frame shapes carry no absolute pose, so they barely move
        assert moved.segments[0].local_shape == pytest.approx(
            scene.segments[0].local_shape, abs=1e-9
        )

    def test_speed_validation(self):
        with pytest.raises(InvalidArgumentError):
            Scene(np.array([[[0.0, 0.0, 0.0, -1.0]]]), [], 0.5)


class TestSceneIO:
    def test_round_trip_is_exact(self, tmp_path):
        scene = make_scene(seed=6, n_steps=6)
        path = tmp_path / "scene.json"
        save_scene(scene, path)
        loaded = load_scene(path)
        assert np.array_equal(loaded.agent_states, scene.agent_states)
        assert loaded.dt == scene.dt
        assert len(loaded.segments) == len(scene.segments)
        for a, b in zip(loaded.segments, scene.segments):
            assert np.array_equal(a.points, b.points)

    def test_malformed_file_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigurationError):
            load_scene(path)
        path.write_text(json.dumps({"dt": 0.5}))
        with pytest.raises(ConfigurationError):
            load_scene(path)

    def test_schema_matches_docs(self, tmp_path):
        scene = make_constant_velocity_scene(seed=0, n_steps=3)
        path = tmp_path / "scene.json"
        save_scene(scene, path)
        payload = json.loads(path.read_text())
        assert set(payload) == {"dt", "agents", "map"}
        assert len(payload["agents"][0]["states"][0]) == 4
        assert len(payload["map"][0]["points"][0]) == 2
