"""Tests for consensusnav.world."""

import json

import numpy as np
import pytest

from consensusnav import world
from consensusnav.errors import InvalidPlacement, MalformedEpisode, MalformedScene
from consensusnav.utils import stable_seed
from consensusnav.world import (
    AgentPose,
    Goal,
    Query,
    Relation,
    SensorNoise,
    check_success,
    distance_to_goal,
    episode_from_dict,
    goal_objects,
    load_demo_scene,
    load_episode,
    load_scene,
    match_score,
    observe,
    phrase_embedding,
    relation_holds,
    scene_from_dict,
    step,
    token_embedding,
)


def _scene(width=5, height=5, obstacles=(), objects=()):
    return scene_from_dict({
        "width": width,
        "height": height,
        "cell_size": 0.25,
        "obstacles": [list(c) for c in obstacles],
        "objects": list(objects),
    })


def _obj(oid, category, footprint, attributes=()):
    return {"id": oid, "category": category, "attributes": list(attributes),
            "footprint": [list(c) for c in footprint], "embedding_seed": oid}


@pytest.fixture
def chair_scene():
    return _scene(objects=[_obj(1, "chair", [(2, 2)], ["red"])])


class TestEmbeddings:
    def test_unit_norm(self):
        assert np.linalg.norm(token_embedding("chair")) == pytest.approx(1.0)
        assert np.linalg.norm(phrase_embedding("chair", ("red",))) == pytest.approx(1.0)

    def test_deterministic(self):
        assert np.array_equal(token_embedding("sofa"), token_embedding("sofa"))

    def test_group_component_shared(self):
        def unit(seed):
            v = np.random.default_rng(seed).standard_normal(16)
            return v / np.linalg.norm(v)

        group = unit(stable_seed("group", "furniture"))
        expected = unit(stable_seed("token", "chair")) + 0.5 * group
        expected /= np.linalg.norm(expected)
        assert np.allclose(token_embedding("chair", 16), expected)
        assert np.allclose(token_embedding("plant", 16), unit(stable_seed("token", "plant")))

    def test_attribute_shifts_phrase(self):
        red = phrase_embedding("chair", ("red",))
        blue = phrase_embedding("chair", ("blue",))
        assert red @ phrase_embedding("chair", ("red",)) > red @ blue


class TestLoadScene:
    def test_minimal(self, tmp_path, chair_scene):
        path = tmp_path / "one.json"
        path.write_text(json.dumps({
            "width": 5, "height": 5, "cell_size": 0.25, "obstacles": [],
            "objects": [_obj(1, "chair", [(2, 2)])],
        }))
        scene = load_scene(str(path))
        assert len(scene.objects) == 1
        assert scene.name == "one"
        assert scene.objects[0].centroid == (0.625, 0.625)

    def test_object_on_wall(self):
        with pytest.raises(InvalidPlacement) as exc_info:
            _scene(obstacles=[(2, 2)], objects=[_obj(1, "chair", [(2, 2)])])
        assert exc_info.value.object_id == 1

    def test_object_out_of_bounds(self):
        with pytest.raises(InvalidPlacement):
            _scene(objects=[_obj(1, "chair", [(5, 0)])])

    def test_missing_size(self):
        with pytest.raises(MalformedScene):
            scene_from_dict({"obstacles": []})

    def test_duplicate_ids(self):
        with pytest.raises(MalformedScene, match="duplicate"):
            _scene(objects=[_obj(1, "chair", [(1, 1)]), _obj(1, "sofa", [(3, 3)])])

    def test_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(MalformedScene):
            load_scene(str(path))

    def test_occupancy_read_only(self, chair_scene):
        with pytest.raises(ValueError):
            chair_scene.occupancy[0, 0] = True

    def test_demo_scene(self):
        scene = load_demo_scene("office_small")
        assert (scene.width, scene.height) == (12, 20)
        assert len(scene.objects) == 9
        assert sum(o.category == "chair" for o in scene.objects) == 3

    def test_unknown_demo_scene(self):
        with pytest.raises(MalformedScene):
            load_demo_scene("nope")

    def test_vocabulary(self):
        cats, attrs = load_demo_scene("office_small").vocabulary
        assert "chair" in cats and "bed" in cats
        assert list(cats) == sorted(cats)
        assert "red" in attrs


class TestEpisodes:
    def _doc(self, **over):
        doc = {
            "episode_id": "e1",
            "start": {"x": 0.125, "y": 0.125, "heading": 0},
            "query": {"raw_text": "red chair", "main_goal": {"category": "chair", "attributes": ["red"]},
                      "goal_object_ids": [1]},
        }
        doc.update(over)
        return doc

    def test_defaults(self, chair_scene):
        ep = episode_from_dict(self._doc(), chair_scene)
        assert ep.max_steps == 500
        assert ep.success_radius == 1.0
        assert ep.query.goal_object_ids == frozenset({1})

    def test_empty_goal_set(self, chair_scene):
        doc = self._doc()
        doc["query"]["goal_object_ids"] = []
        with pytest.raises(MalformedEpisode):
            episode_from_dict(doc, chair_scene)

    def test_unknown_goal(self, chair_scene):
        doc = self._doc()
        doc["query"]["goal_object_ids"] = [9]
        with pytest.raises(MalformedEpisode, match="unknown goal"):
            episode_from_dict(doc, chair_scene)

    def test_absent_relation_category(self, chair_scene):
        doc = self._doc()
        doc["query"]["relations"] = [{"relation": "near", "categories": ["table"]}]
        with pytest.raises(MalformedEpisode, match="absent category"):
            episode_from_dict(doc, chair_scene)

    def test_between_needs_two(self, chair_scene):
        doc = self._doc()
        doc["query"]["relations"] = [["between", ["chair"]]]
        with pytest.raises(MalformedEpisode):
            episode_from_dict(doc, chair_scene)

    def test_start_on_obstacle(self):
        scene = _scene(obstacles=[(0, 0)], objects=[_obj(1, "chair", [(2, 2)])])
        with pytest.raises(MalformedEpisode, match="free cell"):
            episode_from_dict(self._doc(), scene)

    def test_load_with_demo_scene(self, tmp_path):
        path = tmp_path / "ep.json"
        path.write_text(json.dumps({
            "scene": "office_small",
            "start": {"x": 1.375, "y": 4.375, "heading": 90},
            "query": {"main_goal": {"category": "chair"}, "goal_object_ids": [1]},
        }))
        ep = load_episode(str(path))
        assert ep.episode_id == "ep"
        assert ep.scene.name == "office_small"

    def test_load_with_relative_scene(self, tmp_path):
        (tmp_path / "s.json").write_text(json.dumps({
            "width": 5, "height": 5, "objects": [_obj(1, "chair", [(2, 2)])],
        }))
        path = tmp_path / "ep.json"
        path.write_text(json.dumps(self._doc(scene="s.json")))
        assert load_episode(str(path)).scene.name == "s"


class TestStep:
    def test_turn_left(self, chair_scene):
        assert step(chair_scene, AgentPose(0.125, 0.125, 0), "turn_left").heading == 30

    def test_turn_wraps(self, chair_scene):
        assert step(chair_scene, AgentPose(0.125, 0.125, 330), "turn_left").heading == 0
        assert step(chair_scene, AgentPose(0.125, 0.125, 0), "turn_right").heading == 330

    def test_twelve_turns_identity(self, chair_scene):
        pose = AgentPose(0.125, 0.125, 60)
        for _ in range(12):
            pose = step(chair_scene, pose, "turn_left")
        assert pose.heading == 60

    def test_forward(self, chair_scene):
        pose = step(chair_scene, AgentPose(0.125, 0.125, 90), "move_forward")
        assert (pose.x, pose.y) == (0.125, 0.375)

    def test_forward_into_obstacle(self):
        scene = _scene(obstacles=[(1, 0)])
        pose = AgentPose(0.125, 0.125, 0)
        assert step(scene, pose, "move_forward") == pose

    def test_forward_out_of_bounds(self, chair_scene):
        pose = AgentPose(0.125, 0.125, 180)
        assert step(chair_scene, pose, "move_forward") == pose

    @pytest.mark.parametrize("action", ["look_up", "look_down", "stop"])
    def test_identity_actions(self, chair_scene, action):
        pose = AgentPose(0.625, 0.375, 120)
        assert step(chair_scene, pose, action) == pose

    def test_unknown_action(self, chair_scene):
        with pytest.raises(ValueError):
            step(chair_scene, AgentPose(0.125, 0.125, 0), "jump")


class TestObserve:
    def test_empty_scene_all_visible(self):
        scene = _scene()
        obs = observe(scene, AgentPose(0.625, 0.625, 0), fov=360.0, sensor_range=5.0)
        assert len(obs.visible_cells) == 25
        assert not obs.obstacle_cells

    def test_object_behind_wall(self):
        wall = [(2, y) for y in range(5)]
        scene = _scene(obstacles=wall, objects=[_obj(1, "chair", [(4, 2)])])
        obs = observe(scene, AgentPose(0.125, 0.625, 0), fov=360.0)
        assert obs.detections == ()
        assert (2, 2) in obs.obstacle_cells
        assert (4, 2) not in obs.visible_cells

    def test_footprint_subset_of_visible(self, chair_scene):
        obs = observe(chair_scene, AgentPose(0.125, 0.625, 0), noise=SensorNoise(0.3, 1))
        for det in obs.detections:
            assert det.visible_footprint <= obs.visible_cells

    def test_fov_limits_view(self, chair_scene):
        obs = observe(chair_scene, AgentPose(0.125, 0.625, 180), fov=90.0)
        assert obs.detections == ()

    def test_zero_noise_exact(self, chair_scene):
        obs = observe(chair_scene, AgentPose(0.125, 0.625, 0), noise=SensorNoise(0.0, 3))
        assert np.array_equal(obs.detections[0].descriptor, chair_scene.objects[0].true_embedding)

    def test_noise_is_seeded(self, chair_scene):
        pose = AgentPose(0.125, 0.625, 0)
        a = observe(chair_scene, pose, noise=SensorNoise(0.5, 3), view_index=4)
        b = observe(chair_scene, pose, noise=SensorNoise(0.5, 3), view_index=4)
        c = observe(chair_scene, pose, noise=SensorNoise(0.5, 3), view_index=5)
        assert np.array_equal(a.detections[0].descriptor, b.detections[0].descriptor)
        assert not np.array_equal(a.detections[0].descriptor, c.detections[0].descriptor)
        assert np.linalg.norm(c.detections[0].descriptor) == pytest.approx(1.0)

    def test_removing_wall_never_shrinks_view(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            walls = {(int(x), int(y)) for x, y in rng.integers(0, 8, size=(10, 2))} - {(0, 0)}
            pose = AgentPose(0.125, 0.125, 45)
            full = _scene(8, 8, walls)
            fewer = _scene(8, 8, sorted(walls)[1:])
            seen_full = observe(full, pose).visible_cells
            seen_fewer = observe(fewer, pose).visible_cells
            assert seen_full <= seen_fewer

    def test_negative_noise_rejected(self):
        with pytest.raises(ValueError):
            SensorNoise(-0.1)


class TestSuccess:
    def _episode(self, scene, radius=1.0):
        return world.Episode("e", scene, Query("chair", Goal("chair"), (), frozenset({1})),
                             AgentPose(0.125, 0.125, 0), success_radius=radius)

    def test_at_centroid(self):
        scene = _scene(10, 10, objects=[_obj(1, "chair", [(2, 2)])])
        assert check_success(AgentPose(0.625, 0.625, 0), self._episode(scene))

    def test_too_far(self):
        scene = _scene(20, 20, objects=[_obj(1, "chair", [(2, 2)])])
        assert not check_success(AgentPose(0.625 + 1.5, 0.625, 0), self._episode(scene))

    def test_closed_boundary(self):
        scene = _scene(20, 20, objects=[_obj(1, "chair", [(2, 2)])])
        assert check_success(AgentPose(1.625, 0.625, 0), self._episode(scene))

    def test_distance_without_goals(self, chair_scene):
        assert distance_to_goal(AgentPose(0.125, 0.125, 0), chair_scene, []) == float("inf")


class TestRelations:
    @pytest.fixture
    def room(self):
        # table centroid at (1.125, 1.125)
        return _scene(12, 12, objects=[
            _obj(1, "table", [(4, 4)]),
            _obj(2, "chair", [(8, 4)], ["red"]),      # +x of the table, 1.0 m away
            _obj(3, "chair", [(4, 1)], ["red"]),      # -y of the table
            _obj(4, "chair", [(11, 11)], ["blue"]),   # far away
            _obj(5, "lamp", [(4, 8)]),
        ])

    def test_near(self, room):
        near = Relation("near", ("table",))
        assert relation_holds(room, room.object_by_id(2), near)
        assert not relation_holds(room, room.object_by_id(4), near)

    def test_directional(self, room):
        assert relation_holds(room, room.object_by_id(2), Relation("right_of", ("table",)))
        assert not relation_holds(room, room.object_by_id(2), Relation("left_of", ("table",)))
        assert relation_holds(room, room.object_by_id(3), Relation("behind", ("table",)))
        assert relation_holds(room, room.object_by_id(5), Relation("in_front_of", ("table",)))

    def test_between(self):
        scene = _scene(12, 12, objects=[
            _obj(1, "table", [(1, 5)]), _obj(2, "lamp", [(9, 5)]),
            _obj(3, "chair", [(5, 5)]), _obj(4, "chair", [(5, 11)]),
        ])
        rel = Relation("between", ("table", "lamp"))
        assert relation_holds(scene, scene.object_by_id(3), rel)
        assert not relation_holds(scene, scene.object_by_id(4), rel)

    def test_match_score(self, room):
        q = Query("red chair right of table", Goal("chair", ("red",)),
                  (Relation("right_of", ("table",)),))
        assert match_score(room, room.object_by_id(2), q) == 1.0
        assert match_score(room, room.object_by_id(3), q) == pytest.approx(0.5 * 2 / 3)
        assert match_score(room, room.object_by_id(1), q) == 0.0
        assert goal_objects(room, q) == frozenset({2})
