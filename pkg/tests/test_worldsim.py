import math

import pytest

from boxsense.geometry import Obb, Pose2, obb_corners
from boxsense.worldsim import (
    ContactKind,
    GenerationError,
    ObstacleState,
    World,
    clamp_command,
    contact_graph,
    make_empty_world,
    spawn_scene,
    step_world,
)
from boxsense import worldsim


def flush_box(length=1.0, width=0.3, y=0.0, gap=0.0, **kw):
    """A box whose front face touches the robot's spawn-front plus a gap."""
    front = 0.5 * worldsim.ROBOT_LENGTH + gap
    return ObstacleState(
        pose=Pose2(front + 0.5 * length, y, 0.0),
        width=width,
        length=length,
        **kw,
    )


def world_with(*obstacles) -> World:
    return World(robot_pose=Pose2(), obstacles=list(obstacles))


def drive(world, ticks, cmd=(0.4, 0.0, 0.0)):
    outcomes = [step_world(world, cmd) for _ in range(ticks)]
    return outcomes[-1]


class TestFreeMotion:
    def test_forward_advance(self):
        w = make_empty_world()
        out = step_world(w, (0.4, 0.0, 0.0))
        assert out.robot_pose.x == pytest.approx(0.016, abs=1e-12)
        assert out.realized_velocity == pytest.approx((0.4, 0.0, 0.0), abs=1e-9)
        assert out.contact_edges == []
        assert out.wrench == (0.0, 0.0, 0.0)

    def test_command_clamping(self):
        assert clamp_command((1.0, -2.0, 3.0)) == (0.4, -0.4, 0.8)

    def test_goal_flag(self):
        w = make_empty_world()
        w.robot_pose = Pose2(3.19, 0.0, 0.0)
        assert step_world(w, (0.4, 0.0, 0.0)).goal_reached

    def test_zero_command_fixed_point(self):
        w = world_with(flush_box(is_static=True))
        p0, o0 = w.robot_pose, w.obstacles[0].pose
        out = step_world(w, (0.0, 0.0, 0.0))
        assert w.robot_pose == p0
        assert w.obstacles[0].pose == o0
        assert out.wrench == (0.0, 0.0, 0.0)
        assert out.contact_edges == []


class TestPushing:
    def test_unit_mass_frictionless_box_absorbs_full_overlap(self):
        # Projection scale 1/(1 + mu*m) is 1 here, so the box clears the
        # whole attempted overlap on the first pass.
        w = world_with(flush_box(is_static=False, mass=1.0, friction_coeff=0.0))
        x0 = w.obstacles[0].pose.x
        out = step_world(w, (0.4, 0.0, 0.0))
        assert w.obstacles[0].pose.x - x0 == pytest.approx(0.016, abs=1e-9)
        assert out.realized_velocity[0] == pytest.approx(0.4, abs=1e-6)
        assert ("robot", "obs0") in out.contact_edges

    def test_scaled_projection_first_pass(self):
        # mu*m = 1 halves each pass; eight passes leave ~0.016/256 which is
        # under the resolution tolerance, so the robot is not rolled back.
        w = world_with(flush_box(is_static=False, mass=2.0, friction_coeff=0.5))
        x0 = w.obstacles[0].pose.x
        out = step_world(w, (0.4, 0.0, 0.0))
        moved = w.obstacles[0].pose.x - x0
        assert moved == pytest.approx(0.016 * (1.0 - 0.5**8), abs=1e-9)
        assert out.realized_velocity[0] == pytest.approx(0.4, abs=1e-6)

    def test_heavy_box_slows_robot(self):
        w = world_with(flush_box(is_static=False, mass=8.0, friction_coeff=0.8))
        out = drive(w, 5)
        vx = out.realized_velocity[0]
        assert 0.05 < vx < 0.39
        # Box speed matches the robot speed once the contact is loaded.
        assert w.obstacles[0].pose.x > flush_box(is_static=False).pose.x

    def test_monotone_translation_under_repeated_push(self):
        w = world_with(flush_box(is_static=False, mass=4.0, friction_coeff=0.4))
        xs = []
        for _ in range(20):
            step_world(w, (0.4, 0.0, 0.0))
            xs.append(w.obstacles[0].pose.x)
        assert all(b >= a for a, b in zip(xs, xs[1:]))
        assert xs[-1] > xs[0]

    def test_corner_push_rotates_with_lever_sign(self):
        # Contact point below the box center with a +x push gives a positive
        # torque, so theta must grow counter-clockwise.
        w = world_with(
            flush_box(length=1.2, width=0.4, y=0.30, is_static=False, mass=1.0, friction_coeff=0.0)
        )
        drive(w, 10)
        assert w.obstacles[0].pose.theta > 1e-4

    def test_static_box_blocks_robot(self):
        w = world_with(flush_box(is_static=True))
        out = step_world(w, (0.4, 0.0, 0.0))
        assert abs(out.realized_velocity[0]) <= 1e-6
        assert out.wrench[0] < 0.0
        assert ("robot", "obs0") in out.contact_edges

    def test_chain_blocks_through_movable(self):
        mov = flush_box(length=0.8, is_static=False, mass=1.0, friction_coeff=0.1)
        back = mov.pose.x + 0.4
        stat = ObstacleState(Pose2(back + 0.25, 0.0, 0.0), 0.5, 0.5, is_static=True)
        w = world_with(mov, stat)
        out = step_world(w, (0.4, 0.0, 0.0))
        assert abs(out.realized_velocity[0]) <= 1e-6
        assert ("robot", "obs0") in out.contact_edges
        assert ("obs0", "obs1") in out.contact_edges
        labels = contact_graph(w)
        assert labels == [ContactKind.DIRECT, ContactKind.INDIRECT]
        assert stat.pose == Pose2(back + 0.25, 0.0, 0.0)

    def test_edges_are_unique_unordered_pairs(self):
        w = world_with(flush_box(is_static=True))
        out = step_world(w, (0.4, 0.0, 0.0))
        assert len(set(out.contact_edges)) == len(out.contact_edges)
        for a, b in out.contact_edges:
            assert (b, a) not in out.contact_edges


class TestWallsAndContainment:
    def test_wall_contact_edge_and_containment(self):
        w = make_empty_world()
        last = None
        for _ in range(60):
            last = step_world(w, (0.0, 0.4, 0.0))
        assert ("robot", "wall_ymax") in last.contact_edges
        for x, y in obb_corners(w.robot_box):
            assert y <= w.y_max + 1e-4
        assert contact_graph(w) == []

    def test_box_pushed_against_wall_stays_inside(self):
        w = world_with(
            ObstacleState(Pose2(1.0, 0.55, 0.0), 0.4, 0.6, is_static=False, mass=1.0, friction_coeff=0.1)
        )
        w.robot_pose = Pose2(1.0, 0.0, math.pi / 2)
        for _ in range(80):
            step_world(w, (0.4, 0.0, 0.0))
        for x, y in obb_corners(w.obstacles[0].box):
            assert y <= w.y_max + 1e-4

    def test_all_bodies_contained_during_easy_episode(self):
        w = spawn_scene("easy", seed=11)
        for _ in range(300):
            step_world(w, (0.4, 0.0, 0.0))
            for box in [w.robot_box] + [o.box for o in w.obstacles]:
                for x, y in obb_corners(box):
                    assert w.x_min - 1e-4 <= x <= w.x_max + 1e-4
                    assert w.y_min - 1e-4 <= y <= w.y_max + 1e-4


class TestDeterminismAndIsolation:
    def test_spawn_deterministic(self):
        a, b = spawn_scene("medium", 3), spawn_scene("medium", 3)
        for oa, ob in zip(a.obstacles, b.obstacles):
            assert oa.pose == ob.pose
            assert (oa.width, oa.length, oa.mass, oa.friction_coeff) == (
                ob.width,
                ob.length,
                ob.mass,
                ob.friction_coeff,
            )

    def test_step_sequence_bitwise_reproducible(self):
        cmds = [(0.4, 0.0, 0.0)] * 20 + [(0.0, 0.4, 0.0)] * 10 + [(0.4, -0.2, 0.1)] * 10
        w1 = spawn_scene("medium", 5)
        w2 = w1.clone()
        for cmd in cmds:
            step_world(w1, cmd)
            step_world(w2, cmd)
        assert w1.robot_pose == w2.robot_pose
        for o1, o2 in zip(w1.obstacles, w2.obstacles):
            assert o1.pose == o2.pose

    def test_static_obstacles_never_move(self):
        w = spawn_scene("hard", 9)
        before = [o.pose for o in w.obstacles if o.is_static]
        for _ in range(200):
            step_world(w, (0.4, 0.05, 0.0))
        after = [o.pose for o in w.obstacles if o.is_static]
        assert before == after

    def test_uncontacted_obstacle_removal_is_momentum_free(self):
        mov = flush_box(length=0.8, is_static=False, mass=2.0, friction_coeff=0.3)
        far = ObstacleState(Pose2(2.8, -0.8, 0.0), 0.3, 0.3, is_static=True)
        cmds = [(0.4, 0.0, 0.0)] * 40
        w_full = world_with(mov.clone(), far.clone())
        w_less = world_with(mov.clone())
        path_full, path_less = [], []
        for cmd in cmds:
            path_full.append(step_world(w_full, cmd).robot_pose)
            path_less.append(step_world(w_less, cmd).robot_pose)
        assert all(l == ContactKind.NONE for l in [contact_graph(w_full)[1]])
        assert path_full == path_less


class TestSpawn:
    @pytest.mark.parametrize("category,count", [("easy", 1), ("medium", 2), ("hard", 3)])
    def test_counts_and_orientation(self, category, count):
        for seed in range(12):
            w = spawn_scene(category, seed)
            assert len(w.obstacles) == count
            assert all(o.pose.theta == 0.0 for o in w.obstacles)
            assert all(o.pose.x <= w.goal_x for o in w.obstacles)
            assert _no_overlaps(w)

    def test_medium_and_hard_ordering(self):
        for seed in range(12):
            for category in ("medium", "hard"):
                w = spawn_scene(category, seed)
                movables = [o for o in w.obstacles if not o.is_static]
                statics = [o for o in w.obstacles if o.is_static]
                assert len(movables) == 1
                assert all(movables[0].pose.x < s.pose.x for s in statics)

    def test_dimension_ranges(self):
        for seed in range(20):
            for o in spawn_scene("hard", seed).obstacles:
                if o.is_static:
                    assert 0.3 <= o.width <= 0.8 and 0.3 <= o.length <= 0.8
                else:
                    assert 0.2 <= o.width <= 0.4 and 0.8 <= o.length <= 1.8
                assert 1.0 <= o.mass <= 8.0
                assert 0.1 <= o.friction_coeff <= 0.8

    def test_unknown_category_rejected(self):
        with pytest.raises(ValueError):
            spawn_scene("nightmare", 0)

    def test_exhausted_rejection_raises_with_context(self, monkeypatch):
        monkeypatch.setattr(worldsim, "MAX_SPAWN_TRIES", 0)
        with pytest.raises(GenerationError, match="easy.*seed 7"):
            spawn_scene("easy", 7)


def _no_overlaps(world: World) -> bool:
    from boxsense.geometry import minimal_translation

    boxes = [world.robot_box] + [o.box for o in world.obstacles]
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if minimal_translation(boxes[i], boxes[j]) is not None:
                return False
    return True
