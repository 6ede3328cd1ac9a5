"""Quasi-static corridor world: penetration-projection pushing, contacts, wrench.

The corridor is axis aligned in the robot's spawn frame: the robot starts at
the origin heading +x, the goal line sits at ``GOAL_X`` and the walls bound
x in [X_MIN, X_MAX], y in [Y_MIN, Y_MAX].  There is no momentum; each tick
the commanded twist is integrated, then interpenetrations are removed by a
fixed number of projection passes that shove movable boxes ahead of their
pushers and return blocked displacement to the robot.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Obb, Point, Pose2, minimal_translation, obb_corners, wrap_angle

X_MIN, X_MAX = -0.4, 3.6
Y_MIN, Y_MAX = -1.0, 1.0
GOAL_X = 3.2
ROBOT_LENGTH = 0.65
ROBOT_WIDTH = 0.30
DT = 0.04
V_LIN_MAX = 0.4
V_ANG_MAX = 0.8
N_MAX = 3
CONTACT_STIFFNESS = 2000.0
PEN_TOL = 1e-4
RESOLVE_PASSES = 8
FALLBACK_PASSES = 6
ROTATION_CLAMP = 0.1
SPAWN_CLEARANCE = 0.05
WALL_MARGIN = 0.02
MAX_SPAWN_TRIES = 1000

WALLS = ("wall_xmin", "wall_xmax", "wall_ymin", "wall_ymax")


class GenerationError(RuntimeError):
    """Raised when rejection sampling cannot place a scene."""


class ContactKind(enum.IntEnum):
    NONE = 0
    DIRECT = 1
    INDIRECT = 2


@dataclass
class ObstacleState:
    """One rectangular obstacle; only the pose mutates during an episode."""

    pose: Pose2
    width: float
    length: float
    is_static: bool
    mass: float = 1.0
    friction_coeff: float = 0.3

    @property
    def box(self) -> Obb:
        return Obb(self.pose, self.width, self.length)

    def clone(self) -> "ObstacleState":
        return replace(self)


@dataclass
class World:
    robot_pose: Pose2
    obstacles: list[ObstacleState]
    tick: int = 0
    dt: float = DT
    x_min: float = X_MIN
    x_max: float = X_MAX
    y_min: float = Y_MIN
    y_max: float = Y_MAX
    goal_x: float = GOAL_X
    robot_length: float = ROBOT_LENGTH
    robot_width: float = ROBOT_WIDTH
    last_edges: list[tuple[str, str]] = field(default_factory=list)

    @property
    def robot_box(self) -> Obb:
        return Obb(self.robot_pose, self.robot_width, self.robot_length)

    def clone(self) -> "World":
        return replace(
            self,
            obstacles=[o.clone() for o in self.obstacles],
            last_edges=list(self.last_edges),
        )


@dataclass(frozen=True)
class StepOutcome:
    robot_pose: Pose2
    realized_velocity: tuple[float, float, float]
    contact_edges: list[tuple[str, str]]
    wrench: tuple[float, float, float]
    goal_reached: bool


def make_empty_world() -> World:
    """Obstacle-free corridor, used by the debug episode category."""
    return World(robot_pose=Pose2(), obstacles=[])


def clamp_command(cmd: tuple[float, float, float]) -> tuple[float, float, float]:
    vx, vy, w = cmd
    return (
        min(V_LIN_MAX, max(-V_LIN_MAX, vx)),
        min(V_LIN_MAX, max(-V_LIN_MAX, vy)),
        min(V_ANG_MAX, max(-V_ANG_MAX, w)),
    )


def _body_order(name: str) -> int:
    if name == "robot":
        return 0
    if name.startswith("obs"):
        return 1 + int(name[3:])
    return 100 + WALLS.index(name)


def _edge_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if _body_order(a) <= _body_order(b) else (b, a)


def _point_in_box(box: Obb, p: Point, tol: float = 1e-9) -> bool:
    c, s = math.cos(box.center.theta), math.sin(box.center.theta)
    dx, dy = p[0] - box.center.x, p[1] - box.center.y
    return (
        abs(c * dx + s * dy) <= 0.5 * box.length + tol
        and abs(-s * dx + c * dy) <= 0.5 * box.width + tol
    )


def _contact_point(a: Obb, b: Obb) -> Point:
    pts = [p for p in obb_corners(b) if _point_in_box(a, p)]
    pts += [p for p in obb_corners(a) if _point_in_box(b, p)]
    if not pts:
        return (0.5 * (a.center.x + b.center.x), 0.5 * (a.center.y + b.center.y))
    return (
        sum(p[0] for p in pts) / len(pts),
        sum(p[1] for p in pts) / len(pts),
    )


def _wall_violation(world: World, box: Obb, wall: str) -> tuple[float, Point, Point]:
    """Penetration depth beyond one wall, inward normal and contact point."""
    corners = obb_corners(box)
    if wall == "wall_xmin":
        depth = max(world.x_min - p[0] for p in corners)
        normal = (1.0, 0.0)
        viol = [p for p in corners if world.x_min - p[0] >= depth - 1e-12]
    elif wall == "wall_xmax":
        depth = max(p[0] - world.x_max for p in corners)
        normal = (-1.0, 0.0)
        viol = [p for p in corners if p[0] - world.x_max >= depth - 1e-12]
    elif wall == "wall_ymin":
        depth = max(world.y_min - p[1] for p in corners)
        normal = (0.0, 1.0)
        viol = [p for p in corners if world.y_min - p[1] >= depth - 1e-12]
    else:
        depth = max(p[1] - world.y_max for p in corners)
        normal = (0.0, -1.0)
        viol = [p for p in corners if p[1] - world.y_max >= depth - 1e-12]
    cp = (
        sum(p[0] for p in viol) / len(viol),
        sum(p[1] for p in viol) / len(viol),
    )
    return depth, normal, cp


def _translate(pose: Pose2, dx: float, dy: float, dtheta: float = 0.0) -> Pose2:
    return Pose2(pose.x + dx, pose.y + dy, pose.theta + dtheta)


def _nearer_index(world: World, i: int, j: int) -> tuple[int, int]:
    """Order an obstacle pair so the body nearer the robot pushes the other."""
    rp = world.robot_pose
    di = math.hypot(world.obstacles[i].pose.x - rp.x, world.obstacles[i].pose.y - rp.y)
    dj = math.hypot(world.obstacles[j].pose.x - rp.x, world.obstacles[j].pose.y - rp.y)
    if dj < di:
        return j, i
    return i, j


def _find_pairs(world: World) -> list[tuple[float, tuple]]:
    """All penetrating pairs with sort keys: distance from robot, then indices.

    Entries are ``(distance, descriptor)`` where the descriptor is
    ``("robot-obs", i)``, ``("obs-obs", i, j)`` or ``("wall", body, wall)``.
    """
    out = []
    rp = world.robot_pose
    rbox = world.robot_box
    for i, obs in enumerate(world.obstacles):
        mtv = minimal_translation(rbox, obs.box)
        if mtv is not None and mtv[1] > PEN_TOL:
            d = math.hypot(obs.pose.x - rp.x, obs.pose.y - rp.y)
            out.append(((0, d, i, -1), ("robot-obs", i)))
    n = len(world.obstacles)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = world.obstacles[i], world.obstacles[j]
            if a.is_static and b.is_static:
                continue
            mtv = minimal_translation(a.box, b.box)
            if mtv is not None and mtv[1] > PEN_TOL:
                di = math.hypot(a.pose.x - rp.x, a.pose.y - rp.y)
                dj = math.hypot(b.pose.x - rp.x, b.pose.y - rp.y)
                out.append(((1, min(di, dj), i, j), ("obs-obs", i, j)))
    for body_idx, box in [(-1, rbox)] + [
        (i, o.box) for i, o in enumerate(world.obstacles) if not o.is_static
    ]:
        for wall in WALLS:
            depth, _, _ = _wall_violation(world, box, wall)
            if depth > PEN_TOL:
                out.append(((2, 0.0 if body_idx < 0 else 1.0 + body_idx, WALLS.index(wall), 0), ("wall", body_idx, wall)))
    out.sort(key=lambda e: e[0])
    return out


class _StepTrace:
    """Contact bookkeeping for one step: edges and first-touch wrench terms."""

    def __init__(self):
        self.edges: dict[tuple[str, str], None] = {}
        self.force = [0.0, 0.0]
        self.torque = 0.0

    def record(self, a: str, b: str):
        self.edges.setdefault(_edge_key(a, b))

    def robot_force(self, normal_out: Point, depth: float, cp: Point, robot_pos: Pose2):
        fx = CONTACT_STIFFNESS * depth * normal_out[0]
        fy = CONTACT_STIFFNESS * depth * normal_out[1]
        self.force[0] += fx
        self.force[1] += fy
        self.torque += (cp[0] - robot_pos.x) * fy - (cp[1] - robot_pos.y) * fx


def _push_movable(world: World, pusher_box: Obb, obs_idx: int) -> None:
    """Advance a movable obstacle out of its pusher by the scaled projection."""
    obs = world.obstacles[obs_idx]
    mtv = minimal_translation(pusher_box, obs.box)
    if mtv is None or mtv[1] <= PEN_TOL:
        return
    (nx, ny), depth = mtv
    scale = 1.0 / (1.0 + obs.friction_coeff * obs.mass)
    move = depth * scale
    cp = _contact_point(pusher_box, obs.box)
    # Tangent chosen clockwise from the normal so a positive lever arm yields
    # a positive (counter-clockwise) rotation increment.
    lever = (cp[0] - obs.pose.x) * ny + (cp[1] - obs.pose.y) * (-nx)
    dtheta = lever * move / (0.5 * obs.length)
    dtheta = min(ROTATION_CLAMP, max(-ROTATION_CLAMP, dtheta))
    obs.pose = _translate(obs.pose, nx * move, ny * move, dtheta)


def _retreat(world: World, mover: str, blocker_box: Obb | None, wall: str | None) -> None:
    """Move a pusher fully back out of a static blocker or wall."""
    if mover == "robot":
        box = world.robot_box
    else:
        box = world.obstacles[int(mover[3:])].box
    if wall is not None:
        depth, normal, _ = _wall_violation(world, box, wall)
        if depth <= PEN_TOL:
            return
        dx, dy = normal[0] * depth, normal[1] * depth
    else:
        assert blocker_box is not None
        mtv = minimal_translation(blocker_box, box)
        if mtv is None or mtv[1] <= PEN_TOL:
            return
        (nx, ny), depth = mtv
        dx, dy = nx * depth, ny * depth
    if mover == "robot":
        world.robot_pose = _translate(world.robot_pose, dx, dy)
    else:
        obs = world.obstacles[int(mover[3:])]
        obs.pose = _translate(obs.pose, dx, dy)


def resolve_push_chain(
    world: World, displacement: tuple[float, float, float]
) -> tuple[list[tuple[str, str]], tuple[float, float, float]]:
    """Apply the robot displacement and project all penetrations away.

    Mutates robot and movable obstacle poses.  Returns the contact edges seen
    during resolution and the accumulated world-frame wrench on the robot
    (stiffness times first-touch penetration depth per contacted body).
    Static obstacle poses are never written.
    """
    saved_robot = world.robot_pose
    saved_obs = [o.pose for o in world.obstacles]
    world.robot_pose = _translate(world.robot_pose, *displacement)
    trace = _StepTrace()
    seen: set[tuple[str, str]] = set()

    def note(pair, robot_involved_normal=None, depth=0.0, cp=(0.0, 0.0)):
        key = _edge_key(*pair)
        trace.record(*pair)
        if key not in seen:
            seen.add(key)
            if robot_involved_normal is not None:
                trace.robot_force(robot_involved_normal, depth, cp, world.robot_pose)

    for _ in range(RESOLVE_PASSES):
        pairs = _find_pairs(world)
        if not pairs:
            break
        for _, desc in pairs:
            if desc[0] == "robot-obs":
                i = desc[1]
                obs = world.obstacles[i]
                mtv = minimal_translation(world.robot_box, obs.box)
                if mtv is None or mtv[1] <= PEN_TOL:
                    continue
                (nx, ny), depth = mtv
                cp = _contact_point(world.robot_box, obs.box)
                note(("robot", f"obs{i}"), (-nx, -ny), depth, cp)
                if obs.is_static:
                    _retreat(world, "robot", obs.box, None)
                else:
                    _push_movable(world, world.robot_box, i)
            elif desc[0] == "obs-obs":
                i, j = _nearer_index(world, desc[1], desc[2])
                pusher, pushee = world.obstacles[i], world.obstacles[j]
                mtv = minimal_translation(pusher.box, pushee.box)
                if mtv is None or mtv[1] <= PEN_TOL:
                    continue
                note((f"obs{i}", f"obs{j}"))
                if pushee.is_static:
                    _retreat(world, f"obs{i}", pushee.box, None)
                else:
                    _push_movable(world, pusher.box, j)
            else:
                _, body_idx, wall = desc
                name = "robot" if body_idx < 0 else f"obs{body_idx}"
                box = world.robot_box if body_idx < 0 else world.obstacles[body_idx].box
                depth, normal, cp = _wall_violation(world, box, wall)
                if depth <= PEN_TOL:
                    continue
                if body_idx < 0:
                    note(("robot", wall), normal, depth, cp)
                else:
                    note((name, wall))
                _retreat(world, name, None, wall)

    # Whatever penetration the passes could not place gets returned to the
    # pusher, walking the chain from the far end back to the robot.
    for _ in range(FALLBACK_PASSES):
        pairs = _find_pairs(world)
        if not pairs:
            break
        for _, desc in reversed(pairs):
            if desc[0] == "robot-obs":
                i = desc[1]
                obs = world.obstacles[i]
                mtv = minimal_translation(obs.box, world.robot_box)
                if mtv is None or mtv[1] <= PEN_TOL:
                    continue
                cp = _contact_point(world.robot_box, obs.box)
                note(("robot", f"obs{i}"), mtv[0], mtv[1], cp)
                _retreat(world, "robot", obs.box, None)
            elif desc[0] == "obs-obs":
                i, j = _nearer_index(world, desc[1], desc[2])
                if world.obstacles[i].is_static:
                    continue
                note((f"obs{i}", f"obs{j}"))
                _retreat(world, f"obs{i}", world.obstacles[j].box, None)
            else:
                _, body_idx, wall = desc
                name = "robot" if body_idx < 0 else f"obs{body_idx}"
                box = world.robot_box if body_idx < 0 else world.obstacles[body_idx].box
                depth, normal, cp = _wall_violation(world, box, wall)
                if depth <= PEN_TOL:
                    continue
                if body_idx < 0:
                    note(("robot", wall), normal, depth, cp)
                else:
                    note((name, wall))
                _retreat(world, name, None, wall)

    if _find_pairs(world):
        # Wedged: give the whole step back rather than leave penetration.
        world.robot_pose = saved_robot
        for obs, pose in zip(world.obstacles, saved_obs):
            if not obs.is_static:
                obs.pose = pose
    edges = sorted(trace.edges, key=lambda e: (_body_order(e[0]), _body_order(e[1])))
    return edges, (trace.force[0], trace.force[1], trace.torque)


def step_world(world: World, cmd: tuple[float, float, float], dt: float | None = None) -> StepOutcome:
    """Advance one tick under a body-frame twist command."""
    dt = world.dt if dt is None else dt
    vx, vy, w = clamp_command(cmd)
    pose0 = world.robot_pose
    c, s = math.cos(pose0.theta), math.sin(pose0.theta)
    disp = ((c * vx - s * vy) * dt, (s * vx + c * vy) * dt, w * dt)
    edges, wrench_world = resolve_push_chain(world, disp)
    pose1 = world.robot_pose
    realized = (
        (pose1.x - pose0.x) / dt,
        (pose1.y - pose0.y) / dt,
        wrap_angle(pose1.theta - pose0.theta) / dt,
    )
    world.tick += 1
    world.last_edges = edges
    c1, s1 = math.cos(pose1.theta), math.sin(pose1.theta)
    fx, fy, tz = wrench_world
    wrench_body = (c1 * fx + s1 * fy, -s1 * fx + c1 * fy, tz)
    return StepOutcome(
        robot_pose=pose1,
        realized_velocity=realized,
        contact_edges=edges,
        wrench=wrench_body,
        goal_reached=pose1.x > world.goal_x,
    )


def contact_graph(world: World) -> list[ContactKind]:
    """Per-obstacle contact labels from the most recent step's edges.

    Direct means an edge to the robot; indirect means reachable from the
    robot through movable obstacles only.  Walls never propagate contact.
    """
    n = len(world.obstacles)
    labels = [ContactKind.NONE] * n
    adj: dict[int, set[int]] = {i: set() for i in range(-1, n)}
    for a, b in world.last_edges:
        if a in WALLS or b in WALLS:
            continue
        ia = -1 if a == "robot" else int(a[3:])
        ib = -1 if b == "robot" else int(b[3:])
        adj[ia].add(ib)
        adj[ib].add(ia)
    for i in sorted(adj[-1]):
        labels[i] = ContactKind.DIRECT
    frontier = [i for i in sorted(adj[-1]) if not world.obstacles[i].is_static]
    visited = set(adj[-1])
    while frontier:
        cur = frontier.pop()
        for nxt in sorted(adj[cur]):
            if nxt < 0 or nxt in visited:
                continue
            visited.add(nxt)
            labels[nxt] = ContactKind.INDIRECT
            if not world.obstacles[nxt].is_static:
                frontier.append(nxt)
    return labels


def _sample_obstacle(rng: np.random.Generator, movable: bool, x_range, y_range) -> ObstacleState:
    if movable:
        width = rng.uniform(0.2, 0.4)
        length = rng.uniform(0.8, 1.8)
    else:
        width = rng.uniform(0.3, 0.8)
        length = rng.uniform(0.3, 0.8)
    x = rng.uniform(*x_range)
    y = rng.uniform(*y_range)
    mass = rng.uniform(1.0, 8.0)
    friction = rng.uniform(0.1, 0.8)
    return ObstacleState(
        pose=Pose2(x, y, 0.0),
        width=width,
        length=length,
        is_static=not movable,
        mass=mass,
        friction_coeff=friction,
    )


def _inflated(box: Obb, margin: float) -> Obb:
    return Obb(box.center, box.width + margin, box.length + margin)


def _scene_valid(world: World) -> bool:
    bodies = [world.robot_box] + [o.box for o in world.obstacles]
    for box in bodies[1:]:
        for x, y in obb_corners(box):
            if not (
                world.x_min + WALL_MARGIN <= x <= world.x_max - WALL_MARGIN
                and world.y_min + WALL_MARGIN <= y <= world.y_max - WALL_MARGIN
            ):
                return False
    for obs in world.obstacles:
        if obs.pose.x > world.goal_x:
            return False
    for i in range(len(bodies)):
        for j in range(i + 1, len(bodies)):
            if minimal_translation(_inflated(bodies[i], SPAWN_CLEARANCE), bodies[j]) is not None:
                return False
    return True


def spawn_scene(category: str, seed: int) -> World:
    """Build a seeded scene: easy 1 box, medium 2, hard 3, orientations 0.

    Movable obstacles always spawn in front of (smaller x than) every static
    obstacle in the scene, per the medium/hard layouts.
    """
    if category not in ("easy", "medium", "hard"):
        raise ValueError(f"unknown category {category!r}")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_SPAWN_TRIES):
        if category == "easy":
            movable = bool(rng.random() < 0.5)
            obstacles = [_sample_obstacle(rng, movable, (1.2, 2.6), (-0.45, 0.45))]
        elif category == "medium":
            mov = _sample_obstacle(rng, True, (1.2, 2.0), (-0.1, 0.1))
            stat = _sample_obstacle(rng, False, (1.6, 2.9), (-0.3, 0.3))
            stat.pose = Pose2(
                stat.pose.x,
                min(0.3, max(-0.3, mov.pose.y + rng.uniform(-0.25, 0.25))),
                0.0,
            )
            obstacles = [mov, stat]
        else:
            mov = _sample_obstacle(rng, True, (1.2, 2.0), (-0.1, 0.1))
            stats = []
            for _k in range(2):
                stat = _sample_obstacle(rng, False, (1.6, 2.9), (-0.4, 0.4))
                stat.pose = Pose2(
                    stat.pose.x,
                    min(0.4, max(-0.4, mov.pose.y + rng.uniform(-0.35, 0.35))),
                    0.0,
                )
                stats.append(stat)
            obstacles = [mov] + stats
        world = World(robot_pose=Pose2(), obstacles=obstacles)
        movables = [o for o in obstacles if not o.is_static]
        statics = [o for o in obstacles if o.is_static]
        ordered = all(m.pose.x < s.pose.x for m in movables for s in statics)
        if ordered and _scene_valid(world):
            return world
    raise GenerationError(
        f"failed to place a {category!r} scene for seed {seed} "
        f"after {MAX_SPAWN_TRIES} attempts"
    )
