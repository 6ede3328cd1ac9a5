"""Episode rolling, contact windows, mode balancing, and JSONL persistence.

A trajectory records every simulator tick: the proprioceptive sample, the
robot pose, all obstacle poses, and per-obstacle contact labels.  Columns are
stored as float32 arrays; the JSONL writer emits the shortest decimal that
round-trips float32, so write/read is exact rather than merely close.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .policy import NavObservation, NavPolicy, make_policy
from .proprio import GaitConstants, NoiseConfig, ProprioSample, assemble_proprio, load_gait_constants
from .worldsim import ContactKind, World, contact_graph, make_empty_world, spawn_scene, step_world

T_MAX = 1500
SPAWN_CATEGORIES = ("easy", "medium", "hard")
FORMAT_NAME = "boxsense-dataset"
FORMAT_VERSION = 1
UNITS = {"length": "m", "angle": "rad", "time": "s", "torque": "Nm"}

_GAIT_CACHE: GaitConstants | None = None


class ParseError(ValueError):
    """Raised on malformed, truncated, or version-mismatched dataset files."""


class ContactMode(enum.Enum):
    NO_CONTACT = "NoContact"
    DIRECT_MOVABLE = "DirectMovable"
    DIRECT_STATIC = "DirectStatic"
    MOVABLE_PLUS_INDIRECT_STATIC = "MovablePlusIndirectStatic"
    MULTI = "Multi"


@dataclass(frozen=True)
class ObstacleRecord:
    is_static: bool
    width: float
    length: float


@dataclass(frozen=True)
class TrajectoryStep:
    tick: int
    proprio: ProprioSample
    obstacle_poses: np.ndarray
    contact_labels: np.ndarray


@dataclass(eq=False)
class Trajectory:
    """One rolled episode in columnar form; ticks run 0..n_steps-1."""

    category: str
    policy_id: int
    seed: int
    goal_reached: bool
    obstacles: list[ObstacleRecord]
    q: np.ndarray
    qdot: np.ndarray
    tau: np.ndarray
    pose: np.ndarray
    cmd: np.ndarray
    obstacle_poses: np.ndarray
    contact_labels: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.q.shape[0]

    @property
    def n_obstacles(self) -> int:
        return len(self.obstacles)

    def step(self, tick: int) -> TrajectoryStep:
        sample = ProprioSample(
            q=self.q[tick],
            qdot=self.qdot[tick],
            tau=self.tau[tick],
            pose=self.pose[tick],
            cmd=self.cmd[tick],
        )
        return TrajectoryStep(
            tick=tick,
            proprio=sample,
            obstacle_poses=self.obstacle_poses[tick],
            contact_labels=self.contact_labels[tick],
        )


@dataclass(frozen=True, eq=False)
class ContactWindow:
    """Supervision interval [t_first, t_final_global] for one obstacle."""

    obstacle_index: int
    t_first: int
    t_final_global: int
    per_step_contact: np.ndarray

    def __post_init__(self):
        assert self.per_step_contact.shape == (self.t_final_global - self.t_first + 1,)
        assert bool(self.per_step_contact[0])


@dataclass(eq=False)
class Dataset:
    trajectories: list[Trajectory]
    config_digest: str = ""
    stride: int = 5


@dataclass
class CurationReport:
    cap_per_mode: int
    seed: int
    pre_counts: dict = field(default_factory=dict)
    post_counts: dict = field(default_factory=dict)

    def mode_totals(self, post: bool = True) -> dict:
        counts = self.post_counts if post else self.pre_counts
        totals: dict[str, int] = {}
        for (mode, _pid), n in counts.items():
            totals[mode] = totals.get(mode, 0) + n
        return totals

    def to_text(self) -> str:
        lines = [
            f"contact-mode curation (cap {self.cap_per_mode} per mode x policy, seed {self.seed})",
            f"{'mode':<28}{'policy':>7}{'pre':>7}{'post':>7}",
        ]
        for key in sorted(self.pre_counts):
            mode, pid = key
            lines.append(
                f"{mode:<28}{pid:>7}{self.pre_counts[key]:>7}{self.post_counts.get(key, 0):>7}"
            )
        lines.append(
            f"{'total':<28}{'':>7}{sum(self.pre_counts.values()):>7}"
            f"{sum(self.post_counts.values()):>7}"
        )
        return "\n".join(lines)


def _default_gait() -> GaitConstants:
    global _GAIT_CACHE
    if _GAIT_CACHE is None:
        _GAIT_CACHE = load_gait_constants()
    return _GAIT_CACHE


def derive_episode_seed(master_seed: int, episode_index: int) -> int:
    digest = hashlib.sha256(f"{master_seed}:{episode_index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def is_heldout(split_seed: int, episode_seed: int) -> bool:
    """Seeded 10% split, stable across runs and machines."""
    digest = hashlib.sha256(f"{split_seed}:{episode_seed}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % 10 == 0


def roll_episode(
    category: str,
    policy_id: int,
    seed: int,
    gait: GaitConstants | None = None,
    noise: NoiseConfig | None = None,
    t_max: int = T_MAX,
    world: World | None = None,
) -> Trajectory:
    """Run one seeded episode to the goal or t_max ticks.

    `world` overrides the seeded spawn so scripted scenes can be rolled
    under the recorded category name.
    """
    if world is None:
        world = make_empty_world() if category == "empty" else spawn_scene(category, seed)
    gc = gait if gait is not None else _default_gait()
    nz = noise if noise is not None else NoiseConfig()
    noise_rng = np.random.default_rng([seed, 1])
    policy: NavPolicy = make_policy(policy_id, seed)

    records = [ObstacleRecord(o.is_static, o.width, o.length) for o in world.obstacles]
    n_obs = len(records)
    q_rows, qdot_rows, tau_rows, pose_rows, cmd_rows = [], [], [], [], []
    obs_pose_rows, label_rows = [], []
    realized = (0.0, 0.0, 0.0)
    prev_cmd = (0.0, 0.0, 0.0)
    goal = False

    for tick in range(t_max):
        rp = world.robot_pose
        obs = NavObservation(
            pose=(rp.x, rp.y, rp.theta),
            planar_velocity=(realized[0], realized[1]),
            prev_cmd=prev_cmd,
        )
        cmd = policy.command(obs)
        out = step_world(world, cmd)
        labels = contact_graph(world)
        sample = assemble_proprio(
            tick * world.dt,
            cmd,
            out.wrench,
            (out.robot_pose.x, out.robot_pose.y, out.robot_pose.theta),
            gc,
            nz,
            noise_rng,
        )
        q_rows.append(sample.q)
        qdot_rows.append(sample.qdot)
        tau_rows.append(sample.tau)
        pose_rows.append(sample.pose)
        cmd_rows.append(sample.cmd)
        obs_pose_rows.append([(o.pose.x, o.pose.y, o.pose.theta) for o in world.obstacles])
        label_rows.append([int(lab) for lab in labels])
        realized = out.realized_velocity
        prev_cmd = cmd
        if out.goal_reached:
            goal = True
            break

    n = len(q_rows)
    return Trajectory(
        category=category,
        policy_id=policy_id,
        seed=seed,
        goal_reached=goal,
        obstacles=records,
        q=np.asarray(q_rows, dtype=np.float32),
        qdot=np.asarray(qdot_rows, dtype=np.float32),
        tau=np.asarray(tau_rows, dtype=np.float32),
        pose=np.asarray(pose_rows, dtype=np.float32),
        cmd=np.asarray(cmd_rows, dtype=np.float32),
        obstacle_poses=np.asarray(obs_pose_rows, dtype=np.float32).reshape(n, n_obs, 3),
        contact_labels=np.asarray(label_rows, dtype=np.int8).reshape(n, n_obs),
    )


def compute_contact_windows(traj: Trajectory) -> list[ContactWindow]:
    """Per-obstacle windows sharing one global final tick."""
    contact = traj.contact_labels != int(ContactKind.NONE)
    touched = [i for i in range(traj.n_obstacles) if contact[:, i].any()]
    if not touched:
        return []
    t_final = max(int(np.flatnonzero(contact[:, i])[-1]) for i in touched)
    windows = []
    for i in touched:
        t_first = int(np.flatnonzero(contact[:, i])[0])
        windows.append(
            ContactWindow(
                obstacle_index=i,
                t_first=t_first,
                t_final_global=t_final,
                per_step_contact=contact[t_first : t_final + 1, i].copy(),
            )
        )
    return windows


def classify_contact_mode(traj: Trajectory) -> ContactMode:
    labels = traj.contact_labels
    if not (labels != int(ContactKind.NONE)).any():
        return ContactMode.NO_CONTACT
    static = np.array([o.is_static for o in traj.obstacles], dtype=bool)
    direct = (labels == int(ContactKind.DIRECT)).any(axis=0)
    indirect = (labels == int(ContactKind.INDIRECT)).any(axis=0)
    direct_mov = bool((direct & ~static).any())
    direct_stat = bool((direct & static).any())
    indirect_stat = bool((indirect & static).any())
    indirect_mov = bool((indirect & ~static).any())
    if direct_mov and not (direct_stat or indirect_stat or indirect_mov):
        return ContactMode.DIRECT_MOVABLE
    if direct_stat and not (direct_mov or indirect_stat or indirect_mov):
        return ContactMode.DIRECT_STATIC
    if direct_mov and indirect_stat and not (direct_stat or indirect_mov):
        return ContactMode.MOVABLE_PLUS_INDIRECT_STATIC
    return ContactMode.MULTI


def curate_dataset(
    trajectories: list[Trajectory], cap_per_mode: int, seed: int = 0
) -> tuple[list[Trajectory], CurationReport]:
    """Keep at most cap_per_mode trajectories per (mode, policy) cell.

    Selection within a cell is a seeded shuffle followed by truncation; the
    surviving trajectories keep their input order.  Never fabricates: the
    output is a subset of the input.
    """
    cells: dict[tuple[str, int], list[int]] = {}
    for idx, traj in enumerate(trajectories):
        key = (classify_contact_mode(traj).value, traj.policy_id)
        cells.setdefault(key, []).append(idx)

    report = CurationReport(cap_per_mode=cap_per_mode, seed=seed)
    rng = np.random.default_rng(seed)
    kept: list[int] = []
    for key in sorted(cells):
        members = cells[key]
        report.pre_counts[key] = len(members)
        order = rng.permutation(len(members))
        chosen = [members[j] for j in order[:cap_per_mode]]
        report.post_counts[key] = len(chosen)
        kept.extend(chosen)
    kept.sort()
    return [trajectories[i] for i in kept], report


def generate_dataset(
    master_seed: int,
    episodes_per_category: int,
    cap_per_mode: int,
    categories: tuple[str, ...] = SPAWN_CATEGORIES,
    policy_ids: tuple[int, ...] = (1, 2, 3),
    config_digest: str = "",
    stride: int = 5,
    noise: NoiseConfig | None = None,
) -> tuple[Dataset, CurationReport]:
    """Roll episodes across categories and policy variants, then curate.

    Episode seeds derive from (master_seed, running index), so regenerating
    with the same arguments reproduces the same dataset.
    """
    rolled: list[Trajectory] = []
    index = 0
    for category in categories:
        for _ in range(episodes_per_category):
            seed = derive_episode_seed(master_seed, index)
            pid = policy_ids[index % len(policy_ids)]
            rolled.append(roll_episode(category, pid, seed, noise=noise))
            index += 1
    kept, report = curate_dataset(rolled, cap_per_mode, seed=master_seed)
    return Dataset(kept, config_digest=config_digest, stride=stride), report


def _fmt_value(v) -> str:
    if isinstance(v, (np.floating, float)):
        return np.format_float_positional(v, unique=True, trim="-")
    return str(int(v))


def _fmt_array(arr: np.ndarray) -> str:
    if arr.ndim == 1:
        return "[" + ",".join(_fmt_value(v) for v in arr) + "]"
    return "[" + ",".join(_fmt_array(row) for row in arr) + "]"


_ARRAY_SPECS = (
    ("q", np.float32, (-1, 12)),
    ("qdot", np.float32, (-1, 12)),
    ("tau", np.float32, (-1, 12)),
    ("pose", np.float32, (-1, 3)),
    ("cmd", np.float32, (-1, 3)),
)


def _trajectory_line(traj: Trajectory) -> str:
    for name, _, _ in _ARRAY_SPECS:
        if not np.isfinite(getattr(traj, name)).all():
            raise ValueError(f"non-finite values in field {name!r}")
    if not np.isfinite(traj.obstacle_poses).all():
        raise ValueError("non-finite values in field 'obstacle_poses'")
    obstacles = [
        {"is_static": r.is_static, "width": r.width, "length": r.length}
        for r in traj.obstacles
    ]
    parts = [
        f'"category":{json.dumps(traj.category)}',
        f'"policy_id":{traj.policy_id}',
        f'"seed":{traj.seed}',
        f'"goal_reached":{json.dumps(traj.goal_reached)}',
        f'"n_steps":{traj.n_steps}',
        f'"obstacles":{json.dumps(obstacles, separators=(",", ":"))}',
    ]
    for name, _, _ in _ARRAY_SPECS:
        parts.append(f'"{name}":{_fmt_array(getattr(traj, name))}')
    parts.append(f'"obstacle_poses":{_fmt_array(traj.obstacle_poses)}')
    parts.append(f'"contact_labels":{_fmt_array(traj.contact_labels)}')
    return "{" + ",".join(parts) + "}"


def write_dataset(dataset: Dataset, path: str) -> None:
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config_digest": dataset.config_digest,
        "stride": dataset.stride,
        "units": UNITS,
        "n_trajectories": len(dataset.trajectories),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for traj in dataset.trajectories:
            fh.write(_trajectory_line(traj) + "\n")


def _parse_trajectory(obj: dict, lineno: int) -> Trajectory:
    def fail(msg: str):
        raise ParseError(f"line {lineno}: {msg}")

    required = {"category", "policy_id", "seed", "goal_reached", "n_steps", "obstacles"}
    required |= {name for name, _, _ in _ARRAY_SPECS} | {"obstacle_poses", "contact_labels"}
    missing = required - obj.keys()
    if missing:
        fail(f"missing fields {sorted(missing)}")
    n_steps = obj["n_steps"]
    records = [
        ObstacleRecord(bool(o["is_static"]), float(o["width"]), float(o["length"]))
        for o in obj["obstacles"]
    ]
    n_obs = len(records)
    arrays = {}
    for name, dtype, shape in _ARRAY_SPECS:
        try:
            arr = np.asarray(obj[name], dtype=dtype)
        except ValueError:
            fail(f"ragged array in field {name!r}")
        if arr.shape != (n_steps, shape[1]):
            fail(f"field {name!r} has shape {arr.shape}, expected {(n_steps, shape[1])}")
        arrays[name] = arr
    try:
        op = np.asarray(obj["obstacle_poses"], dtype=np.float32).reshape(n_steps, n_obs, 3)
        labels = np.asarray(obj["contact_labels"], dtype=np.int8).reshape(n_steps, n_obs)
    except ValueError:
        fail("obstacle_poses/contact_labels do not match n_steps x n_obstacles")
    if not np.isin(labels, [int(k) for k in ContactKind]).all():
        fail("contact label outside {0,1,2}")
    return Trajectory(
        category=obj["category"],
        policy_id=int(obj["policy_id"]),
        seed=int(obj["seed"]),
        goal_reached=bool(obj["goal_reached"]),
        obstacles=records,
        obstacle_poses=op,
        contact_labels=labels,
        **arrays,
    )


def read_dataset(path: str) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("line 1: empty file, expected header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"line 1: invalid header JSON ({exc})") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise ParseError("line 1: not a dataset file (bad format field)")
    if header.get("version") != FORMAT_VERSION:
        raise ParseError(
            f"line 1: version mismatch: file has {header.get('version')!r}, "
            f"reader supports {FORMAT_VERSION}"
        )
    expected = header.get("n_trajectories")
    body = lines[1:]
    if len(body) != expected:
        raise ParseError(
            f"truncated file: header promises {expected} trajectories, found {len(body)}"
        )
    trajectories = []
    for offset, line in enumerate(body):
        lineno = offset + 2
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}: invalid JSON ({exc})") from exc
        trajectories.append(_parse_trajectory(obj, lineno))
    return Dataset(
        trajectories,
        config_digest=header.get("config_digest", ""),
        stride=int(header.get("stride", 1)),
    )


def trajectory_allclose(a: Trajectory, b: Trajectory, tol: float = 1e-9) -> bool:
    if (a.category, a.policy_id, a.seed, a.goal_reached) != (
        b.category,
        b.policy_id,
        b.seed,
        b.goal_reached,
    ):
        return False
    if a.obstacles != b.obstacles or a.n_steps != b.n_steps:
        return False
    for name in ("q", "qdot", "tau", "pose", "cmd", "obstacle_poses"):
        if not np.allclose(getattr(a, name), getattr(b, name), rtol=0.0, atol=tol):
            return False
    return bool(np.array_equal(a.contact_labels, b.contact_labels))


def dataset_allclose(a: Dataset, b: Dataset, tol: float = 1e-9) -> bool:
    if a.config_digest != b.config_digest or a.stride != b.stride:
        return False
    if len(a.trajectories) != len(b.trajectories):
        return False
    return all(
        trajectory_allclose(x, y, tol) for x, y in zip(a.trajectories, b.trajectories)
    )
