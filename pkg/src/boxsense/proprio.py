"""Proprioception surrogate: trot-gait joint channels plus wrench routing.

Joint positions and velocities are a pure function of time and the commanded
twist; obstacle interaction reaches the sample only through the torque
channels (via the contact wrench) and the recorded robot pose.  That split is
deliberate: it is the premise the input-channel ablations probe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

NUM_JOINTS = 12
NUM_LEGS = 4
JOINTS_PER_LEG = 3

_SCALAR_KEYS = ("step_frequency", "omega_weight")
_VECTOR_KEYS = {
    "leg_phase": NUM_LEGS,
    "joint_lag": JOINTS_PER_LEG,
    "joint_offset": NUM_JOINTS,
    "amp_scale": NUM_JOINTS,
    "tau_offset": NUM_JOINTS,
    "tau_amp": NUM_JOINTS,
    "wrench_gain_fx": NUM_JOINTS,
    "wrench_gain_fy": NUM_JOINTS,
    "wrench_gain_tz": NUM_JOINTS,
}


class GaitConfigError(ValueError):
    """Raised for malformed or incomplete gait constants files."""


@dataclass(frozen=True)
class GaitConstants:
    step_frequency: float
    omega_weight: float
    leg_phase: np.ndarray
    joint_lag: np.ndarray
    joint_offset: np.ndarray
    amp_scale: np.ndarray
    tau_offset: np.ndarray
    tau_amp: np.ndarray
    wrench_gain: np.ndarray  # (12, 3) columns fx, fy, tz

    @property
    def joint_phase_offset(self) -> np.ndarray:
        """Per-joint phase: leg phase plus the intra-leg joint lag."""
        return np.repeat(self.leg_phase, JOINTS_PER_LEG) + np.tile(self.joint_lag, NUM_LEGS)


@dataclass(frozen=True)
class NoiseConfig:
    sigma_q: float = 0.005
    sigma_qdot: float = 0.05
    sigma_tau: float = 0.2

    @classmethod
    def zero(cls) -> "NoiseConfig":
        return cls(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ProprioSample:
    q: np.ndarray
    qdot: np.ndarray
    tau: np.ndarray
    pose: np.ndarray
    cmd: np.ndarray


def load_gait_constants(path: str | None = None) -> GaitConstants:
    """Parse a key = values gait constants file; defaults to the packaged one."""
    if path is None:
        text = resources.files("boxsense").joinpath("data/gait_constants.cfg").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    raw: dict[str, list[float]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise GaitConfigError(f"line {lineno}: expected 'key = values'")
        key, _, rest = stripped.partition("=")
        key = key.strip()
        if key not in _SCALAR_KEYS and key not in _VECTOR_KEYS:
            raise GaitConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values = [float(tok) for tok in rest.split()]
        except ValueError as exc:
            raise GaitConfigError(f"line {lineno}: bad number in {key!r}") from exc
        raw[key] = values
    for key in _SCALAR_KEYS:
        if key not in raw or len(raw[key]) != 1:
            raise GaitConfigError(f"missing or non-scalar key {key!r}")
    for key, n in _VECTOR_KEYS.items():
        if key not in raw:
            raise GaitConfigError(f"missing key {key!r}")
        if len(raw[key]) != n:
            raise GaitConfigError(f"key {key!r} needs {n} values, got {len(raw[key])}")
    gain = np.column_stack(
        [
            np.asarray(raw["wrench_gain_fx"]),
            np.asarray(raw["wrench_gain_fy"]),
            np.asarray(raw["wrench_gain_tz"]),
        ]
    )
    return GaitConstants(
        step_frequency=raw["step_frequency"][0],
        omega_weight=raw["omega_weight"][0],
        leg_phase=np.asarray(raw["leg_phase"]),
        joint_lag=np.asarray(raw["joint_lag"]),
        joint_offset=np.asarray(raw["joint_offset"]),
        amp_scale=np.asarray(raw["amp_scale"]),
        tau_offset=np.asarray(raw["tau_offset"]),
        tau_amp=np.asarray(raw["tau_amp"]),
        wrench_gain=gain,
    )


def command_magnitude(cmd, gc: GaitConstants) -> float:
    vx, vy, w = cmd
    return math.sqrt(vx * vx + vy * vy + (gc.omega_weight * w) ** 2)


def gait_state(t: float, cmd, gc: GaitConstants) -> tuple[np.ndarray, np.ndarray]:
    """Joint positions and their analytic time derivative at time t."""
    amp = gc.amp_scale * command_magnitude(cmd, gc)
    omega = 2.0 * math.pi * gc.step_frequency
    phase = omega * t + gc.joint_phase_offset
    q = gc.joint_offset + amp * np.sin(phase)
    qdot = amp * omega * np.cos(phase)
    return q, qdot


def stance_share(t: float, gc: GaitConstants) -> np.ndarray:
    """Per-joint load share in [0, 1]; nonzero only while the leg is in stance."""
    leg = np.maximum(0.0, -np.sin(2.0 * math.pi * gc.step_frequency * t + gc.leg_phase))
    return np.repeat(leg, JOINTS_PER_LEG)


def baseline_torque(t: float, cmd, gc: GaitConstants) -> np.ndarray:
    amp = gc.amp_scale * command_magnitude(cmd, gc)
    phase = 2.0 * math.pi * gc.step_frequency * t + gc.joint_phase_offset
    return gc.tau_offset + gc.tau_amp * amp * np.cos(phase)


def effort_channels(
    t: float,
    cmd,
    wrench,
    gc: GaitConstants,
    sigma_tau: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Joint torques: gait baseline plus wrench routed to stance joints."""
    tau = baseline_torque(t, cmd, gc) + stance_share(t, gc) * (gc.wrench_gain @ np.asarray(wrench))
    if rng is not None:
        tau = tau + sigma_tau * rng.standard_normal(NUM_JOINTS)
    return tau


def assemble_proprio(
    t: float,
    cmd,
    wrench,
    pose,
    gc: GaitConstants,
    noise: NoiseConfig = NoiseConfig.zero(),
    rng: np.random.Generator | None = None,
) -> ProprioSample:
    """One observation tick; the rng consumes a fixed draw pattern per call."""
    q, qdot = gait_state(t, cmd, gc)
    if rng is not None:
        q = q + noise.sigma_q * rng.standard_normal(NUM_JOINTS)
        qdot = qdot + noise.sigma_qdot * rng.standard_normal(NUM_JOINTS)
    tau = effort_channels(t, cmd, wrench, gc, noise.sigma_tau, rng)
    return ProprioSample(
        q=q,
        qdot=qdot,
        tau=tau,
        pose=np.asarray(pose, dtype=float),
        cmd=np.asarray(cmd, dtype=float),
    )
