"""Blind scripted navigation: drive at the goal, probe sideways when stalled.

Policies read only the robot's own pose, realized planar velocity and the
previous command; they never see obstacle state.  Three variants differ in
which side they prefer to probe and how long a probe lasts, giving the
dataset distinct ways around the same blockage.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .worldsim import V_ANG_MAX, V_LIN_MAX

HISTORY_MAX = 750
STALL_WINDOW = 25
DRIVE_SPEED = V_LIN_MAX
HEADING_GAIN = 2.0
PROBE_TICKS_DEFAULT = 75

Command = tuple[float, float, float]


class UnknownPolicyError(ValueError):
    """Raised for a policy id outside the registered variants."""


@dataclass(frozen=True)
class NavObservation:
    pose: tuple[float, float, float]
    planar_velocity: tuple[float, float]
    prev_cmd: Command


@dataclass(frozen=True)
class PolicyVariant:
    policy_id: int
    lateral_bias: float  # probability of probing left (+y)
    probe_ticks: int
    stall_threshold: float = 0.03
    heading_limit: float = 0.3


_VARIANTS = {
    1: PolicyVariant(1, lateral_bias=0.8, probe_ticks=PROBE_TICKS_DEFAULT),
    2: PolicyVariant(2, lateral_bias=0.2, probe_ticks=PROBE_TICKS_DEFAULT),
    3: PolicyVariant(3, lateral_bias=0.5, probe_ticks=2 * PROBE_TICKS_DEFAULT),
}


def make_variant(policy_id: int) -> PolicyVariant:
    try:
        return _VARIANTS[policy_id]
    except KeyError:
        raise UnknownPolicyError(f"no policy variant with id {policy_id}") from None


class NavPolicy:
    """Finite-state controller holding per-episode state; blind by contract."""

    def __init__(self, variant: PolicyVariant, seed: int):
        self.variant = variant
        self._seed = seed
        self.reset()

    def reset(self) -> None:
        # Mixing the id into the stream keeps same-seed variants from
        # drawing identical probe sides on their first stall.
        self._rng = np.random.default_rng([self.variant.policy_id, self._seed])
        self._vx_history: deque[float] = deque(maxlen=STALL_WINDOW)
        self._mode = "drive"
        self._probe_left = True
        self._probe_remaining = 0
        self._ticks_since_probe = STALL_WINDOW

    def _heading_correction(self, theta: float) -> float:
        w = -HEADING_GAIN * theta
        return min(V_ANG_MAX, max(-V_ANG_MAX, w))

    def _stalled(self) -> bool:
        if len(self._vx_history) < STALL_WINDOW or self._ticks_since_probe < STALL_WINDOW:
            return False
        mean_abs = sum(abs(v) for v in self._vx_history) / len(self._vx_history)
        return mean_abs < self.variant.stall_threshold

    def command(self, obs: NavObservation) -> Command:
        self._vx_history.append(obs.planar_velocity[0])
        if self._mode == "drive":
            self._ticks_since_probe += 1
            if self._stalled():
                self._mode = "probe"
                self._probe_remaining = self.variant.probe_ticks
                self._probe_left = bool(self._rng.random() < self.variant.lateral_bias)
        if self._mode == "probe":
            self._probe_remaining -= 1
            if self._probe_remaining <= 0:
                self._mode = "drive"
                self._ticks_since_probe = 0
            vy = DRIVE_SPEED if self._probe_left else -DRIVE_SPEED
            return (0.0, vy, 0.0)
        return (DRIVE_SPEED, 0.0, self._heading_correction(obs.pose[2]))


def make_policy(policy_id: int, seed: int) -> NavPolicy:
    """Deterministic in (policy_id, seed)."""
    return NavPolicy(make_variant(policy_id), seed)
