import math

import numpy as np
import pytest

from boxsense.proprio import (
    GaitConfigError,
    NoiseConfig,
    assemble_proprio,
    baseline_torque,
    command_magnitude,
    effort_channels,
    gait_state,
    load_gait_constants,
    stance_share,
)


@pytest.fixture(scope="module")
def gc():
    return load_gait_constants()


class TestConstantsFile:
    def test_pinned_values(self, gc):
        assert gc.step_frequency == 2.0
        assert np.allclose(gc.leg_phase, [0.0, math.pi, math.pi, 0.0], atol=1e-12)
        assert gc.wrench_gain.shape == (12, 3)

    def test_bad_file_rejected(self, tmp_path):
        p = tmp_path / "gait.cfg"
        p.write_text("step_frequency = 2.0\nomega_weight = 0.5\nleg_phase = 1 2\n")
        with pytest.raises(GaitConfigError, match="leg_phase"):
            load_gait_constants(str(p))
        p.write_text("mystery = 1\n")
        with pytest.raises(GaitConfigError, match="mystery"):
            load_gait_constants(str(p))
        p.write_text("step_frequency = fast\n")
        with pytest.raises(GaitConfigError, match="bad number"):
            load_gait_constants(str(p))


class TestGaitState:
    def test_standing_still(self, gc):
        q, qdot = gait_state(1.3, (0.0, 0.0, 0.0), gc)
        assert np.array_equal(q, gc.joint_offset)
        assert np.array_equal(qdot, np.zeros(12))

    def test_trot_diagonal_pairs_match(self, gc):
        q, _ = gait_state(0.37, (0.3, 0.1, 0.2), gc)
        assert np.array_equal(q[0:3], q[9:12])  # FR == RL
        assert np.array_equal(q[3:6], q[6:9])  # FL == RR

    def test_periodicity(self, gc):
        cmd = (0.4, 0.0, 0.0)
        q1, qd1 = gait_state(0.83, cmd, gc)
        q2, qd2 = gait_state(0.83 + 1.0 / gc.step_frequency, cmd, gc)
        assert np.allclose(q1, q2, atol=1e-9)
        assert np.allclose(qd1, qd2, atol=1e-9)

    def test_qdot_matches_finite_difference(self, gc):
        cmd = (0.35, -0.1, 0.3)
        t, h = 0.61, 1e-6
        qp, _ = gait_state(t + h, cmd, gc)
        qm, _ = gait_state(t - h, cmd, gc)
        _, qdot = gait_state(t, cmd, gc)
        assert np.allclose((qp - qm) / (2 * h), qdot, atol=1e-6)

    def test_amplitude_scales_with_command(self, gc):
        q_small, _ = gait_state(0.2, (0.1, 0.0, 0.0), gc)
        q_large, _ = gait_state(0.2, (0.4, 0.0, 0.0), gc)
        assert np.allclose(
            (q_large - gc.joint_offset), 4.0 * (q_small - gc.joint_offset), atol=1e-12
        )


class TestEffort:
    def test_zero_wrench_is_baseline(self, gc):
        cmd = (0.4, 0.0, 0.0)
        tau = effort_channels(0.4, cmd, (0.0, 0.0, 0.0), gc)
        assert np.array_equal(tau, baseline_torque(0.4, cmd, gc))

    def test_linearity_with_documented_constant(self, gc):
        # At t = 3/(4f) the FR/RL pair carries full stance, the FL/RR pair
        # none, so the summed deviation is the FR+RL column sum of the fx
        # gains times fx.
        t = 3.0 / (4.0 * gc.step_frequency)
        cmd = (0.4, 0.0, 0.0)
        base = baseline_torque(t, cmd, gc)
        dev = effort_channels(t, cmd, (-10.0, 0.0, 0.0), gc) - base
        stance_joints = list(range(0, 3)) + list(range(9, 12))
        expected = -10.0 * gc.wrench_gain[stance_joints, 0].sum()
        assert dev.sum() == pytest.approx(expected, abs=1e-9)
        dev2 = effort_channels(t, cmd, (-20.0, 0.0, 0.0), gc) - base
        assert np.allclose(dev2, 2.0 * dev, atol=1e-12)

    def test_swing_legs_feel_no_wrench(self, gc):
        t = 3.0 / (4.0 * gc.step_frequency)
        share = stance_share(t, gc)
        assert np.allclose(share[3:9], 0.0, atol=1e-12)
        cmd = (0.2, 0.0, 0.0)
        dev = effort_channels(t, cmd, (5.0, -3.0, 1.0), gc) - baseline_torque(t, cmd, gc)
        assert np.array_equal(dev[3:9], np.zeros(6))


class TestAssemble:
    def test_blocked_vs_free_differ_only_in_tau(self, gc):
        cmd, pose = (0.4, 0.0, 0.0), (0.5, 0.0, 0.0)
        free = assemble_proprio(0.8, cmd, (0.0, 0.0, 0.0), pose, gc)
        blocked = assemble_proprio(0.8, cmd, (-32.0, 0.0, 1.5), pose, gc)
        assert np.array_equal(free.q, blocked.q)
        assert np.array_equal(free.qdot, blocked.qdot)
        assert np.array_equal(free.pose, blocked.pose)
        assert not np.array_equal(free.tau, blocked.tau)

    def test_noise_reproducible_and_active(self, gc):
        noise = NoiseConfig()
        a = assemble_proprio(
            0.3, (0.4, 0, 0), (0, 0, 0), (0, 0, 0), gc, noise, np.random.default_rng(5)
        )
        b = assemble_proprio(
            0.3, (0.4, 0, 0), (0, 0, 0), (0, 0, 0), gc, noise, np.random.default_rng(5)
        )
        clean = assemble_proprio(0.3, (0.4, 0, 0), (0, 0, 0), (0, 0, 0), gc)
        assert np.array_equal(a.q, b.q)
        assert np.array_equal(a.tau, b.tau)
        assert not np.array_equal(a.q, clean.q)

    def test_shapes(self, gc):
        s = assemble_proprio(0.0, (0, 0, 0), (0, 0, 0), (0, 0, 0), gc)
        assert s.q.shape == s.qdot.shape == s.tau.shape == (12,)
        assert s.pose.shape == s.cmd.shape == (3,)

    def test_command_magnitude_weighting(self, gc):
        assert command_magnitude((0.3, 0.4, 0.0), gc) == pytest.approx(0.5)
        assert command_magnitude((0.0, 0.0, 0.8), gc) == pytest.approx(
            gc.omega_weight * 0.8
        )
