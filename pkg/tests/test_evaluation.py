import json
import math
import re
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from boxsense.dataset import (
    Dataset,
    ObstacleRecord,
    compute_contact_windows,
    derive_episode_seed,
    is_heldout,
    roll_episode,
)
from boxsense.evaluation import (
    FULL_SCALE_REFERENCE,
    AblationRun,
    ObstacleResult,
    abs_errors_final,
    ablation_chart_svg,
    ablation_suite,
    ablation_table,
    aggregate_report,
    evaluate_trajectory,
    evaluate_trajectories,
    iou_final,
    mean_box_movable_baseline,
    obstacle_role,
    render_frame,
)
from boxsense.model import (
    HELDOUT_SPLIT_SEED,
    OrmConfig,
    heldout_movable_iou,
    init_params,
    trajectory_to_sequence,
)
from boxsense.worldsim import spawn_scene

from test_dataset import labels_grid, make_traj


def boxed_traj(n_steps, contacts, statics, dims, poses, category="medium"):
    """Synthetic trajectory with crafted obstacle dims and constant poses."""
    traj = make_traj(labels_grid(n_steps, len(statics), contacts), statics, category=category)
    traj.obstacles = [ObstacleRecord(bool(s), w, l) for s, (w, l) in zip(statics, dims)]
    for i, pose in enumerate(poses):
        traj.obstacle_poses[:, i, :] = pose
    return traj


def oracle_preds(traj, stride=5):
    """Prediction rows copied from the supervision labels."""
    _, labels, _ = trajectory_to_sequence(traj, stride)
    return labels.copy()


def rolled_medium(n, start=0):
    return [
        roll_episode("medium", 1 + (k % 3), derive_episode_seed(42, k))
        for k in range(start, start + n)
    ]


@pytest.fixture(scope="module")
def medium_trajs():
    return rolled_medium(15)


class TestFinalMetrics:
    def test_oracle_predictions_score_perfectly(self, medium_trajs):
        scored = 0
        for traj in medium_trajs:
            windows = compute_contact_windows(traj)
            preds = oracle_preds(traj)
            for iou in iou_final(traj, preds, windows).values():
                assert iou == pytest.approx(1.0, abs=1e-9)
                scored += 1
            for i, (ex, ey, etheta, eshape) in abs_errors_final(traj, preds, windows).items():
                assert ex == 0.0 and ey == 0.0 and eshape == 0.0
                if traj.obstacles[i].is_static:
                    assert etheta is None
                else:
                    assert etheta == 0.0
        assert scored > 0

    def test_zero_size_prediction_scores_near_zero(self):
        traj = boxed_traj(40, {0: [(t, 1) for t in range(10, 31)]}, [False],
                          [(0.3, 1.0)], [(1.5, 0.0, 0.0)])
        windows = compute_contact_windows(traj)
        preds = oracle_preds(traj)
        preds[:, 0, 5] = 0.0
        preds[:, 0, 6] = 0.0
        (iou,) = iou_final(traj, preds, windows).values()
        assert 0.0 < iou < 0.05

    def test_half_length_offset_gives_one_third(self):
        traj = boxed_traj(40, {0: [(t, 1) for t in range(10, 31)]}, [False],
                          [(0.3, 0.6)], [(1.0, 0.0, 0.0)])
        windows = compute_contact_windows(traj)
        preds = oracle_preds(traj)
        preds[:, 0, 2] += 0.3
        (iou,) = iou_final(traj, preds, windows).values()
        assert iou == pytest.approx(1.0 / 3.0, abs=1e-9)

    def test_theta_error_wraps_across_pi(self):
        traj = boxed_traj(40, {0: [(t, 1) for t in range(10, 31)]}, [False],
                          [(0.3, 0.6)], [(1.0, 0.2, 3.1)])
        preds = oracle_preds(traj)
        preds[:, 0, 4] = -3.1
        errs = abs_errors_final(traj, preds, compute_contact_windows(traj))
        assert errs[0][2] == pytest.approx(2.0 * math.pi - 6.2, abs=1e-6)

    def test_uncontacted_obstacle_excluded(self):
        traj = boxed_traj(40, {1: [(t, 1) for t in range(5, 20)]}, [False, True],
                          [(0.3, 0.6), (0.4, 0.4)], [(1.0, 0.3, 0.0), (2.0, -0.2, 0.0)])
        windows = compute_contact_windows(traj)
        preds = oracle_preds(traj)
        assert set(iou_final(traj, preds, windows)) == {1}
        assert set(abs_errors_final(traj, preds, windows)) == {1}

    def test_matches_model_route_exactly(self, medium_trajs):
        config = OrmConfig(embed_dim=8, num_blocks=1, num_heads=2, ff_hidden=16,
                           mlp_hidden=16, max_tokens=301, seed=3)
        params = init_params(config)
        eval_vals = [
            r.iou_final
            for traj in medium_trajs
            for r in evaluate_trajectory(params, traj, 5)
            if r.role == "Movable"
        ]
        model_val = heldout_movable_iou(params, medium_trajs, 5)
        assert eval_vals
        assert model_val == pytest.approx(float(np.mean(eval_vals)), abs=1e-12)

    @given(
        x=st.floats(-5, 5),
        y=st.floats(-5, 5),
        theta=st.floats(-7, 7),
        w=st.floats(-2, 2),
        length=st.floats(-2, 2),
    )
    def test_metrics_stay_in_range(self, x, y, theta, w, length):
        traj = boxed_traj(20, {0: [(t, 1) for t in range(5, 16)]}, [False],
                          [(0.3, 0.6)], [(1.0, 0.0, 0.5)])
        windows = compute_contact_windows(traj)
        preds = oracle_preds(traj)
        preds[:, 0, 2:7] = (x, y, theta, w, length)
        (iou,) = iou_final(traj, preds, windows).values()
        ex, ey, etheta, eshape = abs_errors_final(traj, preds, windows)[0]
        assert 0.0 <= iou <= 1.0
        assert ex >= 0.0 and ey >= 0.0 and eshape >= 0.0
        assert 0.0 <= etheta <= math.pi


class TestRolesAndResults:
    def test_static_roles_numbered_by_spawn_order(self):
        traj = boxed_traj(10, {}, [True, False, True],
                          [(0.3, 0.3), (0.3, 0.6), (0.4, 0.4)],
                          [(1.0, 0.0, 0.0), (1.5, 0.0, 0.0), (2.0, 0.0, 0.0)])
        assert obstacle_role(traj, 0) == "Static1"
        assert obstacle_role(traj, 1) == "Movable"
        assert obstacle_role(traj, 2) == "Static2"

    def test_result_validation_rejects_bad_values(self):
        with pytest.raises(AssertionError):
            ObstacleResult("easy", "Movable", 1.2, 0.0, 0.0, None, 0.0)
        with pytest.raises(AssertionError):
            ObstacleResult("easy", "Movable", 0.5, -0.1, 0.0, None, 0.0)


class TestAggregateReport:
    def test_single_result_cell_equals_input(self):
        res = ObstacleResult("easy", "Movable", 0.4, 0.1, 0.2, 0.3, 0.15)
        report = aggregate_report([res])
        (cell,) = report.cells
        assert (cell.category, cell.role, cell.count) == ("easy", "Movable", 1)
        assert (cell.iou, cell.ex, cell.ey, cell.etheta, cell.eshape) == (0.4, 0.1, 0.2, 0.3, 0.15)

    def test_cells_are_means(self):
        results = [
            ObstacleResult("medium", "Static1", 0.2, 0.1, 0.3, None, 0.1),
            ObstacleResult("medium", "Static1", 0.4, 0.3, 0.5, None, 0.3),
        ]
        (cell,) = aggregate_report(results).cells
        assert cell.count == 2
        assert cell.iou == pytest.approx(0.3)
        assert cell.ex == pytest.approx(0.2)
        assert cell.etheta is None

    def test_row_order_category_then_role(self):
        results = [
            ObstacleResult("hard", "Static2", 0.1, 0.1, 0.1, None, 0.1),
            ObstacleResult("hard", "Movable", 0.1, 0.1, 0.1, 0.1, 0.1),
            ObstacleResult("easy", "Static1", 0.1, 0.1, 0.1, None, 0.1),
            ObstacleResult("hard", "Static1", 0.1, 0.1, 0.1, None, 0.1),
        ]
        report = aggregate_report(results)
        assert [(c.category, c.role) for c in report.cells] == [
            ("easy", "Static1"),
            ("hard", "Movable"),
            ("hard", "Static1"),
            ("hard", "Static2"),
        ]

    def test_text_report_marks_missing_theta_and_quotes_reference(self):
        res = ObstacleResult("easy", "Static1", 0.5, 0.1, 0.1, None, 0.1)
        text = aggregate_report([res], header={"split": "heldout"}).to_text()
        row = next(line for line in text.splitlines() if line.startswith("easy"))
        assert "-" in row
        assert "split: heldout" in text
        assert "0.501" in text

    def test_json_report_round_trips(self):
        res = ObstacleResult("medium", "Movable", 0.45, 0.1, 0.2, 0.05, 0.12)
        payload = json.loads(aggregate_report([res], header={"digest": "abc123"}).to_json())
        assert payload["header"]["digest"] == "abc123"
        (cell,) = payload["cells"]
        assert cell["role"] == "Movable"
        assert cell["iou"] == 0.45
        assert payload["full_scale_reference"]["medium/Movable"][0] == 0.496

    def test_reference_table_matches_roles(self):
        for (category, role), vals in FULL_SCALE_REFERENCE.items():
            assert category in ("easy", "medium", "hard")
            assert role in ("Movable", "Static1", "Static2")
            assert len(vals) == 5
            assert (vals[3] is None) == role.startswith("Static")


class TestMeanBoxBaseline:
    def test_single_trajectory_baseline_is_perfect(self):
        traj = boxed_traj(40, {0: [(t, 1) for t in range(10, 31)]}, [False],
                          [(0.3, 0.6)], [(1.2, 0.1, 0.0)])
        iou = mean_box_movable_baseline([traj], [traj])
        assert iou == pytest.approx(1.0, abs=1e-9)

    def test_no_movable_contact_gives_none(self):
        static_only = boxed_traj(40, {0: [(t, 1) for t in range(10, 31)]}, [True],
                                 [(0.3, 0.6)], [(1.2, 0.1, 0.0)])
        assert mean_box_movable_baseline([static_only], [static_only]) is None
        assert mean_box_movable_baseline([], []) is None

    def test_baseline_is_anchored_to_robot_contact_pose(self):
        near = boxed_traj(40, {0: [(t, 1) for t in range(10, 31)]}, [False],
                          [(0.3, 0.6)], [(1.2, 0.0, 0.0)])
        far = boxed_traj(40, {0: [(t, 1) for t in range(10, 31)]}, [False],
                         [(0.3, 0.6)], [(2.2, 0.0, 0.0)])
        far.pose[:, 0] = 1.0
        iou_near = mean_box_movable_baseline([near], [near])
        iou_far = mean_box_movable_baseline([near], [far])
        assert iou_near == pytest.approx(1.0, abs=1e-9)
        assert iou_far == pytest.approx(1.0, abs=1e-9)


class TestMonotoneDegradation:
    def test_noise_sweep_never_improves_mean_iou(self, medium_trajs):
        rng = np.random.default_rng(11)
        base_noise = {}
        means = []
        for sigma in (0.0, 0.05, 0.1, 0.2, 0.4):
            vals = []
            for idx, traj in enumerate(medium_trajs):
                windows = compute_contact_windows(traj)
                if not windows:
                    continue
                preds = oracle_preds(traj)
                if idx not in base_noise:
                    base_noise[idx] = rng.standard_normal(preds[..., 2:7].shape)
                preds[..., 2:7] += sigma * base_noise[idx]
                vals.extend(iou_final(traj, preds, windows).values())
            means.append(float(np.mean(vals)))
        assert len(means) == 5
        for lo, hi in zip(means[1:], means[:-1]):
            assert lo <= hi + 0.01


def tiny_ablation_dataset():
    """Few episodes chosen so the heldout split is non-empty."""
    taken, k = [], 0
    held_seen = False
    while len(taken) < 6 or not held_seen:
        seed = derive_episode_seed(9, k)
        traj = roll_episode("medium", 1 + (k % 3), seed)
        if is_heldout(HELDOUT_SPLIT_SEED, seed):
            if not held_seen:
                held_seen = True
                taken.append(traj)
        elif len(taken) < 6:
            taken.append(traj)
        k += 1
    return Dataset(taken, stride=5)


@pytest.fixture(scope="module")
def runs():
    config = OrmConfig(embed_dim=8, num_blocks=1, num_heads=2, ff_hidden=16,
                       mlp_hidden=16, max_tokens=301, seed=3, epochs=1, batch_size=4)
    return ablation_suite(tiny_ablation_dataset(), config)


class TestAblationSuite:
    def test_runs_differ_only_in_channel_mask(self, runs):
        assert [r.subset for r in runs] == ["A", "B", "C", "D", "E"]
        base = replace(runs[0].config, channel_mask=("q", "qdot", "tau", "pose"))
        for run in runs:
            assert replace(run.config, channel_mask=("q", "qdot", "tau", "pose")) == base
        assert runs[0].config.channel_mask == ("q",)
        assert runs[4].config.channel_mask == ("tau", "pose")

    def test_scores_present_for_shared_heldout(self, runs):
        for run in runs:
            assert run.heldout_count >= 1
            assert run.movable_iou is None or 0.0 <= run.movable_iou <= 1.0

    def test_table_and_chart_are_deterministic(self, runs):
        table = ablation_table(runs)
        assert table == ablation_table(runs)
        for run in runs:
            assert f"\n{run.subset} " in "\n" + table
        chart = ablation_chart_svg(runs)
        assert chart == ablation_chart_svg(runs)
        assert chart.startswith("<svg") and chart.rstrip().endswith("</svg>")

    def test_unknown_subset_rejected(self):
        config = OrmConfig(embed_dim=8, num_blocks=1, num_heads=2, ff_hidden=16,
                           mlp_hidden=16, seed=3, epochs=0)
        with pytest.raises(ValueError, match="unknown ablation subset"):
            ablation_suite(Dataset([], stride=5), config, subsets=("A", "F"))

    def test_single_subset_run_allowed(self):
        config = OrmConfig(embed_dim=8, num_blocks=1, num_heads=2, ff_hidden=16,
                           mlp_hidden=16, seed=3, epochs=0)
        (run,) = ablation_suite(Dataset([], stride=5), config, subsets=("D",))
        assert run.subset == "D"
        assert run.movable_iou is None and run.heldout_count == 0


def gt_rows_from_world(world):
    return np.array(
        [
            [1.0, float(o.is_static), o.pose.x, o.pose.y, o.pose.theta, o.width, o.length]
            for o in world.obstacles
        ]
    )


class TestRenderFrame:
    def test_truth_only_frame(self):
        world = spawn_scene("medium", 3)
        svg = render_frame(world, predictions=None, tick=0)
        polygons = re.findall(r"<polygon ", svg)
        assert len(polygons) == len(world.obstacles) + 1
        assert "#f4c20d" in svg and "#d93025" in svg and "#2e8b57" in svg
        assert "#ff8c00" not in svg and "#1a73e8" not in svg

    def test_identical_inputs_identical_bytes(self):
        world = spawn_scene("hard", 5)
        preds = gt_rows_from_world(world)
        assert render_frame(world, preds, tick=7) == render_frame(world, preds, tick=7)

    def test_oracle_predictions_coincide_with_truth(self):
        world = spawn_scene("medium", 3)
        svg = render_frame(world, gt_rows_from_world(world), tick=0)
        points = re.findall(r'points="([^"]+)"', svg)
        n = len(world.obstacles)
        truth, preds = points[:n], points[n + 1 :]
        assert len(preds) == n
        for truth_pts, pred_pts in zip(truth, preds):
            a = np.array([[float(v) for v in p.split(",")] for p in truth_pts.split()])
            b = np.array([[float(v) for v in p.split(",")] for p in pred_pts.split()])
            assert np.abs(a - b).max() < 1e-6
        assert "IoU 1.000" in svg

    def test_prediction_colors_follow_static_probability(self):
        world = spawn_scene("easy", 1)
        rows = gt_rows_from_world(world)
        rows[:, 1] = 0.0
        assert "#ff8c00" in render_frame(world, rows, tick=0)
        rows[:, 1] = 1.0
        assert "#1a73e8" in render_frame(world, rows, tick=0)

    def test_low_contact_probability_dims_the_outline(self):
        world = spawn_scene("easy", 1)
        rows = gt_rows_from_world(world)
        rows[:, 0] = 0.2
        assert 'stroke-opacity="0.35"' in render_frame(world, rows, tick=0)
        rows[:, 0] = 0.9
        assert 'stroke-opacity="0.35"' not in render_frame(world, rows, tick=0)

    def test_goal_line_and_caption_present(self):
        world = spawn_scene("easy", 2)
        svg = render_frame(world, None, tick=123)
        assert "stroke-dasharray" in svg
        assert "tick 123" in svg


class TestEvaluateTrajectories:
    def test_results_pool_across_trajectories(self, medium_trajs):
        config = OrmConfig(embed_dim=8, num_blocks=1, num_heads=2, ff_hidden=16,
                           mlp_hidden=16, max_tokens=301, seed=3)
        params = init_params(config)
        pooled = evaluate_trajectories(params, medium_trajs[:4], 5)
        singles = [r for t in medium_trajs[:4] for r in evaluate_trajectory(params, t, 5)]
        assert pooled == singles
        assert {r.category for r in pooled} == {"medium"}
