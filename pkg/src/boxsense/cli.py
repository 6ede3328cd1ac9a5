"""Command-line entry point: gen, train, eval, ablate, render, selftest.

Every subcommand reads an optional key=value config file, applies flag
overrides (flags win), and stamps the resolved config digest into each
artifact it writes.  Exit codes: 0 success, 1 failed check or validation,
2 unreadable input or bad configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .config import ConfigError, RunConfig, config_digest, load_run_config, with_overrides
from .dataset import (
    ParseError,
    Trajectory,
    generate_dataset,
    read_dataset,
    roll_episode,
    trajectory_allclose,
    write_dataset,
)
from .evaluation import (
    ablation_chart_svg,
    ablation_suite,
    ablation_table,
    aggregate_report,
    evaluate_trajectories,
    mean_box_movable_baseline,
    render_frame,
)
from .geometry import Obb, Pose2, obb_corners, rotated_iou
from .model import (
    ABLATION_SUBSETS,
    HELDOUT_SPLIT_SEED,
    INPUT_DIM,
    Batch,
    CheckpointError,
    OrmConfig,
    backward,
    finite_diff_check,
    forward,
    init_params,
    load_checkpoint,
    masked_loss,
    predict,
    save_checkpoint,
    split_heldout,
    train_orm,
)
from .worldsim import ObstacleState, World

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_IO = 2

KNOWN_CATEGORIES = ("easy", "medium", "hard", "empty")


class CheckFailure(RuntimeError):
    """A validation or invariant check did not hold."""


def _resolve_config(args, **overrides) -> tuple[RunConfig, str]:
    base = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    try:
        cfg = with_overrides(base, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, config_digest(cfg)


def _write_text(path: str, text: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


# -- gen ----------------------------------------------------------------------


def cmd_gen(args) -> int:
    categories = tuple(v.strip() for v in args.category.split(",")) if args.category else None
    cfg, digest = _resolve_config(
        args,
        master_seed=args.seed,
        categories=categories,
        episodes_per_category=args.episodes,
        stride=args.stride,
    )
    unknown = [c for c in cfg.categories if c not in KNOWN_CATEGORIES]
    if unknown:
        raise ConfigError(f"unknown categories {unknown}; choose from {KNOWN_CATEGORIES}")
    data, report = generate_dataset(
        cfg.master_seed,
        cfg.episodes_per_category,
        cfg.cap_per_mode,
        categories=cfg.categories,
        config_digest=digest,
        stride=cfg.stride,
    )
    out = args.out or cfg.dataset_path
    write_dataset(data, out)
    report_path = out + ".report.txt"
    _write_text(report_path, f"config_digest: {digest}\n" + report.to_text())
    print(f"wrote {len(data.trajectories)} trajectories to {out} (config {digest})")
    print(f"curation report: {report_path}")
    return EXIT_OK


# -- train --------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg, digest = _resolve_config(args, orm_seed=args.seed)
    data = read_dataset(args.dataset or cfg.dataset_path)
    init = load_checkpoint(args.resume) if args.resume else None
    started = time.time()
    params, log = train_orm(data, cfg.orm, init=init)
    out = args.out or cfg.checkpoint_path
    parent = os.path.dirname(out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save_checkpoint(params, out, config_digest=digest)
    _write_text(out + ".log.json", json.dumps({"config_digest": digest, "epochs": log}, indent=2))
    for entry in log:
        print(json.dumps(entry))
    print(f"trained {cfg.orm.epochs} epochs in {time.time() - started:.1f}s -> {out}")
    return EXIT_OK


# -- eval ---------------------------------------------------------------------


def cmd_eval(args) -> int:
    cfg, digest = _resolve_config(args)
    params = load_checkpoint(args.checkpoint or cfg.checkpoint_path)
    dataset_path = args.dataset or cfg.dataset_path
    data = read_dataset(dataset_path)
    train, held = split_heldout(data)
    if not held:
        raise CheckFailure(
            f"held-out split of {dataset_path} is empty; nothing to evaluate"
        )
    results = evaluate_trajectories(params, held, data.stride)
    baseline = mean_box_movable_baseline(train, held, data.stride)
    header = {
        "config_digest": digest,
        "dataset": dataset_path,
        "dataset_digest": data.config_digest,
        "split": f"heldout 10% (split_seed={HELDOUT_SPLIT_SEED})",
        "trajectories": len(held),
        "baseline_movable_iou": None if baseline is None else round(baseline, 6),
    }
    report = aggregate_report(results, header)
    base = args.out or os.path.join(cfg.out_dir, "report")
    _write_text(base + ".txt", report.to_text())
    _write_text(base + ".json", report.to_json())
    print(report.to_text())
    print(f"wrote {base}.txt and {base}.json")
    return EXIT_OK


# -- ablate -------------------------------------------------------------------


def cmd_ablate(args) -> int:
    cfg, digest = _resolve_config(args, orm_seed=args.seed)
    subsets = (
        tuple(v.strip() for v in args.subset.split(",")) if args.subset else tuple(ABLATION_SUBSETS)
    )
    unknown = [s for s in subsets if s not in ABLATION_SUBSETS]
    if unknown:
        raise ConfigError(f"unknown subsets {unknown}; choose from {tuple(ABLATION_SUBSETS)}")
    data = read_dataset(args.dataset or cfg.dataset_path)
    runs = ablation_suite(data, cfg.orm, subsets)
    table = ablation_table(runs)
    base = args.out or os.path.join(cfg.out_dir, "ablation")
    _write_text(base + ".txt", f"config_digest: {digest}\n" + table)
    _write_text(base + ".svg", f"<!-- config {digest} -->\n" + ablation_chart_svg(runs))
    payload = {
        "config_digest": digest,
        "runs": [
            {
                "subset": r.subset,
                "channels": list(r.config.channel_mask),
                "movable_iou": r.movable_iou,
                "static_iou": r.static_iou,
                "heldout_count": r.heldout_count,
            }
            for r in runs
        ],
    }
    _write_text(base + ".json", json.dumps(payload, indent=2))
    print(table)
    print(f"wrote {base}.txt, {base}.json, {base}.svg")
    return EXIT_OK


# -- render -------------------------------------------------------------------


def _world_at(traj: Trajectory, tick: int) -> World:
    obstacles = [
        ObstacleState(
            pose=Pose2(*(float(v) for v in traj.obstacle_poses[tick, i])),
            width=rec.width,
            length=rec.length,
            is_static=rec.is_static,
        )
        for i, rec in enumerate(traj.obstacles)
    ]
    return World(
        robot_pose=Pose2(*(float(v) for v in traj.pose[tick])), obstacles=obstacles, tick=tick
    )


def cmd_render(args) -> int:
    cfg, digest = _resolve_config(args)
    params = load_checkpoint(args.checkpoint or cfg.checkpoint_path)
    data = read_dataset(args.dataset or cfg.dataset_path)
    if not data.trajectories:
        raise CheckFailure("dataset holds no trajectories to render")
    if args.seed is not None:
        matches = [t for t in data.trajectories if t.seed == args.seed]
        if not matches:
            raise ConfigError(f"unknown episode id {args.seed} (ids are episode seeds)")
        traj = matches[0]
    else:
        traj = data.trajectories[0]
    every_k = args.stride or 25
    if every_k <= 0:
        raise ConfigError("--stride must be positive")
    preds, _, _ = predict(params, traj, data.stride)
    n_tok = preds.shape[0]
    out_dir = args.out or os.path.join(cfg.out_dir, "frames")
    os.makedirs(out_dir, exist_ok=True)
    ticks = sorted(set(range(every_k - 1, traj.n_steps, every_k)) | {traj.n_steps - 1})
    for tick in ticks:
        rows = preds[min(tick // data.stride, n_tok - 1)]
        svg = render_frame(_world_at(traj, tick), rows, tick)
        _write_text(
            os.path.join(out_dir, f"frame_{tick:05d}.svg"), f"<!-- config {digest} -->\n" + svg
        )
    print(f"rendered {len(ticks)} frames of episode {traj.seed} into {out_dir}")
    return EXIT_OK


# -- selftest -----------------------------------------------------------------


def _mc_iou(a: Obb, b: Obb, n: int, rng: np.random.Generator) -> float:
    corners = np.array(obb_corners(a) + obb_corners(b))
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    pts = rng.uniform(lo, hi, size=(n, 2))

    def inside(box: Obb) -> np.ndarray:
        d = pts - (box.center.x, box.center.y)
        c, s = np.cos(box.center.theta), np.sin(box.center.theta)
        lx = d @ (c, s)
        ly = d @ (-s, c)
        return (np.abs(lx) <= 0.5 * box.length) & (np.abs(ly) <= 0.5 * box.width)

    in_a, in_b = inside(a), inside(b)
    union = (in_a | in_b).sum()
    return float((in_a & in_b).sum() / union) if union else 0.0


def _random_box(rng: np.random.Generator) -> Obb:
    return Obb(
        Pose2(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-np.pi, np.pi)),
        rng.uniform(0.1, 1.5),
        rng.uniform(0.1, 1.5),
    )


def _check_iou_oracle() -> None:
    rng = np.random.default_rng(0)
    for k in range(100):
        a, b = _random_box(rng), _random_box(rng)
        exact = rotated_iou(a, b)
        approx = _mc_iou(a, b, 100_000, rng)
        if abs(exact - approx) > 0.01:
            raise CheckFailure(f"pair {k}: analytic {exact:.4f} vs sampled {approx:.4f}")
    box = _random_box(rng)
    if abs(rotated_iou(box, box) - 1.0) > 1e-9:
        raise CheckFailure("identity pair not 1.0")
    apart = Obb(Pose2(10.0, 0.0, 0.0), 0.3, 0.3)
    if rotated_iou(box, apart) != 0.0:
        raise CheckFailure("disjoint pair not exactly 0.0")


def _tiny_selftest_config(**overrides) -> OrmConfig:
    base = dict(embed_dim=8, num_blocks=1, num_heads=2, ff_hidden=16, mlp_hidden=16,
                max_tokens=32, seed=5)
    base.update(overrides)
    return OrmConfig(**base)


def _random_selftest_batch(rng: np.random.Generator, n_seq=2, n_tok=6) -> Batch:
    labels = np.zeros((n_seq, n_tok, 3, 7))
    labels[..., 0] = rng.integers(0, 2, (n_seq, n_tok, 3))
    labels[..., 1] = rng.integers(0, 2, (n_seq, n_tok, 3))
    labels[..., 2:5] = rng.uniform(-1, 1, (n_seq, n_tok, 3, 3))
    labels[..., 5:7] = rng.uniform(0.1, 1.0, (n_seq, n_tok, 3, 2))
    mask = (rng.random((n_seq, n_tok, 3)) < 0.6).astype(float)
    mask[0, 0, 0] = 1.0
    return Batch(
        inputs=rng.standard_normal((n_seq, n_tok, INPUT_DIM)),
        labels=labels,
        mask=mask,
        lengths=[n_tok] * n_seq,
    )


def _check_causality() -> None:
    rng = np.random.default_rng(1)
    for draw in range(3):
        params = init_params(_tiny_selftest_config(seed=draw))
        inputs = rng.standard_normal((1, 12, INPUT_DIM))
        reference, _ = forward(params, inputs)
        for cut in (4, 9):
            poked = inputs.copy()
            poked[:, cut:] += rng.standard_normal(poked[:, cut:].shape)
            out, _ = forward(params, poked)
            if not np.array_equal(out[:, :cut], reference[:, :cut]):
                raise CheckFailure(f"prefix changed for draw {draw}, cut {cut}")


def _check_gradients(corrupt: str | None) -> None:
    params = init_params(_tiny_selftest_config())
    batch = _random_selftest_batch(np.random.default_rng(2))
    err = finite_diff_check(params, batch, n_samples=120, corrupt=corrupt)
    if err > 1e-4:
        raise CheckFailure(f"max relative gradient error {err:.2e} exceeds 1e-4")


def _check_mask_zeroing() -> None:
    params = init_params(_tiny_selftest_config())
    batch = _random_selftest_batch(np.random.default_rng(3))
    batch.mask[:] = 0.0
    preds, cache = forward(params, batch.inputs)
    loss, dpreds = masked_loss(preds, batch)
    if loss != 0.0:
        raise CheckFailure(f"all-masked loss {loss!r} is not exactly 0")
    grads = backward(params, cache, dpreds)
    worst = max(float(np.abs(g).max()) for g in grads.values())
    if worst != 0.0:
        raise CheckFailure(f"all-masked gradients reach {worst:.2e}")


def _check_determinism() -> None:
    first = roll_episode("medium", 1, 1234, t_max=300)
    second = roll_episode("medium", 1, 1234, t_max=300)
    if not trajectory_allclose(first, second, tol=0.0):
        raise CheckFailure("same-seed episodes differ")
    params = init_params(_tiny_selftest_config(max_tokens=301))
    a, _, _ = predict(params, first, 5)
    b, _, _ = predict(params, first, 5)
    if not np.array_equal(a, b):
        raise CheckFailure("repeated inference differs")


def cmd_selftest(args) -> int:
    checks = [
        ("iou-oracle", lambda: _check_iou_oracle()),
        ("causality", lambda: _check_causality()),
        ("gradient-check", lambda: _check_gradients(args.corrupt)),
        ("mask-zeroing", lambda: _check_mask_zeroing()),
        ("determinism", lambda: _check_determinism()),
    ]
    failures = 0
    for name, run in checks:
        started = time.time()
        try:
            run()
        except CheckFailure as exc:
            failures += 1
            print(f"FAIL {name}: {exc}")
        else:
            print(f"ok   {name} ({time.time() - started:.1f}s)")
    if failures:
        print(f"{failures} of {len(checks)} checks failed")
        return EXIT_CHECK
    print(f"all {len(checks)} checks passed")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boxsense",
        description="corridor pushing benchmark: data generation, training, evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="roll episodes, curate, and write a JSONL dataset")
    gen.add_argument("--config", help="key=value run config file")
    gen.add_argument("--seed", type=int, help="master seed override")
    gen.add_argument("--category", help="comma-separated category list override")
    gen.add_argument("--episodes", type=int, help="episodes per category override")
    gen.add_argument("--stride", type=int, help="token subsampling stride stored in the header")
    gen.add_argument("--out", help="dataset output path")
    gen.set_defaults(func=cmd_gen)

    train = sub.add_parser("train", help="train the reconstruction model on a dataset")
    train.add_argument("--config", help="key=value run config file")
    train.add_argument("--dataset", help="JSONL dataset path")
    train.add_argument("--seed", type=int, help="training seed override")
    train.add_argument("--resume", help="checkpoint to continue from")
    train.add_argument("--out", help="checkpoint output path")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="score the held-out split and write report tables")
    ev.add_argument("--config", help="key=value run config file")
    ev.add_argument("--checkpoint", help="trained checkpoint path")
    ev.add_argument("--dataset", help="JSONL dataset path")
    ev.add_argument("--out", help="report basename (writes .txt and .json)")
    ev.set_defaults(func=cmd_eval)

    ab = sub.add_parser("ablate", help="train once per input-channel subset and compare")
    ab.add_argument("--config", help="key=value run config file")
    ab.add_argument("--dataset", help="JSONL dataset path")
    ab.add_argument("--subset", help="comma-separated subset letters (default A,B,C,D,E)")
    ab.add_argument("--seed", type=int, help="training seed override")
    ab.add_argument("--out", help="output basename (writes .txt, .json, .svg)")
    ab.set_defaults(func=cmd_ablate)

    rn = sub.add_parser("render", help="replay one episode into SVG frames")
    rn.add_argument("--config", help="key=value run config file")
    rn.add_argument("--checkpoint", help="trained checkpoint path")
    rn.add_argument("--dataset", help="JSONL dataset path")
    rn.add_argument("--seed", type=int, help="episode id (episode seed) to render")
    rn.add_argument("--stride", type=int, help="emit a frame every this many ticks (default 25)")
    rn.add_argument("--out", help="frame output directory")
    rn.set_defaults(func=cmd_render)

    st = sub.add_parser("selftest", help="run the fast invariant checks")
    st.add_argument("--corrupt", help=argparse.SUPPRESS)
    st.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (CheckFailure, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    raise SystemExit(main())
