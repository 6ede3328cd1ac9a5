"""Input-channel ablation on the medium category.

Trains one desk-preset model per channel subset (A..E) on a shared dataset
and prints the movable/static IoU comparison.  About five minutes at the
default scale on one CPU core.
"""

import argparse
import time

from boxsense.dataset import generate_dataset
from boxsense.evaluation import ablation_chart_svg, ablation_suite, ablation_table
from boxsense.model import desk_preset


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--episodes", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out", default=None, help="optional path for the SVG bar chart")
    args = parser.parse_args()

    started = time.time()
    data, _ = generate_dataset(
        master_seed=args.seed,
        episodes_per_category=args.episodes,
        cap_per_mode=150,
        categories=("medium",),
    )
    print(f"dataset: {len(data.trajectories)} curated episodes ({time.time() - started:.0f}s)")

    runs = ablation_suite(data, desk_preset(seed=0))
    print(ablation_table(runs))
    by_name = {r.subset: r.movable_iou for r in runs}
    print(f"D - A = {by_name['D'] - by_name['A']:+.3f}")
    print(f"E - A = {by_name['E'] - by_name['A']:+.3f}")
    print(f"total {time.time() - started:.0f}s")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(ablation_chart_svg(runs))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
