#!/usr/bin/env python3
"""Compare tiling against whole-image resizing on identical fixtures.

Runs the automatic pipeline through a degraded oracle under both
preprocessing strategies and prints the quality side by side, echoing the
kind of preprocessing comparison a real model study would do.

Usage: python3 scripts/tile_vs_resize.py [--out runs/tiling] [--seed 13]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from promptseg.fixtures import FixtureSpec, synth_fixtures
from promptseg.harness import EvalRun, eval_automatic


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("runs/tiling"))
    parser.add_argument("--seed", type=int, default=13)
    parser.add_argument("--erosion", type=int, default=1)
    args = parser.parse_args()

    manifest = synth_fixtures(args.seed, FixtureSpec(), args.out / "data")
    oracle = (
        f"{sys.executable} -m promptseg.builtin_adapters oracle "
        f"--frames {{frames}} --erosion {args.erosion}"
    )
    print(f"oracle erosion radius: {args.erosion}\n")
    print("mode      mean_quality  pooled_quality")
    for preprocessing in ("tile", "resize"):
        run = EvalRun(
            manifest=manifest,
            mode="automatic",
            preprocessing=preprocessing,
            adapter_cmd=oracle,
            seed=args.seed,
            out_dir=args.out / preprocessing,
            window=128,
            step=64,
            target_size=1024,
        )
        result = eval_automatic(run)
        print(f"{preprocessing:<10}{result.mean_quality:>12.4f}{result.pooled_quality:>16.4f}")
    print(f"\nreports in {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
