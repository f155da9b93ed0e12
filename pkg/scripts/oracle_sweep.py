#!/usr/bin/env python3
"""Run the interactive combo sweep against degraded oracles.

Generates a synthetic dataset, then evaluates every default prompt combo at
several oracle erosion radii, printing a combo x radius quality table and
writing per-run reports under the output directory. This reproduces the
shape of a quality-vs-combo comparison without any model weights.

Usage: python3 scripts/oracle_sweep.py [--out runs/sweep] [--seed 7]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from promptseg.fixtures import FixtureSpec, synth_fixtures
from promptseg.harness import DEFAULT_COMBOS, EvalRun, eval_interactive


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("runs/sweep"))
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--radii", type=int, nargs="+", default=[0, 1, 2])
    args = parser.parse_args()

    manifest = synth_fixtures(args.seed, FixtureSpec(), args.out / "data")
    oracle = (
        f"{sys.executable} -m promptseg.builtin_adapters oracle "
        "--frames {frames} --erosion {radius}"
    )
    table: dict[str, dict[int, float]] = {c: {} for c in DEFAULT_COMBOS}
    for radius in args.radii:
        run = EvalRun(
            manifest=manifest,
            mode="interactive",
            preprocessing="tile",
            adapter_cmd=oracle.replace("{radius}", str(radius)),
            seed=args.seed,
            out_dir=args.out / f"erosion_{radius}",
            combos=DEFAULT_COMBOS,
            window=128,
            step=64,
        )
        result = eval_interactive(run)
        for combo, dq in result.per_combo.items():
            table[combo][radius] = dq.mean_quality

    header = "combo".ljust(14) + "".join(f"r={r}".rjust(10) for r in args.radii)
    print(header)
    print("-" * len(header))
    for combo in DEFAULT_COMBOS:
        row = combo.ljust(14)
        row += "".join(f"{table[combo][r]:10.4f}" for r in args.radii)
        print(row)
    print(f"\nreports in {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
