"""Command-line interface.

Subcommands: fixtures, concavity, prompts-gen, preprocess,
eval-interactive, eval-auto, grid-search, agreement.

Exit codes: 0 success, 2 validation error, 3 adapter fault.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import fixtures as fixtures_mod
from . import harness, mask, preprocess
from .adapter import AdapterError
from .geometry import concavity_histogram
from .harness import DEFAULT_COMBOS, EvalRun, ValidationError
from .mask import extract_instances, load_label_mask, load_manifest
from .prompts import (
    ComboError,
    PromptCacheError,
    PromptSamplingError,
    parse_combo,
    prompt_seed,
    sample_prompt_set,
    save_prompt_cache,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_ADAPTER = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="global random seed")
    parser.add_argument("--out", type=Path, required=True, help="output directory")


def _add_adapter(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--manifest", type=Path, required=True)
    parser.add_argument(
        "--adapter-cmd",
        required=True,
        help="adapter command line; '{frames}' expands to the frames manifest",
    )
    parser.add_argument("--mode", choices=["tile", "resize"], default="resize",
                        help="preprocessing strategy")
    parser.add_argument("--window", type=int, default=preprocess.DEFAULT_WINDOW)
    parser.add_argument("--step", type=int, default=preprocess.DEFAULT_STEP)
    parser.add_argument("--target-size", type=int, default=preprocess.DEFAULT_TARGET)
    parser.add_argument("--timeout", type=float, default=60.0)


def _cmd_fixtures(args: argparse.Namespace) -> int:
    spec = fixtures_mod.FixtureSpec(
        n_images=args.images,
        n_search=args.search,
        width=args.width,
        height=args.height,
        rectangles=args.rectangles,
        l_shapes=args.l_shapes,
        ribbons=args.ribbons,
    )
    manifest = fixtures_mod.synth_fixtures(args.seed, spec, args.out)
    print(f"wrote {manifest}")
    return EXIT_OK


def _cmd_concavity(args: argparse.Namespace) -> int:
    records = load_manifest(args.manifest)
    if args.split != "all":
        records = [r for r in records if r.split == args.split]
    instances = []
    for record in records:
        instances.extend(extract_instances(load_label_mask(record.mask)))
    hist = concavity_histogram(instances, bin_width=args.bin_width, threshold=args.threshold)
    args.out.mkdir(parents=True, exist_ok=True)
    hist.write_csv(args.out / "concavity.csv")
    (args.out / "concavity.json").write_text(hist.to_json() + "\n", encoding="utf-8")
    print(
        f"{len(instances)} instances; "
        f"{100 * hist.fraction_over_threshold:.1f}% above concavity {args.threshold}"
    )
    return EXIT_OK


def _cmd_prompts_gen(args: argparse.Namespace) -> int:
    records = load_manifest(args.manifest)
    combos = [c.strip() for c in args.combos.split(",") if c.strip()]
    out = args.out / "prompts"
    out.mkdir(parents=True, exist_ok=True)
    n_files = 0
    for record in records:
        gt = load_label_mask(record.mask)
        name = record.image.stem
        for combo in combos:
            spec = parse_combo(combo)
            sets = [
                sample_prompt_set(
                    inst, spec, prompt_seed(args.seed, name, inst.object_id, combo)
                )
                for inst in extract_instances(gt)
            ]
            save_prompt_cache(
                sets,
                out / f"{name}__{combo}__s{args.seed}.json",
                global_seed=args.seed,
                image_id=name,
                width=gt.width,
                height=gt.height,
            )
            n_files += 1
    print(f"wrote {n_files} prompt cache files to {out}")
    return EXIT_OK


def _cmd_preprocess(args: argparse.Namespace) -> int:
    records = load_manifest(args.manifest)
    if args.split != "all":
        records = [r for r in records if r.split == args.split]
    all_frames = []
    for idx, record in enumerate(records):
        all_frames.extend(
            preprocess.build_frames(
                record.image,
                record.mask,
                args.out / "frames" / f"{idx:02d}",
                mode=args.mode,
                window=args.window,
                step=args.step,
                target_size=args.target_size,
            )
        )
    args.out.mkdir(parents=True, exist_ok=True)
    preprocess.save_frames_manifest(all_frames, args.out / "frames.json")
    print(f"wrote {len(all_frames)} frames and {args.out / 'frames.json'}")
    return EXIT_OK


def _cmd_eval_interactive(args: argparse.Namespace) -> int:
    combos = tuple(c.strip() for c in args.combos.split(",") if c.strip())
    run = EvalRun(
        manifest=args.manifest,
        mode="interactive",
        preprocessing=args.mode,
        adapter_cmd=args.adapter_cmd,
        seed=args.seed,
        out_dir=args.out,
        combos=combos,
        window=args.window,
        step=args.step,
        target_size=args.target_size,
        timeout=args.timeout,
    )
    result = harness.eval_interactive(run)
    for combo in sorted(result.per_combo):
        dq = result.per_combo[combo]
        print(f"{combo}: mean={dq.mean_quality:.4f} pooled={dq.pooled_quality:.4f}")
    return EXIT_OK


def _cmd_eval_auto(args: argparse.Namespace) -> int:
    params = json.loads(args.params) if args.params else {}
    run = EvalRun(
        manifest=args.manifest,
        mode="automatic",
        preprocessing=args.mode,
        adapter_cmd=args.adapter_cmd,
        seed=args.seed,
        out_dir=args.out,
        window=args.window,
        step=args.step,
        target_size=args.target_size,
        timeout=args.timeout,
    )
    result = harness.eval_automatic(run, params=params)
    print(f"automatic: mean={result.mean_quality:.4f} pooled={result.pooled_quality:.4f}")
    return EXIT_OK


def _cmd_grid_search(args: argparse.Namespace) -> int:
    grid = json.loads(args.grid)
    if not isinstance(grid, dict):
        raise ValidationError("--grid must be a JSON object of parameter -> value list")
    result = harness.grid_search(
        manifest=args.manifest,
        adapter_cmd=args.adapter_cmd,
        grid=grid,
        seed=args.seed,
        out_dir=args.out,
        preprocessing=args.mode,
        window=args.window,
        step=args.step,
        target_size=args.target_size,
        timeout=args.timeout,
    )
    print(f"best: {json.dumps(result.best_params, sort_keys=True)} "
          f"quality={result.best_quality:.4f}")
    return EXIT_OK


def _cmd_agreement(args: argparse.Namespace) -> int:
    report = harness.agreement(args.manifest_a, args.manifest_b, args.out, seed=args.seed)
    print(
        f"{len(report.rows)} matched pairs: mean DSC={report.mean_dsc:.4f}, "
        f"mean HD95={report.mean_hd95:.4f}; "
        f"unmatched: {len(report.unmatched_a)} reference, {len(report.unmatched_b)} other"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="promptseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixtures", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--images", type=int, default=5)
    p.add_argument("--search", type=int, default=2, help="images assigned to the search split")
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--rectangles", type=int, default=3)
    p.add_argument("--l-shapes", dest="l_shapes", type=int, default=2)
    p.add_argument("--ribbons", type=int, default=3)
    p.set_defaults(func=_cmd_fixtures)

    p = sub.add_parser("concavity", help="concavity distribution of GT objects")
    _add_common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--bin-width", type=float, default=0.05)
    p.add_argument("--threshold", type=float, default=0.2)
    p.add_argument("--split", choices=["all", "search", "eval"], default="all")
    p.set_defaults(func=_cmd_concavity)

    p = sub.add_parser("prompts-gen", help="generate prompt caches")
    _add_common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--combos", default=",".join(DEFAULT_COMBOS))
    p.set_defaults(func=_cmd_prompts_gen)

    p = sub.add_parser("preprocess", help="materialize model-frame images")
    _add_common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--mode", choices=["tile", "resize"], default="resize")
    p.add_argument("--window", type=int, default=preprocess.DEFAULT_WINDOW)
    p.add_argument("--step", type=int, default=preprocess.DEFAULT_STEP)
    p.add_argument("--target-size", type=int, default=preprocess.DEFAULT_TARGET)
    p.add_argument("--split", choices=["all", "search", "eval"], default="all")
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("eval-interactive", help="prompted per-object evaluation")
    _add_common(p)
    _add_adapter(p)
    p.add_argument("--combos", default=",".join(DEFAULT_COMBOS))
    p.set_defaults(func=_cmd_eval_interactive)

    p = sub.add_parser("eval-auto", help="automatic instance-proposal evaluation")
    _add_common(p)
    _add_adapter(p)
    p.add_argument("--params", help="JSON object of adapter parameters")
    p.set_defaults(func=_cmd_eval_auto)

    p = sub.add_parser("grid-search", help="parameter sweep on the search split")
    _add_common(p)
    _add_adapter(p)
    p.add_argument("--grid", required=True, help="JSON object: parameter -> value list")
    p.set_defaults(func=_cmd_grid_search)

    p = sub.add_parser("agreement", help="annotation agreement between two manifests")
    _add_common(p)
    p.add_argument("--manifest-a", type=Path, required=True)
    p.add_argument("--manifest-b", type=Path, required=True)
    p.set_defaults(func=_cmd_agreement)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AdapterError as exc:
        print(f"adapter fault: {exc}", file=sys.stderr)
        return EXIT_ADAPTER
    except (
        ValidationError,
        ComboError,
        PromptCacheError,
        PromptSamplingError,
        mask.MaskError,
        fixtures_mod.FixtureError,
        FileNotFoundError,
        ValueError,
        json.JSONDecodeError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
