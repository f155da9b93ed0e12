"""Experiment drivers: interactive/automatic evaluation, hyperparameter
grid search on the search split, and annotation-agreement reports.

All runs are deterministic: identical (manifest, seed, adapter, flags)
produce identical report files. Reports carry the seed, are sorted by
image then combo, and never embed timestamps.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mask as mask_io
from . import preprocess
from .adapter import AdapterRequest, AdapterSession, response_to_instances
from .mask import (
    DatasetRecord,
    InstanceMask,
    LabelMask,
    assemble_label_mask,
    connected_components,
    extract_instances,
)
from .metrics import (
    DEFAULT_THRESHOLDS,
    DatasetQuality,
    dataset_quality,
    dsc,
    hd95,
    match_at_threshold,
    pairwise_iou,
    quality,
    write_quality_csv,
)
from .prompts import (
    PromptSet,
    format_combo,
    load_prompt_cache,
    parse_combo,
    prompt_seed,
    sample_prompt_set,
    save_prompt_cache,
)

log = logging.getLogger(__name__)

DEFAULT_COMBOS = ("p1", "p2", "p4", "p8", "p4_n8", "bbox", "bbox_p4", "bbox_p4_n8")

AGREEMENT_MATCH_IOU = 0.5


class ValidationError(ValueError):
    """Bad run configuration or inputs; maps to CLI exit code 2."""


@dataclass(frozen=True)
class EvalRun:
    """Configuration of one evaluation run."""

    manifest: Path
    mode: str  # "interactive" | "automatic"
    preprocessing: str  # "tile" | "resize"
    adapter_cmd: str
    seed: int
    out_dir: Path
    combos: tuple[str, ...] = ()
    window: int = preprocess.DEFAULT_WINDOW
    step: int = preprocess.DEFAULT_STEP
    target_size: int = preprocess.DEFAULT_TARGET
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    timeout: float = 60.0

    def __post_init__(self) -> None:
        if self.mode not in ("interactive", "automatic"):
            raise ValidationError(f"mode must be interactive or automatic: {self.mode!r}")
        if self.preprocessing not in ("tile", "resize"):
            raise ValidationError(f"preprocessing must be tile or resize: {self.preprocessing!r}")
        if self.mode == "interactive" and not self.combos:
            raise ValidationError("interactive runs need at least one prompt combo")
        if self.mode == "automatic" and self.combos:
            raise ValidationError("automatic runs take no prompt combos")


@dataclass
class _PreparedImage:
    name: str
    record: DatasetRecord
    gt: LabelMask
    frames: list[preprocess.Frame]


def _prepare_images(
    records: list[DatasetRecord], run: EvalRun
) -> tuple[list[_PreparedImage], Path]:
    """Load GT, materialize model frames, write the frames manifest."""
    if not records:
        raise ValidationError("no records in the requested split")
    frames_dir = run.out_dir / "frames"
    prepared = []
    all_frames = []
    for idx, record in enumerate(records):
        gt = mask_io.load_label_mask(record.mask)
        frames = preprocess.build_frames(
            record.image,
            record.mask,
            frames_dir / f"{idx:02d}",
            mode=run.preprocessing,
            window=run.window,
            step=run.step,
            target_size=run.target_size,
        )
        prepared.append(
            _PreparedImage(name=record.image.stem, record=record, gt=gt, frames=frames)
        )
        all_frames.extend(frames)
    frames_manifest = run.out_dir / "frames.json"
    preprocess.save_frames_manifest(all_frames, frames_manifest)
    return prepared, frames_manifest


def _adapter_command(run: EvalRun, frames_manifest: Path) -> str:
    return run.adapter_cmd.replace("{frames}", str(frames_manifest))


def _select_frame(
    frames: list[preprocess.Frame], instance: InstanceMask
) -> preprocess.Frame:
    """Frame to prompt in: first tile fully containing the object's box,
    else the tile overlapping it most; resize mode has a single frame."""
    if len(frames) == 1 and frames[0].tile() is None:
        return frames[0]
    box = instance.bounding_box()
    best = None
    best_overlap = -1
    for frame in frames:
        tile_box = frame.tile().box()
        if tile_box.contains(box):
            return frame
        ix = min(tile_box.x_max, box.x_max) - max(tile_box.x_min, box.x_min) + 1
        iy = min(tile_box.y_max, box.y_max) - max(tile_box.y_min, box.y_min) + 1
        overlap = max(ix, 0) * max(iy, 0)
        if overlap > best_overlap:
            best, best_overlap = frame, overlap
    assert best is not None
    return best


def _prompts_to_frame(
    ps: PromptSet, frame: preprocess.Frame
) -> tuple[list[tuple[int, int]], list[tuple[int, int]], tuple[int, int, int, int] | None]:
    """Express a source-frame PromptSet in model-frame coordinates.

    Tile frames translate; points falling outside the tile are dropped and
    the box is clipped. Resize frames map through the plan.
    """
    tile = frame.tile()
    if tile is not None:
        bx = tile.box()

        def inside(p: tuple[int, int]) -> bool:
            return bx.x_min <= p[0] <= bx.x_max and bx.y_min <= p[1] <= bx.y_max

        fg = [(x - tile.x0, y - tile.y0) for x, y in ps.foreground_points if inside((x, y))]
        bg = [(x - tile.x0, y - tile.y0) for x, y in ps.background_points if inside((x, y))]
        box = None
        if ps.box is not None:
            x0 = max(ps.box.x_min, bx.x_min) - tile.x0
            y0 = max(ps.box.y_min, bx.y_min) - tile.y0
            x1 = min(ps.box.x_max, bx.x_max) - tile.x0
            y1 = min(ps.box.y_max, bx.y_max) - tile.y0
            if x0 <= x1 and y0 <= y1:
                box = (x0, y0, x1, y1)
        return fg, bg, box
    plan = frame.resize_plan()
    assert plan is not None
    fg = [preprocess.map_point(plan, p) for p in ps.foreground_points]
    bg = [preprocess.map_point(plan, p) for p in ps.background_points]
    box = None
    if ps.box is not None:
        mapped = preprocess.map_box(plan, ps.box)
        box = (mapped.x_min, mapped.y_min, mapped.x_max, mapped.y_max)
    return fg, bg, box


def _prompt_cache_for(
    image: _PreparedImage, combo: str, run: EvalRun
) -> list[PromptSet]:
    """Load the prompt cache for (image, combo, seed), generating it first
    if missing."""
    cache_dir = run.out_dir / "prompts"
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"{image.name}__{combo}__s{run.seed}.json"
    if path.exists():
        return load_prompt_cache(path, expected_seed=run.seed)
    spec = parse_combo(combo)
    sets = [
        sample_prompt_set(
            inst, spec, prompt_seed(run.seed, image.name, inst.object_id, combo)
        )
        for inst in extract_instances(image.gt)
    ]
    save_prompt_cache(
        sets,
        path,
        global_seed=run.seed,
        image_id=image.name,
        width=image.gt.width,
        height=image.gt.height,
    )
    return load_prompt_cache(path, expected_seed=run.seed)


@dataclass
class InteractiveResult:
    per_combo: dict[str, DatasetQuality]
    conflicts: dict[tuple[str, str], int] = field(default_factory=dict)


def eval_interactive(run: EvalRun) -> InteractiveResult:
    """Prompt-conditioned evaluation over the eval split, per combo.

    For every GT object one interactive request is issued in model-frame
    coordinates; predictions are mapped back to the native frame, later
    objects overwriting earlier ones on pixel conflicts (counted), and the
    assembled map is scored against GT.
    """
    records = [r for r in mask_io.load_manifest(run.manifest) if r.split == "eval"]
    run.out_dir.mkdir(parents=True, exist_ok=True)
    prepared, frames_manifest = _prepare_images(records, run)
    combos = tuple(format_combo(parse_combo(c)) for c in run.combos)
    request_counter = itertools.count(1)
    per_combo: dict[str, DatasetQuality] = {}
    conflicts: dict[tuple[str, str], int] = {}
    with AdapterSession(_adapter_command(run, frames_manifest), timeout=run.timeout) as session:
        combo_reports: dict[str, dict[str, object]] = {c: {} for c in combos}
        for image in prepared:
            gt_instances = extract_instances(image.gt)
            for combo in combos:
                cache = {ps.object_id: ps for ps in _prompt_cache_for(image, combo, run)}
                predictions: list[tuple[int, np.ndarray]] = []
                for inst in gt_instances:
                    ps = cache.get(inst.object_id)
                    if ps is None:
                        raise ValidationError(
                            f"prompt cache missing object {inst.object_id} for "
                            f"{image.name}/{combo}"
                        )
                    frame = _select_frame(image.frames, inst)
                    fg, bg, box = _prompts_to_frame(ps, frame)
                    if not fg and not bg and box is None:
                        log.warning(
                            "object %d of %s has no in-frame prompts; skipping",
                            inst.object_id,
                            image.name,
                        )
                        continue
                    request = AdapterRequest(
                        kind="interactive",
                        request_id=f"r{next(request_counter):05d}",
                        image=str(frame.image),
                        width=frame.width,
                        height=frame.height,
                        object_id=inst.object_id,
                        foreground=tuple(fg),
                        background=tuple(bg),
                        box=box,
                    )
                    response = session.request(request)
                    returned = response_to_instances(response, frame.width, frame.height)
                    if not returned:
                        continue
                    source_mask = preprocess.instance_to_source_frame(
                        returned[0].mask, frame, image.gt.width, image.gt.height
                    )
                    predictions.append((inst.object_id, source_mask))
                pred_mask, n_conflicts = assemble_label_mask(
                    predictions, image.gt.width, image.gt.height
                )
                conflicts[(image.name, combo)] = n_conflicts
                combo_reports[combo][image.name] = quality(
                    pred_mask, image.gt, run.thresholds
                )
        for combo in combos:
            per_combo[combo] = dataset_quality(combo_reports[combo])  # type: ignore[arg-type]
    result = InteractiveResult(per_combo=per_combo, conflicts=conflicts)
    _write_interactive_reports(run, result)
    return result


def _frame_predictions(
    session: AdapterSession,
    image: _PreparedImage,
    params: dict,
    request_counter: itertools.count,
) -> LabelMask:
    """One automatic request per frame; responses stitched/upscaled back to
    the native frame as a fresh instance map."""
    per_tile: list[tuple[preprocess.Tile, list[InstanceMask]]] = []
    resize_instances: list[InstanceMask] = []
    for frame in image.frames:
        request = AdapterRequest(
            kind="automatic",
            request_id=f"r{next(request_counter):05d}",
            image=str(frame.image),
            width=frame.width,
            height=frame.height,
            params=params,
        )
        response = session.request(request)
        raw = response_to_instances(response, frame.width, frame.height)
        # adapters may return merged blobs as one mask: split into components
        split: list[InstanceMask] = []
        for inst in raw:
            components = connected_components(inst.mask.astype(np.uint8), connectivity=8)
            split.extend(
                InstanceMask(object_id=len(split) + k + 1, mask=m.mask)
                for k, m in enumerate(extract_instances(components))
            )
        tile = frame.tile()
        if tile is not None:
            per_tile.append((tile, split))
        else:
            plan = frame.resize_plan()
            assert plan is not None
            for inst in split:
                up = preprocess.upscale_binary(plan, inst.mask)
                if up.any():
                    resize_instances.append(
                        InstanceMask(object_id=len(resize_instances) + 1, mask=up)
                    )
    if per_tile:
        return preprocess.stitch_instances(per_tile, image.gt.width, image.gt.height)
    pred, _ = assemble_label_mask(
        [(inst.object_id, inst.mask) for inst in resize_instances],
        image.gt.width,
        image.gt.height,
    )
    return pred


def eval_automatic(
    run: EvalRun, params: dict | None = None, split: str = "eval"
) -> DatasetQuality:
    """Whole-image instance proposal evaluation on a manifest split."""
    params = dict(params or {})
    records = [r for r in mask_io.load_manifest(run.manifest) if r.split == split]
    run.out_dir.mkdir(parents=True, exist_ok=True)
    prepared, frames_manifest = _prepare_images(records, run)
    request_counter = itertools.count(1)
    reports = {}
    with AdapterSession(_adapter_command(run, frames_manifest), timeout=run.timeout) as session:
        for image in prepared:
            pred = _frame_predictions(session, image, params, request_counter)
            reports[image.name] = quality(pred, image.gt, run.thresholds)
    result = dataset_quality(reports)
    _write_automatic_reports(run, result, params)
    return result


@dataclass(frozen=True)
class GridSearchResult:
    grid: dict[str, tuple]
    evaluations: tuple[dict, ...]  # {"params": {...}, "mean_quality": float}
    best_params: dict
    best_quality: float
    tie: bool


def _grid_combinations(grid: dict[str, list]) -> list[dict]:
    """Cartesian sweep in lexicographic order: parameter names sorted,
    each value list deduplicated and sorted ascending."""
    if not grid:
        raise ValidationError("parameter grid must be non-empty")
    names = sorted(grid)
    value_lists = []
    for name in names:
        values = sorted(set(grid[name]), key=lambda v: (isinstance(v, str), v))
        if not values:
            raise ValidationError(f"parameter {name!r} has no values")
        value_lists.append(values)
    return [dict(zip(names, combo)) for combo in itertools.product(*value_lists)]


def grid_search(
    manifest: Path,
    adapter_cmd: str,
    grid: dict[str, list],
    seed: int,
    out_dir: Path,
    preprocessing: str = "resize",
    window: int = preprocess.DEFAULT_WINDOW,
    step: int = preprocess.DEFAULT_STEP,
    target_size: int = preprocess.DEFAULT_TARGET,
    timeout: float = 60.0,
) -> GridSearchResult:
    """Exhaustive parameter sweep scored on the search split only.

    The best combination is the quality argmax; exact ties go to the
    lexicographically first parameter tuple. Eval-split images and masks
    are never read.
    """
    combinations = _grid_combinations(grid)
    out_dir = Path(out_dir)
    evaluations = []
    best = None
    tie = False
    for k, params in enumerate(combinations):
        run = EvalRun(
            manifest=Path(manifest),
            mode="automatic",
            preprocessing=preprocessing,
            adapter_cmd=adapter_cmd,
            seed=seed,
            out_dir=out_dir / f"combo_{k:03d}",
            window=window,
            step=step,
            target_size=target_size,
            timeout=timeout,
        )
        result = eval_automatic(run, params=params, split="search")
        evaluations.append({"params": params, "mean_quality": result.mean_quality})
        if best is None or result.mean_quality > best[1]:
            best = (params, result.mean_quality)
            tie = False
        elif result.mean_quality == best[1]:
            tie = True
    assert best is not None
    result = GridSearchResult(
        grid={k: tuple(v) for k, v in grid.items()},
        evaluations=tuple(evaluations),
        best_params=best[0],
        best_quality=best[1],
        tie=tie,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "grid_search.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "seed": seed,
                "grid": {k: list(v) for k, v in result.grid.items()},
                "evaluations": list(result.evaluations),
                "best_params": result.best_params,
                "best_quality": result.best_quality,
                "tie": result.tie,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    return result


@dataclass(frozen=True)
class AgreementRow:
    image: str
    a_id: int
    b_id: int
    iou: float
    dsc: float
    hd95: float


@dataclass(frozen=True)
class AgreementReport:
    rows: tuple[AgreementRow, ...]
    unmatched_a: tuple[tuple[str, int], ...]
    unmatched_b: tuple[tuple[str, int], ...]
    mean_dsc: float
    median_dsc: float
    mean_hd95: float
    median_hd95: float


def agreement(
    manifest_a: Path, manifest_b: Path, out_dir: Path | None = None, seed: int = 0
) -> AgreementReport:
    """Object-level similarity between two annotation passes.

    Objects are paired per image by greedy IoU matching at 0.5; matched
    pairs are scored with DSC and HD95, unmatched objects listed.
    """
    recs_a = {r.image.name: r for r in mask_io.load_manifest(manifest_a)}
    recs_b = {r.image.name: r for r in mask_io.load_manifest(manifest_b)}
    if set(recs_a) != set(recs_b):
        raise ValidationError(
            "manifests reference different image sets: "
            f"{sorted(set(recs_a) ^ set(recs_b))}"
        )
    rows = []
    unmatched_a = []
    unmatched_b = []
    for name in sorted(recs_a):
        gt_a = mask_io.load_label_mask(recs_a[name].mask)
        gt_b = mask_io.load_label_mask(recs_b[name].mask)
        inst_a = extract_instances(gt_a)
        inst_b = extract_instances(gt_b)
        by_id_a = {m.object_id: m for m in inst_a}
        by_id_b = {m.object_id: m for m in inst_b}
        ious = pairwise_iou(inst_b, inst_a)
        match = match_at_threshold(inst_b, inst_a, AGREEMENT_MATCH_IOU, iou_matrix=ious)
        matched_a = set()
        matched_b = set()
        for b_id, a_id, pair_iou in match.matched_pairs:
            a, b = by_id_a[a_id], by_id_b[b_id]
            rows.append(
                AgreementRow(
                    image=name,
                    a_id=a_id,
                    b_id=b_id,
                    iou=pair_iou,
                    dsc=dsc(a, b),
                    hd95=hd95(a, b),
                )
            )
            matched_a.add(a_id)
            matched_b.add(b_id)
        unmatched_a.extend((name, m.object_id) for m in inst_a if m.object_id not in matched_a)
        unmatched_b.extend((name, m.object_id) for m in inst_b if m.object_id not in matched_b)
    dscs = [r.dsc for r in rows]
    hds = [r.hd95 for r in rows]
    report = AgreementReport(
        rows=tuple(rows),
        unmatched_a=tuple(unmatched_a),
        unmatched_b=tuple(unmatched_b),
        mean_dsc=float(np.mean(dscs)) if dscs else 0.0,
        median_dsc=float(np.median(dscs)) if dscs else 0.0,
        mean_hd95=float(np.mean(hds)) if hds else 0.0,
        median_hd95=float(np.median(hds)) if hds else 0.0,
    )
    if out_dir is not None:
        _write_agreement_reports(Path(out_dir), report, seed)
    return report


# --- report files -------------------------------------------------------------


def _write_interactive_reports(run: EvalRun, result: InteractiveResult) -> None:
    run.out_dir.mkdir(parents=True, exist_ok=True)
    for combo, dq in result.per_combo.items():
        write_quality_csv(dq, run.out_dir / f"quality__{combo}.csv", seed=run.seed)
    summary = {
        "seed": run.seed,
        "mode": "interactive",
        "preprocessing": run.preprocessing,
        "thresholds": list(run.thresholds),
        "combos": {
            combo: {
                "mean_quality": dq.mean_quality,
                "pooled_quality": dq.pooled_quality,
                "per_image": {
                    name: {
                        "quality": r.quality,
                        "n_pred": r.n_pred,
                        "n_gt": r.n_gt,
                        "overwrite_conflicts": result.conflicts.get((name, combo), 0),
                    }
                    for name, r in sorted(dq.per_image.items())
                },
            }
            for combo, dq in sorted(result.per_combo.items())
        },
    }
    with open(run.out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(run.out_dir / "plot_quality.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# seed={run.seed}\n")
        writer = csv.writer(fh)
        writer.writerow(["combo", "mean_quality", "pooled_quality"])
        for combo in run.combos:
            combo = format_combo(parse_combo(combo))
            dq = result.per_combo[combo]
            writer.writerow([combo, f"{dq.mean_quality:.6f}", f"{dq.pooled_quality:.6f}"])


def _write_automatic_reports(run: EvalRun, result: DatasetQuality, params: dict) -> None:
    run.out_dir.mkdir(parents=True, exist_ok=True)
    write_quality_csv(result, run.out_dir / "quality__automatic.csv", seed=run.seed)
    summary = {
        "seed": run.seed,
        "mode": "automatic",
        "preprocessing": run.preprocessing,
        "params": params,
        "thresholds": list(run.thresholds),
        "mean_quality": result.mean_quality,
        "pooled_quality": result.pooled_quality,
        "per_image": {
            name: {"quality": r.quality, "n_pred": r.n_pred, "n_gt": r.n_gt}
            for name, r in sorted(result.per_image.items())
        },
    }
    with open(run.out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_agreement_reports(out_dir: Path, report: AgreementReport, seed: int) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "agreement.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# seed={seed}\n")
        writer = csv.writer(fh)
        writer.writerow(["image", "a_id", "b_id", "iou", "dsc", "hd95"])
        for r in report.rows:
            writer.writerow(
                [r.image, r.a_id, r.b_id, f"{r.iou:.6f}", f"{r.dsc:.6f}", f"{r.hd95:.6f}"]
            )
    payload = {
        "seed": seed,
        "pairs": [
            {
                "image": r.image,
                "a_id": r.a_id,
                "b_id": r.b_id,
                "iou": r.iou,
                "dsc": r.dsc,
                "hd95": r.hd95,
            }
            for r in report.rows
        ],
        "unmatched_a": [{"image": i, "object_id": o} for i, o in report.unmatched_a],
        "unmatched_b": [{"image": i, "object_id": o} for i, o in report.unmatched_b],
        "summary": {
            "mean_dsc": report.mean_dsc,
            "median_dsc": report.median_dsc,
            "mean_hd95": report.mean_hd95,
            "median_hd95": report.median_hd95,
        },
    }
    with open(out_dir / "agreement.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
