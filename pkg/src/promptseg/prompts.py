"""Simulated user prompts derived from ground-truth instances.

Combo names follow the grammar ``[bbox][_p<k>][_n<m>]`` (canonical order
bbox, p, n): "bbox_p4_n8" is a bounding box, 4 foreground points, and
8 background points. Sampling is fully deterministic given the seed; the
per-object sub-seed is derive_seed(global_seed, image_id, object_id, combo)
so object order never matters. Caches serialize to canonical JSON and are
byte-identical across runs and platforms.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mask import BoundingBox, InstanceMask
from .rng import Xoshiro256StarStar, derive_seed

log = logging.getLogger(__name__)

CACHE_SCHEMA_VERSION = 1

_COMBO_PART = re.compile(r"^(bbox|p(\d+)|n(\d+))$")


class ComboError(ValueError):
    """Combo name does not match the prompt grammar."""


class PromptSamplingError(RuntimeError):
    """Requested prompts cannot be drawn from the available region."""


class PromptCacheError(RuntimeError):
    """Prompt cache file is invalid or inconsistent with the run."""


@dataclass(frozen=True)
class PromptSpec:
    """How many prompts of each kind to simulate per object."""

    n_foreground: int = 0
    n_background: int = 0
    use_box: bool = False

    def __post_init__(self) -> None:
        if self.n_foreground < 0 or self.n_background < 0:
            raise ValueError("prompt counts must be non-negative")
        if self.n_foreground == 0 and self.n_background == 0 and not self.use_box:
            raise ValueError("prompt spec must request at least one prompt kind")


def parse_combo(name: str) -> PromptSpec:
    """Parse a combo name like "bbox_p4_n8" into a PromptSpec."""
    parts = name.split("_") if name else []
    if not parts or any(p == "" for p in parts):
        raise ComboError(f"empty combo name {name!r}")
    use_box = False
    n_fg: int | None = None
    n_bg: int | None = None
    for part in parts:
        m = _COMBO_PART.match(part)
        if m is None:
            raise ComboError(f"malformed combo part {part!r} in {name!r}")
        if part == "bbox":
            if use_box:
                raise ComboError(f"duplicate 'bbox' in {name!r}")
            use_box = True
        elif m.group(2) is not None:
            if n_fg is not None:
                raise ComboError(f"duplicate 'p' count in {name!r}")
            n_fg = int(m.group(2))
        else:
            if n_bg is not None:
                raise ComboError(f"duplicate 'n' count in {name!r}")
            n_bg = int(m.group(3))
    try:
        return PromptSpec(
            n_foreground=n_fg or 0, n_background=n_bg or 0, use_box=use_box
        )
    except ValueError as exc:
        raise ComboError(str(exc)) from exc


def format_combo(spec: PromptSpec) -> str:
    """Canonical combo name: bbox first, then p<k>, then n<m>."""
    parts = []
    if spec.use_box:
        parts.append("bbox")
    if spec.n_foreground > 0:
        parts.append(f"p{spec.n_foreground}")
    if spec.n_background > 0:
        parts.append(f"n{spec.n_background}")
    return "_".join(parts)


@dataclass(frozen=True)
class PromptSet:
    """Simulated prompts for one object; the unit stored in cache files."""

    object_id: int
    foreground_points: tuple[tuple[int, int], ...]
    background_points: tuple[tuple[int, int], ...]
    box: BoundingBox | None
    seed: int
    combo: str


def dilated_box(box: BoundingBox, width: int, height: int) -> BoundingBox:
    """Box grown by 25% of its own extent per side, clamped to the frame."""
    dx = (box.width + 3) // 4  # ceil(25%), so even 1-px boxes grow
    dy = (box.height + 3) // 4
    return BoundingBox(
        max(box.x_min - dx, 0),
        max(box.y_min - dy, 0),
        min(box.x_max + dx, width - 1),
        min(box.y_max + dy, height - 1),
    )


def _sample_from_region(
    region: np.ndarray, k: int, rng: Xoshiro256StarStar
) -> list[tuple[int, int]]:
    """k points without replacement from a boolean region, raster-ordered
    candidates, returned in draw order."""
    ys, xs = np.nonzero(region)
    idx = rng.sample_indices(len(xs), k)
    return [(int(xs[i]), int(ys[i])) for i in idx]


def sample_prompt_set(
    instance: InstanceMask, spec: PromptSpec, seed: int
) -> PromptSet:
    """Draw one PromptSet for an instance; identical inputs yield identical
    outputs.

    Foreground points are uniform without replacement over the instance's
    pixels. Background points are uniform over the 25%-dilated bounding box
    minus the instance (pixels of neighbouring objects are legitimate
    negatives for this object). The box is the tight bounding box.
    """
    rng = Xoshiro256StarStar(seed)
    box = instance.bounding_box()
    n_fg = spec.n_foreground
    if n_fg > instance.area:
        log.warning(
            "object %d: clamping %d foreground points to area %d",
            instance.object_id,
            n_fg,
            instance.area,
        )
        n_fg = instance.area
    fg = _sample_from_region(instance.mask, n_fg, rng)

    bg: list[tuple[int, int]] = []
    if spec.n_background > 0:
        region = np.zeros_like(instance.mask)
        d = dilated_box(box, instance.width, instance.height)
        region[d.y_min : d.y_max + 1, d.x_min : d.x_max + 1] = True
        region &= ~instance.mask
        available = int(region.sum())
        if available == 0:
            raise PromptSamplingError(
                f"object {instance.object_id}: no background pixels in dilated box"
            )
        n_bg = spec.n_background
        if n_bg > available:
            log.warning(
                "object %d: clamping %d background points to %d available",
                instance.object_id,
                n_bg,
                available,
            )
            n_bg = available
        bg = _sample_from_region(region, n_bg, rng)

    return PromptSet(
        object_id=instance.object_id,
        foreground_points=tuple(fg),
        background_points=tuple(bg),
        box=box if spec.use_box else None,
        seed=seed,
        combo=format_combo(spec),
    )


def prompt_seed(global_seed: int, image_id: str, object_id: int, combo: str) -> int:
    """Per-object sub-seed; independent of iteration order."""
    return derive_seed(global_seed, image_id, object_id, combo)


def next_iterative_prompts(
    pred: InstanceMask | None, gt: InstanceMask, seed: int
) -> tuple[tuple[int, int] | None, tuple[int, int] | None]:
    """One corrective prompt pair from the current error regions.

    The foreground candidate region is gt minus pred (false negatives), the
    background candidate region pred minus gt (false positives); a point is
    drawn uniformly from each non-empty region.
    """
    rng = Xoshiro256StarStar(seed)
    pred_mask = (
        np.zeros_like(gt.mask) if pred is None else np.asarray(pred.mask, dtype=bool)
    )
    if pred_mask.shape != gt.mask.shape:
        raise ValueError("frame mismatch")
    fn_region = gt.mask & ~pred_mask
    fp_region = pred_mask & ~gt.mask
    fg = _sample_from_region(fn_region, 1, rng)[0] if fn_region.any() else None
    bg = _sample_from_region(fp_region, 1, rng)[0] if fp_region.any() else None
    return fg, bg


def _prompt_set_to_dict(ps: PromptSet) -> dict:
    return {
        "object_id": ps.object_id,
        "foreground": [[x, y] for x, y in ps.foreground_points],
        "background": [[x, y] for x, y in ps.background_points],
        "box": None
        if ps.box is None
        else [ps.box.x_min, ps.box.y_min, ps.box.x_max, ps.box.y_max],
        "seed": ps.seed,
        "combo": ps.combo,
    }


def _prompt_set_from_dict(d: dict) -> PromptSet:
    box = d.get("box")
    return PromptSet(
        object_id=int(d["object_id"]),
        foreground_points=tuple((int(x), int(y)) for x, y in d["foreground"]),
        background_points=tuple((int(x), int(y)) for x, y in d["background"]),
        box=None if box is None else BoundingBox(*[int(v) for v in box]),
        seed=int(d["seed"]),
        combo=str(d["combo"]),
    )


def save_prompt_cache(
    sets: list[PromptSet],
    path: str | Path,
    *,
    global_seed: int,
    image_id: str = "",
    width: int = 0,
    height: int = 0,
) -> None:
    """Write prompt sets as canonical JSON (sorted keys, no whitespace
    variance), so equal inputs produce byte-identical files."""
    payload = {
        "schema_version": CACHE_SCHEMA_VERSION,
        "global_seed": global_seed,
        "image": image_id,
        "width": width,
        "height": height,
        "prompt_sets": [_prompt_set_to_dict(ps) for ps in sets],
    }
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_prompt_cache(
    path: str | Path, *, expected_seed: int | None = None
) -> list[PromptSet]:
    """Read a prompt cache, validating schema version, seed, and frame."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PromptCacheError(f"{path}: not valid JSON") from exc
    version = payload.get("schema_version")
    if version != CACHE_SCHEMA_VERSION:
        raise PromptCacheError(
            f"{path}: schema version {version!r}, expected {CACHE_SCHEMA_VERSION}"
        )
    if expected_seed is not None and payload.get("global_seed") != expected_seed:
        raise PromptCacheError(
            f"{path}: cache seed {payload.get('global_seed')} does not match "
            f"run seed {expected_seed}"
        )
    width = int(payload.get("width", 0))
    height = int(payload.get("height", 0))
    sets = [_prompt_set_from_dict(d) for d in payload["prompt_sets"]]
    if width > 0 and height > 0:
        for ps in sets:
            points = list(ps.foreground_points) + list(ps.background_points)
            if ps.box is not None:
                points += [(ps.box.x_min, ps.box.y_min), (ps.box.x_max, ps.box.y_max)]
            for x, y in points:
                if not (0 <= x < width and 0 <= y < height):
                    raise PromptCacheError(
                        f"{path}: coordinate ({x},{y}) outside {width}x{height} frame"
                    )
    return sets
