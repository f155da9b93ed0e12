"""Fitting large slices to a fixed model input size.

Two strategies: sliding-window tiling (default window 1024, step 512) with
prediction stitching back to the source frame, and whole-image resizing
with coordinate mapping. Intensity images are resized bilinearly; label
masks always nearest-neighbour, so resizing never blends labels.

Edge tiles clamp to stay in-frame rather than padding, so no image content
is fabricated at borders.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .mask import BoundingBox, InstanceMask, LabelMask, assemble_label_mask

DEFAULT_WINDOW = 1024
DEFAULT_STEP = 512
DEFAULT_TARGET = 1024

STITCH_MERGE_IOU = 0.5


@dataclass(frozen=True)
class Tile:
    """One window into the source image; coordinates in the source frame."""

    x0: int
    y0: int
    width: int
    height: int

    def box(self) -> BoundingBox:
        return BoundingBox(self.x0, self.y0, self.x0 + self.width - 1, self.y0 + self.height - 1)


@dataclass(frozen=True)
class TileGrid:
    window: int
    step: int
    source_width: int
    source_height: int
    tiles: tuple[Tile, ...]


def _axis_origins(dim: int, window: int, step: int) -> list[int]:
    if window >= dim:
        return [0]
    last = dim - window
    origins = []
    pos = 0
    while pos < last:
        origins.append(pos)
        pos += step
    origins.append(last)
    return origins


def tile_grid(
    width: int,
    height: int,
    window: int = DEFAULT_WINDOW,
    step: int = DEFAULT_STEP,
) -> TileGrid:
    """Row-major sliding-window grid covering every source pixel.

    Origins advance by `step`; the final origin per axis clamps to
    dim - window. Windows larger than the image clamp to a single
    full-image tile on that axis.
    """
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    if step < 1 or window < step:
        raise ValueError("need window >= step >= 1")
    xs = _axis_origins(width, window, step)
    ys = _axis_origins(height, window, step)
    tw = min(window, width)
    th = min(window, height)
    tiles = tuple(Tile(x, y, tw, th) for y in ys for x in xs)
    return TileGrid(
        window=window, step=step, source_width=width, source_height=height, tiles=tiles
    )


@dataclass(frozen=True)
class ResizePlan:
    """Whole-image resize between a source frame and the model frame."""

    source_width: int
    source_height: int
    target_width: int = DEFAULT_TARGET
    target_height: int = DEFAULT_TARGET

    @property
    def scale_x(self) -> float:
        return self.target_width / self.source_width

    @property
    def scale_y(self) -> float:
        return self.target_height / self.source_height


def map_point(
    plan: ResizePlan, point: tuple[int, int], direction: str = "forward"
) -> tuple[int, int]:
    """Map a pixel between source and target frames (floor + clamp)."""
    x, y = point
    if direction == "forward":
        sw, sh = plan.source_width, plan.source_height
        tw, th = plan.target_width, plan.target_height
    elif direction == "inverse":
        sw, sh = plan.target_width, plan.target_height
        tw, th = plan.source_width, plan.source_height
    else:
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    if not (0 <= x < sw and 0 <= y < sh):
        raise ValueError(f"point ({x},{y}) outside {sw}x{sh} frame")
    mx = min(x * tw // sw, tw - 1)
    my = min(y * th // sh, th - 1)
    return int(mx), int(my)


def map_box(plan: ResizePlan, box: BoundingBox, direction: str = "forward") -> BoundingBox:
    """Map both corners, then re-normalize min/max."""
    x0, y0 = map_point(plan, (box.x_min, box.y_min), direction)
    x1, y1 = map_point(plan, (box.x_max, box.y_max), direction)
    return BoundingBox(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))


def _resample_nearest(grid: np.ndarray, out_width: int, out_height: int) -> np.ndarray:
    in_h, in_w = grid.shape[:2]
    ys = np.arange(out_height) * in_h // out_height
    xs = np.arange(out_width) * in_w // out_width
    return grid[np.ix_(ys, xs)]


def resize_mask(plan: ResizePlan, mask: LabelMask) -> LabelMask:
    """Source-frame labels resampled into the model frame (nearest)."""
    if (mask.height, mask.width) != (plan.source_height, plan.source_width):
        raise ValueError("mask does not match plan source dims")
    return LabelMask(_resample_nearest(mask.labels, plan.target_width, plan.target_height))


def upscale_mask(plan: ResizePlan, mask: LabelMask) -> LabelMask:
    """Model-frame labels resampled back to the source frame (nearest).

    Never introduces labels absent from the input.
    """
    if (mask.height, mask.width) != (plan.target_height, plan.target_width):
        raise ValueError("mask does not match plan target dims")
    return LabelMask(_resample_nearest(mask.labels, plan.source_width, plan.source_height))


def upscale_binary(plan: ResizePlan, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (plan.target_height, plan.target_width):
        raise ValueError("mask does not match plan target dims")
    return _resample_nearest(mask, plan.source_width, plan.source_height)


def resize_image(plan: ResizePlan, image: np.ndarray) -> np.ndarray:
    """Bilinear resize for intensity images."""
    if image.shape[:2] != (plan.source_height, plan.source_width):
        raise ValueError("image does not match plan source dims")
    pil = Image.fromarray(image)
    out = pil.resize((plan.target_width, plan.target_height), Image.BILINEAR)
    return np.asarray(out)


def crop_tile(grid_array: np.ndarray, tile: Tile) -> np.ndarray:
    return grid_array[tile.y0 : tile.y0 + tile.height, tile.x0 : tile.x0 + tile.width]


def stitch_instances(
    per_tile: list[tuple[Tile, list[InstanceMask]]],
    source_width: int,
    source_height: int,
) -> LabelMask:
    """Merge per-tile instance predictions back into one source-frame map.

    Instances are translated to source coordinates; instances from
    different tiles whose pairwise IoU >= 0.5 are merged (pixel union,
    transitively). Merged instances are relabeled 1..n in raster order of
    their first pixel. Overlapping but unmerged instances are painted in
    that order, later labels overwriting earlier pixels.
    """
    full_masks: list[np.ndarray] = []
    tile_of: list[int] = []
    for t_idx, (tile, instances) in enumerate(per_tile):
        if (
            tile.x0 < 0
            or tile.y0 < 0
            or tile.x0 + tile.width > source_width
            or tile.y0 + tile.height > source_height
        ):
            raise ValueError(f"tile {tile} outside {source_width}x{source_height} frame")
        for inst in instances:
            if inst.mask.shape != (tile.height, tile.width):
                raise ValueError("instance does not fit its tile frame")
            full = np.zeros((source_height, source_width), dtype=bool)
            full[tile.y0 : tile.y0 + tile.height, tile.x0 : tile.x0 + tile.width] = (
                inst.mask
            )
            full_masks.append(full)
            tile_of.append(t_idx)

    n = len(full_masks)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i: int, j: int) -> None:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[rj] = ri

    areas = [int(m.sum()) for m in full_masks]
    for i in range(n):
        for j in range(i + 1, n):
            if tile_of[i] == tile_of[j]:
                continue
            inter = int((full_masks[i] & full_masks[j]).sum())
            if inter == 0:
                continue
            if inter / (areas[i] + areas[j] - inter) >= STITCH_MERGE_IOU:
                union(i, j)

    groups: dict[int, np.ndarray] = {}
    for i in range(n):
        root = find(i)
        if root in groups:
            groups[root] = groups[root] | full_masks[i]
        else:
            groups[root] = full_masks[i].copy()

    # raster order of first pixel decides final labels
    def first_pixel(m: np.ndarray) -> int:
        return int(np.flatnonzero(m.ravel())[0])

    ordered = sorted(groups.values(), key=first_pixel)
    labeled = [(k + 1, m) for k, m in enumerate(ordered)]
    mask, _ = assemble_label_mask(labeled, source_width, source_height)
    return mask


# --- model-frame materialization -------------------------------------------
#
# Adapters receive images by path, so tile crops / resized images are written
# to disk along with a frames manifest describing how each model-frame image
# maps back to its source. GT-backed adapters use the manifest to reproject
# ground truth; real model adapters just read the image files.


@dataclass(frozen=True)
class Frame:
    """One model-frame image derived from a source image."""

    image: Path  # model-frame image written to disk
    source_image: Path
    source_mask: Path | None
    width: int
    height: int
    transform: dict  # {"kind": "tile", x0, y0} | {"kind": "resize", ...}

    def tile(self) -> Tile | None:
        if self.transform["kind"] != "tile":
            return None
        return Tile(
            x0=self.transform["x0"],
            y0=self.transform["y0"],
            width=self.width,
            height=self.height,
        )

    def resize_plan(self) -> ResizePlan | None:
        if self.transform["kind"] != "resize":
            return None
        return ResizePlan(
            source_width=self.transform["source_width"],
            source_height=self.transform["source_height"],
            target_width=self.width,
            target_height=self.height,
        )


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img)


def save_image(array: np.ndarray, path: str | Path) -> None:
    Image.fromarray(array).save(Path(path), format="PNG")


def build_frames(
    image_path: Path,
    mask_path: Path | None,
    out_dir: Path,
    mode: str,
    window: int = DEFAULT_WINDOW,
    step: int = DEFAULT_STEP,
    target_size: int = DEFAULT_TARGET,
) -> list[Frame]:
    """Write model-frame images for one source image; returns their frames."""
    image = load_image(image_path)
    height, width = image.shape[:2]
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = image_path.stem
    frames: list[Frame] = []
    if mode == "tile":
        grid = tile_grid(width, height, window=window, step=step)
        for k, tile in enumerate(grid.tiles):
            tile_path = out_dir / f"{stem}__tile{k:03d}.png"
            save_image(crop_tile(image, tile), tile_path)
            frames.append(
                Frame(
                    image=tile_path,
                    source_image=image_path,
                    source_mask=mask_path,
                    width=tile.width,
                    height=tile.height,
                    transform={"kind": "tile", "x0": tile.x0, "y0": tile.y0},
                )
            )
    elif mode == "resize":
        plan = ResizePlan(width, height, target_size, target_size)
        resized_path = out_dir / f"{stem}__resized.png"
        save_image(resize_image(plan, image), resized_path)
        frames.append(
            Frame(
                image=resized_path,
                source_image=image_path,
                source_mask=mask_path,
                width=target_size,
                height=target_size,
                transform={
                    "kind": "resize",
                    "source_width": width,
                    "source_height": height,
                },
            )
        )
    else:
        raise ValueError(f"mode must be 'tile' or 'resize', got {mode!r}")
    return frames


def save_frames_manifest(frames: list[Frame], path: str | Path) -> None:
    payload = {
        "schema_version": 1,
        "frames": [
            {
                "image": str(f.image),
                "source_image": str(f.source_image),
                "source_mask": None if f.source_mask is None else str(f.source_mask),
                "width": f.width,
                "height": f.height,
                "transform": f.transform,
            }
            for f in frames
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_frames_manifest(path: str | Path) -> list[Frame]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("schema_version") != 1:
        raise ValueError(f"{path}: unsupported frames manifest version")
    return [
        Frame(
            image=Path(d["image"]),
            source_image=Path(d["source_image"]),
            source_mask=None if d["source_mask"] is None else Path(d["source_mask"]),
            width=int(d["width"]),
            height=int(d["height"]),
            transform=d["transform"],
        )
        for d in payload["frames"]
    ]


def project_instance_to_frame(
    instance: InstanceMask, frame: Frame
) -> tuple[np.ndarray, bool]:
    """Instance pixels expressed in a model frame.

    Returns (binary mask in frame coords, fully_visible). For tiles,
    fully_visible means no foreground pixel falls outside the tile; for
    resize frames it is always True.
    """
    tile = frame.tile()
    if tile is not None:
        cropped = crop_tile(instance.mask, tile)
        visible = int(cropped.sum())
        return cropped.copy(), visible == instance.area
    plan = frame.resize_plan()
    assert plan is not None
    resized = _resample_nearest(instance.mask, plan.target_width, plan.target_height)
    return resized, True


def instance_to_source_frame(
    binary: np.ndarray, frame: Frame, source_width: int, source_height: int
) -> np.ndarray:
    """Map a model-frame binary mask back to source coordinates."""
    tile = frame.tile()
    if tile is not None:
        full = np.zeros((source_height, source_width), dtype=bool)
        full[tile.y0 : tile.y0 + tile.height, tile.x0 : tile.x0 + tile.width] = binary
        return full
    plan = frame.resize_plan()
    assert plan is not None
    return upscale_binary(plan, binary)
