"""Deterministic synthetic datasets for model-free harness runs.

Real slices and their annotations are private; these fixtures substitute.
Each image carries non-overlapping shape instances on a noisy background:
rectangles (convex, concavity exactly 0), notched L-shapes (mild
concavity), and bent thin ribbons whose concavity typically exceeds 0.2,
mimicking branched dendritic profiles. The first ``n_search`` images go to
the "search" split, the rest to "eval".
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mask import DatasetRecord, LabelMask, save_label_mask, save_manifest
from .preprocess import save_image
from .rng import derive_seed


class FixtureError(RuntimeError):
    """Fixture spec cannot be realized (objects do not fit)."""


@dataclass(frozen=True)
class FixtureSpec:
    n_images: int = 5
    n_search: int = 2
    width: int = 256
    height: int = 256
    rectangles: int = 3
    l_shapes: int = 2
    ribbons: int = 3
    min_size: int = 8
    max_size: int = 24
    margin: int = 2  # clearance between objects and to the border
    max_retries: int = 500

    def __post_init__(self) -> None:
        if self.n_images < 1 or self.n_search < 0 or self.n_search > self.n_images:
            raise ValueError("bad image/split counts")
        if self.min_size < 4 or self.max_size < self.min_size:
            raise ValueError("bad size range")


def _rectangle(rng: np.random.Generator, spec: FixtureSpec) -> np.ndarray:
    w = int(rng.integers(spec.min_size, spec.max_size + 1))
    h = int(rng.integers(spec.min_size, spec.max_size + 1))
    return np.ones((h, w), dtype=bool)


def _l_shape(rng: np.random.Generator, spec: FixtureSpec) -> np.ndarray:
    w = int(rng.integers(max(spec.min_size, 8), spec.max_size + 1))
    h = int(rng.integers(max(spec.min_size, 8), spec.max_size + 1))
    stamp = np.ones((h, w), dtype=bool)
    nw, nh = w // 2, h // 2
    corner = int(rng.integers(0, 4))
    if corner == 0:
        stamp[:nh, :nw] = False
    elif corner == 1:
        stamp[:nh, w - nw :] = False
    elif corner == 2:
        stamp[h - nh :, :nw] = False
    else:
        stamp[h - nh :, w - nw :] = False
    return stamp


def _ribbon(rng: np.random.Generator, spec: FixtureSpec) -> np.ndarray:
    """Thick polyline with perpendicular bends; high hull-to-area ratio."""
    thickness = int(rng.integers(2, 4))
    n_segments = int(rng.integers(2, 4))
    size = 64
    grid = np.zeros((size, size), dtype=bool)
    x, y = size // 2, size // 2
    horizontal = bool(rng.integers(0, 2))
    for _ in range(n_segments):
        length = int(rng.integers(12, 21))
        sign = 1 if rng.integers(0, 2) else -1
        dx, dy = (sign, 0) if horizontal else (0, sign)
        for _ in range(length):
            nx, ny = x + dx, y + dy
            if not (0 <= nx < size - thickness and 0 <= ny < size - thickness):
                break
            x, y = nx, ny
            grid[y : y + thickness, x : x + thickness] = True
        horizontal = not horizontal
    ys, xs = np.nonzero(grid)
    return grid[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]


def _place(
    occupied: np.ndarray,
    stamp: np.ndarray,
    rng: np.random.Generator,
    spec: FixtureSpec,
) -> tuple[int, int]:
    """Random non-overlapping position with margin clearance."""
    h, w = stamp.shape
    height, width = occupied.shape
    m = spec.margin
    if w + 2 * m >= width or h + 2 * m >= height:
        raise FixtureError(f"stamp {w}x{h} does not fit in {width}x{height}")
    for _ in range(spec.max_retries):
        x0 = int(rng.integers(m, width - w - m))
        y0 = int(rng.integers(m, height - h - m))
        window = occupied[y0 - m : y0 + h + m, x0 - m : x0 + w + m]
        if not window.any():
            return x0, y0
    raise FixtureError("could not place object without overlap; loosen the spec")


def make_label_mask(seed: int, image_index: int, spec: FixtureSpec) -> LabelMask:
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "fixture", image_index)))
    labels = np.zeros((spec.height, spec.width), dtype=np.int32)
    occupied = np.zeros_like(labels, dtype=bool)
    makers = (
        [(_rectangle, spec.rectangles), (_l_shape, spec.l_shapes), (_ribbon, spec.ribbons)]
    )
    label = 0
    for maker, count in makers:
        for _ in range(count):
            stamp = maker(rng, spec)
            x0, y0 = _place(occupied, stamp, rng, spec)
            label += 1
            region = labels[y0 : y0 + stamp.shape[0], x0 : x0 + stamp.shape[1]]
            region[stamp] = label
            occupied[y0 : y0 + stamp.shape[0], x0 : x0 + stamp.shape[1]] |= stamp
    return LabelMask(labels)


def render_image(mask: LabelMask, seed: int, image_index: int) -> np.ndarray:
    """Grayscale rendering: dim noisy background, brighter noisy objects."""
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "render", image_index)))
    height, width = mask.labels.shape
    img = rng.integers(30, 70, size=(height, width), dtype=np.int64)
    for obj_id in mask.instance_ids():
        base = 120 + (obj_id * 37) % 100
        region = mask.labels == obj_id
        img[region] = base + rng.integers(-10, 10, size=int(region.sum()))
    return np.clip(img, 0, 255).astype(np.uint8)


def synth_fixtures(
    seed: int, spec: FixtureSpec, out_dir: str | Path
) -> Path:
    """Write images, masks, and a manifest; returns the manifest path.

    Running twice with the same seed and spec produces byte-identical
    files.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(spec.n_images):
        mask = make_label_mask(seed, i, spec)
        image = render_image(mask, seed, i)
        image_path = out / "images" / f"img_{i:03d}.png"
        mask_path = out / "masks" / f"img_{i:03d}_mask.png"
        save_image(image, image_path)
        save_label_mask(mask, mask_path)
        records.append(
            DatasetRecord(
                image=image_path.resolve(),
                mask=mask_path.resolve(),
                split="search" if i < spec.n_search else "eval",
            )
        )
    manifest_path = out / "manifest.json"
    save_manifest(records, manifest_path)
    return manifest_path
