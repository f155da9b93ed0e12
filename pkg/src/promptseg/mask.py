"""Instance label masks: loading, decomposition, components, RLE.

A label mask is a 2-D grid of non-negative integers where 0 is background
and every other value names one object instance. Instances are defined by
label value, not connectivity: a single object may be multi-part within a
slice. Connected-component splitting is applied only to binary model
outputs.

Coordinate convention used across the whole package: x = column,
y = row, origin at the top-left. Arrays are indexed ``[y, x]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

MAX_LABEL = 65535  # storage is 16-bit PNG


class MaskError(Exception):
    """Base class for mask I/O and format problems."""


class MultiChannelImageError(MaskError):
    """Mask file has more than one channel."""


class UnsupportedBitDepthError(MaskError):
    """Mask file is not 8- or 16-bit integer data."""


class RLEError(ValueError):
    """Malformed run-length encoding."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with inclusive pixel indices."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self) -> None:
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"degenerate box {self}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    def contains(self, other: "BoundingBox") -> bool:
        return (
            self.x_min <= other.x_min
            and self.y_min <= other.y_min
            and other.x_max <= self.x_max
            and other.y_max <= self.y_max
        )


@dataclass(frozen=True)
class LabelMask:
    """2-D grid of non-negative instance labels (0 = background)."""

    labels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.labels)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValueError("label grid must be 2-D and non-empty")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError("label grid must be integer-valued")
        if arr.min(initial=0) < 0:
            raise ValueError("labels must be non-negative")
        arr = np.ascontiguousarray(arr.astype(np.int32, copy=False))
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def instance_ids(self) -> list[int]:
        ids = np.unique(self.labels)
        return [int(i) for i in ids if i != 0]

    def binary(self) -> np.ndarray:
        """Foreground as a boolean grid."""
        return self.labels != 0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelMask):
            return NotImplemented
        return self.labels.shape == other.labels.shape and bool(
            np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True)
class InstanceMask:
    """One object's binary pixel set in its image frame."""

    object_id: int
    mask: np.ndarray  # bool, shape (height, width)

    def __post_init__(self) -> None:
        if self.object_id <= 0:
            raise ValueError("object_id must be positive")
        arr = np.ascontiguousarray(np.asarray(self.mask, dtype=bool))
        if arr.ndim != 2:
            raise ValueError("instance mask must be 2-D")
        if not arr.any():
            raise ValueError("instance mask must be non-empty")
        arr.setflags(write=False)
        object.__setattr__(self, "mask", arr)

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def area(self) -> int:
        return int(self.mask.sum())

    def pixels(self) -> set[tuple[int, int]]:
        ys, xs = np.nonzero(self.mask)
        return {(int(x), int(y)) for x, y in zip(xs, ys)}

    def contains_point(self, x: int, y: int) -> bool:
        if not (0 <= x < self.width and 0 <= y < self.height):
            return False
        return bool(self.mask[y, x])

    def bounding_box(self) -> BoundingBox:
        ys, xs = np.nonzero(self.mask)
        return BoundingBox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))

    def boundary(self) -> np.ndarray:
        """Boundary pixels: foreground with a 4-neighbour that is background
        or outside the frame (the image border counts as background)."""
        m = self.mask
        interior = np.zeros_like(m)
        interior[1:-1, 1:-1] = (
            m[1:-1, 1:-1]
            & m[:-2, 1:-1]
            & m[2:, 1:-1]
            & m[1:-1, :-2]
            & m[1:-1, 2:]
        )
        return m & ~interior


def load_label_mask(path: str | Path) -> LabelMask:
    """Read a label mask from an 8- or 16-bit single-channel PNG or TIFF."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mask file not found: {path}")
    with Image.open(path) as img:
        if len(img.getbands()) != 1:
            raise MultiChannelImageError(
                f"{path}: expected single-channel mask, got mode {img.mode!r}"
            )
        if img.mode not in ("L", "P", "I", "I;16", "I;16B", "I;16L"):
            raise UnsupportedBitDepthError(
                f"{path}: unsupported mode {img.mode!r}; need 8- or 16-bit integers"
            )
        arr = np.asarray(img, dtype=np.int64)
    if arr.max(initial=0) > MAX_LABEL:
        raise UnsupportedBitDepthError(f"{path}: label values exceed {MAX_LABEL}")
    return LabelMask(arr.astype(np.int32))


def save_label_mask(mask: LabelMask, path: str | Path) -> None:
    """Write a label mask as 16-bit grayscale PNG."""
    if int(mask.labels.max(initial=0)) > MAX_LABEL:
        raise ValueError(f"more than {MAX_LABEL} labels cannot be stored as 16-bit PNG")
    arr = mask.labels.astype(np.uint16)
    Image.fromarray(arr).save(Path(path), format="PNG")


def extract_instances(mask: LabelMask) -> list[InstanceMask]:
    """One InstanceMask per distinct non-zero label, ascending by label."""
    return [
        InstanceMask(object_id=i, mask=mask.labels == i) for i in mask.instance_ids()
    ]


def assemble_label_mask(
    instances: list[tuple[int, np.ndarray]], width: int, height: int
) -> tuple[LabelMask, int]:
    """Paint (label, binary mask) pairs into one LabelMask.

    Later entries overwrite earlier ones on pixel conflicts; the number of
    overwritten pixels is returned alongside the mask.
    """
    grid = np.zeros((height, width), dtype=np.int32)
    conflicts = 0
    for label, m in instances:
        m = np.asarray(m, dtype=bool)
        if m.shape != (height, width):
            raise ValueError("instance frame does not match target frame")
        conflicts += int((grid[m] != 0).sum())
        grid[m] = label
    return LabelMask(grid), conflicts


_STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCT_8 = np.ones((3, 3), dtype=bool)


def connected_components(binary: np.ndarray, connectivity: int = 8) -> LabelMask:
    """Label maximal connected foreground regions.

    Labels are assigned in raster-scan order of each component's first
    pixel, starting at 1.
    """
    binary = np.asarray(binary)
    if not np.isin(binary, (0, 1)).all():
        raise ValueError("binary grid must contain only 0 and 1")
    if connectivity == 4:
        structure = _STRUCT_4
    elif connectivity == 8:
        structure = _STRUCT_8
    else:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    raw, n = ndimage.label(binary.astype(bool), structure=structure)
    if n == 0:
        return LabelMask(np.zeros_like(raw, dtype=np.int32))
    # Renumber by first raster-order pixel so label order never depends on
    # scipy internals.
    flat = raw.ravel()
    first_seen = np.full(n + 1, flat.size, dtype=np.int64)
    nz = np.nonzero(flat)[0]
    # reversed so the earliest index wins the final write
    first_seen[flat[nz[::-1]]] = nz[::-1]
    order = np.argsort(first_seen[1:], kind="stable")
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[order + 1] = np.arange(1, n + 1, dtype=np.int32)
    return LabelMask(remap[raw])


def rle_encode(mask: np.ndarray | InstanceMask) -> str:
    """Row-major run-length encoding of a binary mask.

    Alternating run lengths starting with a background run (possibly 0),
    space-separated. Runs always sum to width*height.
    """
    if isinstance(mask, InstanceMask):
        mask = mask.mask
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        raise ValueError("cannot encode empty grid")
    change = np.nonzero(flat[1:] != flat[:-1])[0] + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [flat.size]))
    runs = (ends - starts).tolist()
    if flat[0]:  # encoding must open with a background run
        runs = [0, *runs]
    return " ".join(str(r) for r in runs)


def rle_decode(rle: str, width: int, height: int) -> np.ndarray:
    """Inverse of :func:`rle_encode`; returns a bool grid (height, width)."""
    tokens = rle.split()
    if not tokens:
        raise RLEError("empty RLE string")
    try:
        runs = [int(t) for t in tokens]
    except ValueError as exc:
        raise RLEError(f"non-numeric RLE token in {rle!r}") from exc
    if any(r < 0 for r in runs):
        raise RLEError("negative run length")
    if sum(runs) != width * height:
        raise RLEError(
            f"runs sum to {sum(runs)}, expected {width}x{height}={width * height}"
        )
    flat = np.zeros(width * height, dtype=bool)
    pos = 0
    value = False
    for r in runs:
        if value:
            flat[pos : pos + r] = True
        pos += r
        value = not value
    return flat.reshape(height, width)


@dataclass(frozen=True)
class DatasetRecord:
    """One manifest entry: an image, its ground-truth mask, and its split."""

    image: Path
    mask: Path
    split: str = field(default="eval")

    def __post_init__(self) -> None:
        if self.split not in ("search", "eval"):
            raise ValueError(f"split must be 'search' or 'eval', got {self.split!r}")


def load_manifest(path: str | Path) -> list[DatasetRecord]:
    """Read a dataset manifest (JSON list of {image, mask, split}).

    Relative paths are resolved against the manifest's directory.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ValueError(f"{path}: manifest must be a JSON list of records")
    base = path.parent
    records = []
    for entry in raw:
        records.append(
            DatasetRecord(
                image=(base / entry["image"]).resolve(),
                mask=(base / entry["mask"]).resolve(),
                split=entry.get("split", "eval"),
            )
        )
    return records


def save_manifest(records: list[DatasetRecord], path: str | Path) -> None:
    """Write a manifest with paths relative to its own directory."""
    path = Path(path)
    base = path.parent.resolve()
    payload = [
        {
            "image": _relativize(r.image, base),
            "mask": _relativize(r.mask, base),
            "split": r.split,
        }
        for r in records
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _relativize(p: Path, base: Path) -> str:
    try:
        return p.resolve().relative_to(base).as_posix()
    except ValueError:
        return str(p.resolve())
