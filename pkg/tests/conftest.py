import numpy as np
import pytest

from promptseg.mask import InstanceMask, LabelMask


def grid_from_rows(rows: list[str]) -> np.ndarray:
    """ASCII art to bool grid: '#' foreground, anything else background."""
    return np.array([[c == "#" for c in row] for row in rows], dtype=bool)


def instance_from_rows(rows: list[str], object_id: int = 1) -> InstanceMask:
    return InstanceMask(object_id=object_id, mask=grid_from_rows(rows))


def rect_instance(
    x0: int, y0: int, w: int, h: int, frame: tuple[int, int], object_id: int = 1
) -> InstanceMask:
    """Filled rectangle instance in a (width, height) frame."""
    fw, fh = frame
    m = np.zeros((fh, fw), dtype=bool)
    m[y0 : y0 + h, x0 : x0 + w] = True
    return InstanceMask(object_id=object_id, mask=m)


def random_label_mask(
    rng: np.random.Generator, width: int, height: int, max_objects: int = 6
) -> LabelMask:
    """Random disjoint rectangles with occasional random-blob labels."""
    labels = np.zeros((height, width), dtype=np.int32)
    n = int(rng.integers(0, max_objects + 1))
    placed = 0
    for _ in range(n * 4):
        if placed == n:
            break
        w = int(rng.integers(2, max(3, width // 3)))
        h = int(rng.integers(2, max(3, height // 3)))
        if w >= width or h >= height:
            continue
        x0 = int(rng.integers(0, width - w))
        y0 = int(rng.integers(0, height - h))
        region = labels[y0 : y0 + h, x0 : x0 + w]
        if (region != 0).any():
            continue
        placed += 1
        region[:] = placed
    return LabelMask(labels)


def random_binary(rng: np.random.Generator, width: int, height: int, p: float = 0.4) -> np.ndarray:
    return rng.random((height, width)) < p


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240811)
