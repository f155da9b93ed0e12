"""Pixel-set geometry: convex hulls, concavity, and distance maps.

Hulls are taken over the union of unit pixel squares, i.e. over the four
corner points of every pixel, so a filled axis-aligned rectangle is exactly
convex and hull area is commensurate with pixel-count area. All hull
arithmetic is integer, so there are no orientation hazards.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .mask import InstanceMask


@dataclass(frozen=True)
class Polygon:
    """Simple polygon, vertices counterclockwise (positive shoelace)."""

    vertices: tuple[tuple[float, float], ...]


def _cross(o: tuple[int, int], a: tuple[int, int], b: tuple[int, int]) -> int:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(instance: InstanceMask) -> Polygon:
    """Convex hull of the instance's union of unit pixel squares.

    Monotone chain over the corner points of boundary pixels; collinear
    vertices are dropped. Output starts at the lexicographically smallest
    vertex and proceeds counterclockwise.
    """
    ys, xs = np.nonzero(instance.boundary())
    corners = set()
    for x, y in zip(xs.tolist(), ys.tolist()):
        corners.add((x, y))
        corners.add((x + 1, y))
        corners.add((x, y + 1))
        corners.add((x + 1, y + 1))
    pts = sorted(corners)
    if len(pts) == 4:  # single pixel: already its own hull
        (x0, y0) = pts[0]
        return Polygon(((x0, y0), (x0 + 1, y0), (x0 + 1, y0 + 1), (x0, y0 + 1)))
    lower: list[tuple[int, int]] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[tuple[int, int]] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    return Polygon(tuple((float(x), float(y)) for x, y in hull))


def polygon_area(polygon: Polygon) -> float:
    """Shoelace area of a simple polygon (positive for CCW vertex order)."""
    verts = polygon.vertices
    if len(verts) < 3:
        raise ValueError("polygon needs at least 3 vertices")
    s = 0.0
    for (x0, y0), (x1, y1) in zip(verts, verts[1:] + verts[:1]):
        s += x0 * y1 - x1 * y0
    return abs(s) / 2.0


def concavity(instance: InstanceMask) -> float:
    """1 - mask area / mask convex hull area; 0 for convex pixel sets."""
    hull_area = polygon_area(convex_hull(instance))
    return 1.0 - instance.area / hull_area


@dataclass(frozen=True)
class ConcavityHistogram:
    """Distribution of concavity values over a set of instances."""

    bin_width: float
    threshold: float
    counts: tuple[int, ...]
    percentages: tuple[float, ...]
    fraction_over_threshold: float

    def bin_edges(self) -> list[tuple[float, float]]:
        return [
            (k * self.bin_width, (k + 1) * self.bin_width)
            for k in range(len(self.counts))
        ]

    def to_json(self) -> str:
        return json.dumps(
            {
                "bin_width": self.bin_width,
                "threshold": self.threshold,
                "bins": [
                    {
                        "bin_start": lo,
                        "bin_end": hi,
                        "count": c,
                        "percentage": p,
                    }
                    for (lo, hi), c, p in zip(
                        self.bin_edges(), self.counts, self.percentages
                    )
                ],
                "fraction_over_threshold": self.fraction_over_threshold,
            },
            indent=2,
            sort_keys=True,
        )

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_start", "bin_end", "count", "percentage"])
            for (lo, hi), c, p in zip(self.bin_edges(), self.counts, self.percentages):
                writer.writerow([f"{lo:.6g}", f"{hi:.6g}", c, f"{p:.6f}"])


def concavity_histogram(
    instances: list[InstanceMask], bin_width: float = 0.05, threshold: float = 0.2
) -> ConcavityHistogram:
    """Histogram of concavities with bins [k*bin_width, (k+1)*bin_width)."""
    if not instances:
        raise ValueError("concavity histogram needs at least one instance")
    if not 0.0 < bin_width <= 1.0:
        raise ValueError("bin_width must be in (0, 1]")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    values = [concavity(m) for m in instances]
    n_bins = int(np.ceil(1.0 / bin_width))
    counts = [0] * n_bins
    for v in values:
        counts[min(int(v / bin_width), n_bins - 1)] += 1
    total = len(values)
    percentages = tuple(100.0 * c / total for c in counts)
    over = sum(1 for v in values if v > threshold)
    return ConcavityHistogram(
        bin_width=bin_width,
        threshold=threshold,
        counts=tuple(counts),
        percentages=percentages,
        fraction_over_threshold=over / total,
    )


def distance_map(instance: InstanceMask) -> np.ndarray:
    """Exact Euclidean distance from every pixel center to the nearest
    boundary-pixel center of the instance, over the whole frame."""
    boundary = instance.boundary()
    return ndimage.distance_transform_edt(~boundary)
