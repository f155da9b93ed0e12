"""Prediction backends: the deterministic stub and the real SAM wrapper.

The stub exists so protocol conformance can run in CI with no weights, no
torch, and no image files: its masks are pure geometry derived from the
request. The SAM backend loads everything lazily so importing this module
stays cheap.
"""

from __future__ import annotations

import numpy as np

from .config import AdapterConfig
from .protocol import Request

STUB_BOX_SCORE = 0.9
STUB_POINT_SCORE = 0.5
STUB_AUTO_SCORE = 0.8
STUB_POINT_RADIUS = 6


class StubPredictor:
    """Geometry-only stand-in used by dry-run mode."""

    def __init__(self, config: AdapterConfig):
        self.config = config

    def interactive(self, request: Request) -> list[tuple[np.ndarray, float]]:
        h, w = request.height, request.width
        if request.box is not None:
            x0, y0, x1, y1 = request.box
            mask = np.zeros((h, w), dtype=bool)
            mask[max(y0, 0) : min(y1, h - 1) + 1, max(x0, 0) : min(x1, w - 1) + 1] = True
            return [(mask, STUB_BOX_SCORE)]
        if request.foreground:
            cx, cy = request.foreground[0]
            ys, xs = np.mgrid[0:h, 0:w]
            mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= STUB_POINT_RADIUS**2
            return [(mask, STUB_POINT_SCORE)]
        return []

    def automatic(self, request: Request) -> list[tuple[np.ndarray, float]]:
        h, w = request.height, request.width
        radius = max(min(h, w) // 4, 1)
        ys, xs = np.mgrid[0:h, 0:w]
        mask = (xs - w // 2) ** 2 + (ys - h // 2) ** 2 <= radius**2
        min_area = int(request.params.get("min_mask_area", self.config.automatic.min_mask_area))
        if int(mask.sum()) < min_area:
            return []
        return [(mask, STUB_AUTO_SCORE)]


class CheckpointLoadError(RuntimeError):
    """Weights missing or incompatible; the process should exit nonzero."""


class SamPredictorBackend:
    """Prompt-conditioned and automatic inference over a SAM checkpoint."""

    def __init__(self, config: AdapterConfig):
        if config.checkpoint is None:
            raise CheckpointLoadError("config has no checkpoint path")
        try:
            import torch  # noqa: F401
            from segment_anything import SamPredictor, sam_model_registry
        except ImportError as exc:
            raise CheckpointLoadError(
                f"SAM runtime not installed (pip install 'sam-adapter[sam]'): {exc}"
            ) from exc
        if not config.checkpoint.exists():
            raise CheckpointLoadError(f"checkpoint not found: {config.checkpoint}")
        try:
            model = sam_model_registry[config.registry_key](
                checkpoint=str(config.checkpoint)
            )
        except Exception as exc:
            raise CheckpointLoadError(f"cannot load checkpoint: {exc}") from exc
        model.to(config.device)
        self.config = config
        self._model = model
        self._predictor = SamPredictor(model)
        self._image_cache: str | None = None

    def _load_image(self, path: str) -> np.ndarray:
        from PIL import Image

        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"))
        return arr

    def _set_image(self, path: str) -> None:
        if self._image_cache == path:
            return
        self._predictor.set_image(self._load_image(path))
        self._image_cache = path

    def interactive(self, request: Request) -> list[tuple[np.ndarray, float]]:
        self._set_image(request.image)
        points = list(request.foreground) + list(request.background)
        coords = np.array(points, dtype=np.float32) if points else None
        labels = (
            np.array(
                [1] * len(request.foreground) + [0] * len(request.background),
                dtype=np.int32,
            )
            if points
            else None
        )
        box = np.array(request.box, dtype=np.float32) if request.box else None
        masks, scores, _ = self._predictor.predict(
            point_coords=coords,
            point_labels=labels,
            box=box,
            multimask_output=True,
        )
        best = int(np.argmax(scores))
        score = float(np.clip(scores[best], 0.0, 1.0))
        return [(masks[best].astype(bool), score)]

    def automatic(self, request: Request) -> list[tuple[np.ndarray, float]]:
        from segment_anything import SamAutomaticMaskGenerator

        defaults = self.config.automatic
        params = request.params
        generator = SamAutomaticMaskGenerator(
            self._model,
            points_per_side=int(params.get("points_per_side", defaults.points_per_side)),
            pred_iou_thresh=float(params.get("score_threshold", defaults.score_threshold)),
            stability_score_thresh=float(
                params.get("stability_threshold", defaults.stability_threshold)
            ),
            min_mask_region_area=int(params.get("min_mask_area", defaults.min_mask_area)),
        )
        records = generator.generate(self._load_image(request.image))
        return [
            (r["segmentation"].astype(bool), float(np.clip(r["predicted_iou"], 0.0, 1.0)))
            for r in records
        ]
