"""Real-weights smoke test: runs only when a checkpoint is provided via
SAM_CHECKPOINT (and SAM_BACKBONE, default ViT-B). A box prompt covering a
high-contrast disk must return a mask with IoU > 0.5 against the disk."""

import importlib.util
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

CHECKPOINT = os.environ.get("SAM_CHECKPOINT")

pytestmark = [
    pytest.mark.skipif(CHECKPOINT is None, reason="SAM_CHECKPOINT not set"),
    pytest.mark.skipif(
        importlib.util.find_spec("segment_anything") is None,
        reason="segment_anything not installed",
    ),
]


def disk_image(size: int = 256, radius: int = 60) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:size, 0:size]
    disk = (xs - size // 2) ** 2 + (ys - size // 2) ** 2 <= radius**2
    image = np.full((size, size), 30, dtype=np.uint8)
    image[disk] = 220
    return image, disk


def test_disk_box_prompt_iou(tmp_path):
    from PIL import Image

    image, disk = disk_image()
    image_path = tmp_path / "disk.png"
    Image.fromarray(image).save(image_path)

    config = tmp_path / "config.json"
    config.write_text(
        json.dumps(
            {
                "checkpoint": CHECKPOINT,
                "backbone": os.environ.get("SAM_BACKBONE", "ViT-B"),
                "device": os.environ.get("SAM_ADAPTER_DEVICE", "cpu"),
            }
        )
    )
    ys, xs = np.nonzero(disk)
    request = {
        "kind": "interactive",
        "request_id": "r1",
        "image": str(image_path),
        "width": 256,
        "height": 256,
        "object_id": 1,
        "foreground": [],
        "background": [],
        "box": [int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())],
    }
    proc = subprocess.run(
        [sys.executable, "-m", "sam_adapter", str(config)],
        input=(json.dumps(request) + "\n").encode(),
        capture_output=True,
        timeout=600,
    )
    assert proc.returncode == 0, proc.stderr
    [line] = proc.stdout.decode().splitlines()
    payload = json.loads(line)
    [inst] = payload["instances"]

    runs = [int(t) for t in inst["rle"].split()]
    flat = np.zeros(256 * 256, dtype=bool)
    pos, value = 0, False
    for r in runs:
        if value:
            flat[pos : pos + r] = True
        pos += r
        value = not value
    mask = flat.reshape(256, 256)
    inter = (mask & disk).sum()
    union = (mask | disk).sum()
    assert inter / union > 0.5
