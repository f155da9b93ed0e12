"""Adapter configuration, loaded from a single JSON file."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

BACKBONES = ("ViT-B", "ViT-L")

# sam model registry keys per backbone; checkpoint filenames usually carry
# the same tag, which is how consistency is sanity-checked
_REGISTRY_KEY = {"ViT-B": "vit_b", "ViT-L": "vit_l"}

DEVICE_ENV_VAR = "SAM_ADAPTER_DEVICE"


@dataclass(frozen=True)
class AutomaticDefaults:
    points_per_side: int = 32
    score_threshold: float = 0.88
    stability_threshold: float = 0.95
    min_mask_area: int = 0

    def __post_init__(self) -> None:
        if self.points_per_side < 1:
            raise ValueError("points_per_side must be >= 1")
        for name, v in (
            ("score_threshold", self.score_threshold),
            ("stability_threshold", self.stability_threshold),
        ):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.min_mask_area < 0:
            raise ValueError("min_mask_area must be >= 0")


@dataclass(frozen=True)
class AdapterConfig:
    checkpoint: Path | None
    backbone: str = "ViT-B"
    device: str = "cpu"
    automatic: AutomaticDefaults = field(default_factory=AutomaticDefaults)

    def __post_init__(self) -> None:
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.checkpoint is not None:
            name = self.checkpoint.name.lower()
            key = _REGISTRY_KEY[self.backbone]
            other = [k for k in _REGISTRY_KEY.values() if k != key]
            if any(k in name for k in other) and key not in name:
                raise ValueError(
                    f"checkpoint {self.checkpoint.name!r} does not look like a "
                    f"{self.backbone} checkpoint"
                )

    @property
    def registry_key(self) -> str:
        return _REGISTRY_KEY[self.backbone]


def load_config(path: str | Path) -> AdapterConfig:
    """Read the config file; the device may be overridden by environment."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    automatic = AutomaticDefaults(**raw.get("automatic", {}))
    checkpoint = raw.get("checkpoint")
    return AdapterConfig(
        checkpoint=None if checkpoint is None else Path(checkpoint),
        backbone=raw.get("backbone", "ViT-B"),
        device=os.environ.get(DEVICE_ENV_VAR, raw.get("device", "cpu")),
        automatic=automatic,
    )
