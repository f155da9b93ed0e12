"""Runnable test-double adapters speaking the NDJSON protocol.

    python -m promptseg.builtin_adapters null
    python -m promptseg.builtin_adapters oracle --frames FRAMES.json \
        [--erosion N] [--dropout P] [--jitter-seed N]
    python -m promptseg.builtin_adapters oracle --manifest DATA.json ...

The oracle answers from ground truth. It needs to know how each requested
image maps to a source mask: either a frames manifest written by the
preprocessing step (tile/resize geometry included) or a plain dataset
manifest for native-frame images. Automatic requests may override the
degradation defaults via params {"erosion": .., "dropout": .., "jitter_seed": ..}.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .adapter import (
    AdapterRequest,
    AdapterResponse,
    DegradationConfig,
    decode_request,
    encode_response,
    null_predict,
    oracle_predict,
)
from .mask import LabelMask, load_label_mask, load_manifest
from .preprocess import Frame, load_frames_manifest, crop_tile, _resample_nearest


class _GroundTruthIndex:
    """Maps a requested image path to ground truth in that image's frame."""

    def __init__(self, frames: list[Frame], native: dict[str, Path]):
        self._frames = {str(f.image): f for f in frames}
        self._native = native
        self._mask_cache: dict[str, LabelMask] = {}

    def _source_mask(self, path: Path) -> LabelMask:
        key = str(path)
        if key not in self._mask_cache:
            self._mask_cache[key] = load_label_mask(path)
        return self._mask_cache[key]

    def frame_gt(self, request: AdapterRequest) -> LabelMask | None:
        """Ground truth projected into the request's frame.

        For automatic requests on tiles, instances clipped by the tile
        boundary are blanked: a tiling-aware model only reports objects it
        can see whole, and the stitcher reconstructs the rest from
        overlapping tiles.
        """
        frame = self._frames.get(request.image)
        if frame is None:
            native_mask = self._native.get(request.image)
            if native_mask is None:
                return None
            return self._source_mask(native_mask)
        if frame.source_mask is None:
            return None
        source = self._source_mask(frame.source_mask)
        tile = frame.tile()
        if tile is not None:
            local = crop_tile(source.labels, tile).copy()
            if request.kind == "automatic":
                full_counts = np.bincount(source.labels.ravel())
                local_counts = np.bincount(local.ravel(), minlength=len(full_counts))
                clipped = np.nonzero(local_counts < full_counts)[0]
                local[np.isin(local, clipped[clipped > 0])] = 0
            return LabelMask(local)
        return LabelMask(_resample_nearest(source.labels, frame.width, frame.height))


def _request_config(request: AdapterRequest, base: DegradationConfig) -> DegradationConfig:
    params = request.params or {}
    return DegradationConfig(
        erosion_radius=int(params.get("erosion", base.erosion_radius)),
        dropout_probability=float(params.get("dropout", base.dropout_probability)),
        jitter_seed=int(params.get("jitter_seed", base.jitter_seed)),
    )


def serve(args: argparse.Namespace) -> int:
    index: _GroundTruthIndex | None = None
    if args.model == "oracle":
        frames = load_frames_manifest(args.frames) if args.frames else []
        native: dict[str, Path] = {}
        if args.manifest:
            for record in load_manifest(args.manifest):
                native[str(record.image)] = record.mask
        index = _GroundTruthIndex(frames, native)
    base_cfg = DegradationConfig(
        erosion_radius=args.erosion,
        dropout_probability=args.dropout,
        jitter_seed=args.jitter_seed,
    )
    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            request = decode_request(line)
        except Exception as exc:  # malformed input: report, keep serving
            sys.stdout.write(
                encode_response(
                    AdapterResponse(
                        request_id="", error={"code": "malformed", "message": str(exc)}
                    )
                )
            )
            sys.stdout.flush()
            continue
        if args.model == "null":
            response = null_predict(request)
        else:
            assert index is not None
            gt = index.frame_gt(request)
            if gt is None:
                response = AdapterResponse(
                    request_id=request.request_id,
                    error={
                        "code": "unknown_image",
                        "message": f"no ground truth for {request.image}",
                    },
                )
            else:
                response = oracle_predict(request, gt, _request_config(request, base_cfg))
        sys.stdout.write(encode_response(response))
        sys.stdout.flush()
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="promptseg.builtin_adapters", description=__doc__
    )
    parser.add_argument("model", choices=["oracle", "null"])
    parser.add_argument("--frames", help="frames manifest from the preprocessing step")
    parser.add_argument("--manifest", help="dataset manifest for native-frame images")
    parser.add_argument("--erosion", type=int, default=0)
    parser.add_argument("--dropout", type=float, default=0.0)
    parser.add_argument("--jitter-seed", type=int, default=0)
    args = parser.parse_args(argv)
    if args.model == "oracle" and not (args.frames or args.manifest):
        parser.error("oracle needs --frames and/or --manifest")
    return serve(args)


if __name__ == "__main__":
    sys.exit(main())
