"""Wire protocol: NDJSON requests/responses and the mask RLE grammar.

Implemented against the documented schema (docs/protocol.md in the harness
repository): compact ASCII JSON, fixed field order, one message per line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class ProtocolError(ValueError):
    """Request line violates the wire schema."""


@dataclass(frozen=True)
class Request:
    kind: str
    request_id: str
    image: str
    width: int
    height: int
    object_id: int | None = None
    foreground: tuple[tuple[int, int], ...] = ()
    background: tuple[tuple[int, int], ...] = ()
    box: tuple[int, int, int, int] | None = None
    params: dict = field(default_factory=dict)


def parse_request(line: str) -> Request:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"not valid JSON: {exc}") from exc
    kind = obj.get("kind")
    if kind not in ("interactive", "automatic"):
        raise ProtocolError(f"unknown request kind {kind!r}")
    try:
        common = {
            "kind": kind,
            "request_id": str(obj["request_id"]),
            "image": str(obj["image"]),
            "width": int(obj["width"]),
            "height": int(obj["height"]),
        }
        if kind == "interactive":
            box = obj.get("box")
            return Request(
                **common,
                object_id=int(obj["object_id"]),
                foreground=tuple((int(x), int(y)) for x, y in obj.get("foreground", [])),
                background=tuple((int(x), int(y)) for x, y in obj.get("background", [])),
                box=None if box is None else tuple(int(v) for v in box),
            )
        return Request(**common, params=dict(obj.get("params", {})))
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"bad request field: {exc}") from exc


def encode_request(request: Request) -> str:
    """Re-encode a request in schema byte order (conformance checking)."""
    obj: dict = {
        "kind": request.kind,
        "request_id": request.request_id,
        "image": request.image,
        "width": request.width,
        "height": request.height,
    }
    if request.kind == "interactive":
        obj["object_id"] = request.object_id
        obj["foreground"] = [[x, y] for x, y in request.foreground]
        obj["background"] = [[x, y] for x, y in request.background]
        obj["box"] = None if request.box is None else list(request.box)
    else:
        obj["params"] = {k: request.params[k] for k in sorted(request.params)}
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=True) + "\n"


def encode_response(
    request_id: str, instances: list[tuple[np.ndarray, float]]
) -> str:
    """Response line from (mask, score) pairs; masks are bool (h, w)."""
    return (
        json.dumps(
            {
                "request_id": request_id,
                "instances": [
                    {"rle": rle_encode(mask), "predicted_iou": round(float(score), 6)}
                    for mask, score in instances
                ],
            },
            separators=(",", ":"),
            ensure_ascii=True,
        )
        + "\n"
    )


def encode_fault(request_id: str, code: str, message: str) -> str:
    return (
        json.dumps(
            {"request_id": request_id, "error": {"code": code, "message": message}},
            separators=(",", ":"),
            ensure_ascii=True,
        )
        + "\n"
    )


def rle_encode(mask: np.ndarray) -> str:
    """Row-major alternating run lengths, background run first (may be 0)."""
    flat = np.asarray(mask, dtype=bool).ravel()
    change = np.nonzero(flat[1:] != flat[:-1])[0] + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [flat.size]))
    runs = (ends - starts).tolist()
    if flat.size and flat[0]:
        runs = [0, *runs]
    return " ".join(str(r) for r in runs)
