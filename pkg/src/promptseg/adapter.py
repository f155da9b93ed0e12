"""Model-agnostic adapter boundary.

The harness talks to any segmentation process over newline-delimited JSON
on the process's standard streams: one request per line, one response line
per request, strictly serialized (a single in-flight request per process).
Images travel by path; masks travel inline as RLE strings. The exact field
names and ordering are normative; golden transcripts live in docs/golden.

Request (interactive):
  {"kind":"interactive","request_id":...,"image":...,"width":...,
   "height":...,"object_id":...,"foreground":[[x,y],...],
   "background":[[x,y],...],"box":[x0,y0,x1,y1]|null}
Request (automatic):
  {"kind":"automatic","request_id":...,"image":...,"width":...,
   "height":...,"params":{...}}
Response:
  {"request_id":...,"instances":[{"rle":...,"predicted_iou":...},...]}
  or {"request_id":...,"error":{"code":...,"message":...}}

Exit codes: 0 success, nonzero fault.

The built-in oracle model answers from ground truth after configurable
degradation (erosion, instance dropout), making the whole harness testable
without a neural network.
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .mask import InstanceMask, LabelMask, rle_decode, rle_encode
from .rng import derive_seed

PROTOCOL_ERRORS = ("malformed", "unknown_kind", "id_mismatch")


class AdapterError(Exception):
    """Base for adapter faults; carries the offending request id if known."""

    def __init__(self, message: str, request_id: str | None = None):
        super().__init__(message)
        self.request_id = request_id


class AdapterSpawnError(AdapterError):
    pass


class AdapterTimeoutError(AdapterError):
    pass


class AdapterProtocolError(AdapterError):
    pass


class AdapterExitError(AdapterError):
    """Adapter process ended before answering a request."""


@dataclass(frozen=True)
class AdapterRequest:
    kind: str  # "interactive" | "automatic"
    request_id: str
    image: str
    width: int
    height: int
    object_id: int | None = None
    foreground: tuple[tuple[int, int], ...] = ()
    background: tuple[tuple[int, int], ...] = ()
    box: tuple[int, int, int, int] | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ("interactive", "automatic"):
            raise ValueError(f"unknown request kind {self.kind!r}")
        for x, y in [*self.foreground, *self.background]:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError(f"prompt ({x},{y}) outside {self.width}x{self.height}")


@dataclass(frozen=True)
class PredictedInstance:
    rle: str
    predicted_iou: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.predicted_iou <= 1.0:
            raise ValueError(f"predicted_iou {self.predicted_iou} outside [0,1]")


@dataclass(frozen=True)
class AdapterResponse:
    request_id: str
    instances: tuple[PredictedInstance, ...] = ()
    error: dict | None = None


def encode_request(request: AdapterRequest) -> str:
    """One NDJSON line; field names and order are fixed by the schema."""
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


def decode_request(line: str) -> AdapterRequest:
    """Adapter-side parse of one request line."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise AdapterProtocolError(f"malformed request line: {exc}") from exc
    kind = obj.get("kind")
    if kind not in ("interactive", "automatic"):
        raise AdapterProtocolError(f"unknown request kind {kind!r}")
    common = {
        "kind": kind,
        "request_id": str(obj["request_id"]),
        "image": str(obj["image"]),
        "width": int(obj["width"]),
        "height": int(obj["height"]),
    }
    if kind == "interactive":
        box = obj.get("box")
        return AdapterRequest(
            **common,
            object_id=int(obj["object_id"]),
            foreground=tuple((int(x), int(y)) for x, y in obj.get("foreground", [])),
            background=tuple((int(x), int(y)) for x, y in obj.get("background", [])),
            box=None if box is None else tuple(int(v) for v in box),
        )
    return AdapterRequest(**common, params=dict(obj.get("params", {})))


def encode_response(response: AdapterResponse) -> str:
    obj: dict = {"request_id": response.request_id}
    if response.error is not None:
        obj["error"] = response.error
    else:
        obj["instances"] = [
            {"rle": inst.rle, "predicted_iou": inst.predicted_iou}
            for inst in response.instances
        ]
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=True) + "\n"


def decode_response(line: str) -> AdapterResponse:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise AdapterProtocolError(f"malformed response line: {exc}") from exc
    if "request_id" not in obj:
        raise AdapterProtocolError("response without request_id")
    rid = str(obj["request_id"])
    if "error" in obj:
        return AdapterResponse(request_id=rid, error=dict(obj["error"]))
    raw = obj.get("instances")
    if not isinstance(raw, list):
        raise AdapterProtocolError("response without instances list", request_id=rid)
    try:
        instances = tuple(
            PredictedInstance(rle=str(d["rle"]), predicted_iou=float(d["predicted_iou"]))
            for d in raw
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise AdapterProtocolError(f"bad instance entry: {exc}", request_id=rid) from exc
    return AdapterResponse(request_id=rid, instances=instances)


def decode_instances(
    response: AdapterResponse, width: int, height: int
) -> list[tuple[np.ndarray, float]]:
    """Decode all response RLEs, enforcing the declared frame dims."""
    out = []
    for inst in response.instances:
        try:
            mask = rle_decode(inst.rle, width, height)
        except ValueError as exc:
            raise AdapterProtocolError(
                f"RLE does not decode to {width}x{height}: {exc}",
                request_id=response.request_id,
            ) from exc
        out.append((mask, inst.predicted_iou))
    return out


# --- built-in oracle / null models ------------------------------------------


@dataclass(frozen=True)
class DegradationConfig:
    """Controlled corruption of oracle outputs; (0, 0.0, *) is exact."""

    erosion_radius: int = 0
    dropout_probability: float = 0.0
    jitter_seed: int = 0

    def __post_init__(self) -> None:
        if self.erosion_radius < 0:
            raise ValueError("erosion_radius must be >= 0")
        if not 0.0 <= self.dropout_probability <= 1.0:
            raise ValueError("dropout_probability must be in [0, 1]")


_ERODE_STRUCT = np.ones((3, 3), dtype=bool)  # Chebyshev ball of radius 1


def _degrade(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return mask
    return ndimage.binary_erosion(
        mask, structure=_ERODE_STRUCT, iterations=radius, border_value=0
    )


def _dropped(cfg: DegradationConfig, object_id: int) -> bool:
    if cfg.dropout_probability <= 0.0:
        return False
    if cfg.dropout_probability >= 1.0:
        return True
    # keyed on (seed, object) only, so the decision is stable across tiles
    u = derive_seed("dropout", cfg.jitter_seed, object_id)
    return u / 2.0**64 < cfg.dropout_probability


def _true_iou(degraded: np.ndarray, original: np.ndarray) -> float:
    union = int((degraded | original).sum())
    inter = int((degraded & original).sum())
    return round(inter / union, 6) if union else 0.0


def oracle_predict(
    request: AdapterRequest, gt: LabelMask, cfg: DegradationConfig
) -> AdapterResponse:
    """Answer a request from ground truth in the request's frame.

    Interactive: the requested object, eroded by erosion_radius; an object
    degraded to nothing yields an empty instance list. Automatic: every GT
    instance fully visible in the frame (tile-clipped instances are
    omitted; the tile overlap guarantees each object appears whole in some
    tile), after erosion and seeded dropout. predicted_iou is the true IoU
    of the degraded mask against the undegraded instance, 6 decimals.
    """
    if (gt.height, gt.width) != (request.height, request.width):
        raise ValueError("gt frame does not match request dims")
    if request.kind == "interactive":
        labels = set(gt.instance_ids())
        if request.object_id not in labels:
            return AdapterResponse(
                request_id=request.request_id,
                error={
                    "code": "unknown_object",
                    "message": f"object {request.object_id} not in ground truth",
                },
            )
        original = gt.labels == request.object_id
        degraded = _degrade(original, cfg.erosion_radius)
        if not degraded.any():
            return AdapterResponse(request_id=request.request_id, instances=())
        return AdapterResponse(
            request_id=request.request_id,
            instances=(
                PredictedInstance(
                    rle=rle_encode(degraded),
                    predicted_iou=_true_iou(degraded, original),
                ),
            ),
        )
    instances = []
    for obj_id in gt.instance_ids():
        if _dropped(cfg, obj_id):
            continue
        original = gt.labels == obj_id
        degraded = _degrade(original, cfg.erosion_radius)
        if not degraded.any():
            continue
        instances.append(
            PredictedInstance(
                rle=rle_encode(degraded), predicted_iou=_true_iou(degraded, original)
            )
        )
    return AdapterResponse(request_id=request.request_id, instances=tuple(instances))


def null_predict(request: AdapterRequest) -> AdapterResponse:
    """A model that never finds anything."""
    return AdapterResponse(request_id=request.request_id, instances=())


# --- subprocess session ------------------------------------------------------


class AdapterSession:
    """One adapter process, one serialized request channel."""

    def __init__(self, command: str | list[str], timeout: float = 60.0):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise AdapterSpawnError(f"cannot launch adapter {argv!r}: {exc}") from exc
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)  # end-of-stream marker

    def request(self, request: AdapterRequest) -> AdapterResponse:
        rid = request.request_id
        if self._proc.poll() is not None:
            raise AdapterExitError(
                f"adapter exited (code {self._proc.returncode}) before request {rid}",
                request_id=rid,
            )
        try:
            assert self._proc.stdin is not None
            self._proc.stdin.write(encode_request(request))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise AdapterExitError(
                f"adapter pipe closed while sending request {rid}", request_id=rid
            ) from exc
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise AdapterTimeoutError(
                f"no response to request {rid} within {self.timeout}s", request_id=rid
            ) from None
        if line is None:
            code = self._proc.wait()
            raise AdapterExitError(
                f"adapter exited (code {code}) before answering request {rid}",
                request_id=rid,
            )
        response = decode_response(line)
        if response.request_id != rid:
            raise AdapterProtocolError(
                f"response id {response.request_id!r} does not match request {rid!r}",
                request_id=rid,
            )
        if response.error is not None:
            raise AdapterError(
                f"adapter fault on request {rid}: {response.error}", request_id=rid
            )
        return response

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                if self._proc.stdin is not None:
                    self._proc.stdin.close()  # end-of-stream shutdown
                self._proc.wait(timeout=5.0)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "AdapterSession":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


def run_session(
    command: str | list[str],
    requests: list[AdapterRequest],
    timeout: float = 60.0,
) -> list[AdapterResponse]:
    """Send requests through one adapter process, in order."""
    with AdapterSession(command, timeout=timeout) as session:
        return [session.request(r) for r in requests]


def response_to_instances(
    response: AdapterResponse, width: int, height: int, start_id: int = 1
) -> list[InstanceMask]:
    """Decoded, non-empty response masks as InstanceMask values."""
    out = []
    next_id = start_id
    for mask, _score in decode_instances(response, width, height):
        if mask.any():
            out.append(InstanceMask(object_id=next_id, mask=mask))
            next_id += 1
    return out
