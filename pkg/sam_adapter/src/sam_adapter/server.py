"""The request loop: one NDJSON request in, one response line out.

Single-threaded by contract: the harness never has more than one request
in flight per process. Exit code 0 on clean end-of-stream, nonzero on
unrecoverable faults (bad checkpoint, out of memory).
"""

from __future__ import annotations

import sys

from .config import AdapterConfig
from .predictors import CheckpointLoadError, SamPredictorBackend, StubPredictor
from .protocol import ProtocolError, encode_fault, encode_response, parse_request


def serve(config: AdapterConfig, dry_run: bool = False) -> int:
    if dry_run:
        predictor = StubPredictor(config)
    else:
        try:
            predictor = SamPredictorBackend(config)
        except CheckpointLoadError as exc:
            print(f"sam_adapter: {exc}", file=sys.stderr)
            return 1
    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            request = parse_request(line)
        except ProtocolError as exc:
            sys.stdout.write(encode_fault("", "malformed", str(exc)))
            sys.stdout.flush()
            continue
        try:
            if request.kind == "interactive":
                instances = predictor.interactive(request)
            else:
                instances = predictor.automatic(request)
            sys.stdout.write(encode_response(request.request_id, instances))
            sys.stdout.flush()
        except MemoryError:
            sys.stdout.write(
                encode_fault(request.request_id, "out_of_memory", "prediction ran out of memory")
            )
            sys.stdout.flush()
            return 2
        except Exception as exc:  # surface the fault, then die nonzero
            sys.stdout.write(encode_fault(request.request_id, "prediction_failed", str(exc)))
            sys.stdout.flush()
            return 2
    return 0
