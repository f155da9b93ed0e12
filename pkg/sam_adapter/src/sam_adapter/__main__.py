"""Entry point: python -m sam_adapter CONFIG.json [--dry-run]"""

import argparse
import sys

from .config import DEVICE_ENV_VAR, load_config
from .server import serve


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="sam_adapter",
        description="NDJSON protocol adapter over SAM-family checkpoints. "
        f"Set {DEVICE_ENV_VAR} to override the configured device.",
    )
    parser.add_argument("config", help="path to the JSON config file")
    parser.add_argument(
        "--dry-run",
        action="store_true",
        help="serve the deterministic stub predictor (no checkpoint needed)",
    )
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
    except (OSError, ValueError, TypeError) as exc:
        print(f"sam_adapter: bad config: {exc}", file=sys.stderr)
        return 1
    return serve(config, dry_run=args.dry_run)


if __name__ == "__main__":
    sys.exit(main())
