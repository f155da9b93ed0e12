"""NDJSON protocol adapter serving SAM-family checkpoints."""

__version__ = "0.1.0"

from .config import AdapterConfig, AutomaticDefaults, load_config
from .server import serve

__all__ = ["AdapterConfig", "AutomaticDefaults", "load_config", "serve"]
