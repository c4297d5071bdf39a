"""Reference bridge between the grid engine's verifier client and a scene judge."""
from .config import BridgeConfig
from .protocol import SchemaViolation, UpstreamError
from .server import build_app

__all__ = ["BridgeConfig", "SchemaViolation", "UpstreamError", "build_app"]
__version__ = "0.1.0"
