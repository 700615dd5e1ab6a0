"""Reference HTTP sidecar for the m3kg backend protocol."""

__version__ = "0.1.0"

from .app import create_app
from .config import AdapterConfig

__all__ = ["AdapterConfig", "create_app", "__version__"]
