"""RelayRAG: orchestrated retrieval-augmented answering across multiple AI services"""

from .app import RelayRagApp
from .config import Config
from .errors import RelayError
from .gateway import Gateway
from .health_monitor import HealthMonitor
from .platform_config import PlatformConfig, load_config
from .semantic_cache import SemanticCache

__version__ = "1.0.0"
__author__ = "RelayRAG Development Team"

__all__ = [
    "RelayRagApp",
    "Config",
    "Gateway",
    "HealthMonitor",
    "PlatformConfig",
    "RelayError",
    "SemanticCache",
    "load_config",
]
