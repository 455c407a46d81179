"""Configuration for the EVLAB package."""

from .config import CONFIG_PARSER, worker_count
from .settings import Settings

__all__ = ["CONFIG_PARSER", "Settings", "worker_count"]
