"""Configuration, checkpoints, and the command line driver."""
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config, parse_config

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "load_checkpoint",
    "save_checkpoint",
    "ConfigError",
    "RunConfig",
    "load_config",
    "parse_config",
]
