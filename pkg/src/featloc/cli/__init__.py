"""Command-line interface: flat key=value configs and pipeline stages."""

from .config import SEED_ENV_VAR, ConfigError, load_config, parse_config_text
from .main import CliError, main

__all__ = [
    "CliError",
    "ConfigError",
    "SEED_ENV_VAR",
    "load_config",
    "main",
    "parse_config_text",
]
