"""
Solver Settings
Numeric defaults for solvers, simulation and search, loaded from env, config.yaml or defaults
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from model.errors import ConfigError

logger = logging.getLogger(__name__)

ENV_PREFIX = "DISCLOSURE_"
DEFAULT_CONFIG_PATH = Path(__file__).resolve().parents[2] / "config" / "config.yaml"


class Settings(BaseModel):
    """Numeric defaults shared by the command line and the library entry points."""

    model_config = ConfigDict(frozen=True)

    horizon: float = Field(default=100.0, gt=0)
    integration_step: float = Field(default=1e-4, gt=0)
    integration_span: float = Field(default=50.0, gt=0)
    tolerance: float = Field(default=1e-8, gt=0)
    n_paths: int = Field(default=100_000, ge=1)
    seed: int = Field(default=20240501, ge=0)
    block_size: int = Field(default=10_000, ge=1)
    dt: float = Field(default=0.01, gt=0)
    grid_horizon: float = Field(default=0.15, gt=0)
    mass_step: float = Field(default=0.25, gt=0)
    breakdown_samples: int = Field(default=200, ge=1)
    jensen_instances: int = Field(default=1000, ge=1)
    csv_precision: int = Field(default=12, ge=1)
    log_level: str = "INFO"


def _env_overrides() -> Dict[str, Any]:
    """Collect DISCLOSURE_<FIELD> variables."""
    overrides = {}
    for name in Settings.model_fields:
        value = os.getenv(f"{ENV_PREFIX}{name.upper()}")
        if value is not None:
            overrides[name] = value
    return overrides


def _load_config(config_path: Optional[Path]) -> Dict[str, Any]:
    """
    Load settings.
    Priority: DISCLOSURE_* env vars > config.yaml > defaults
    """
    load_dotenv()
    values: Dict[str, Any] = {}

    config_file = Path(config_path) if config_path else DEFAULT_CONFIG_PATH
    if config_file.exists():
        try:
            with open(config_file, "r") as f:
                raw = yaml.safe_load(f) or {}
            values.update(raw.get("settings", {}) or {})
            logger.info(f"Loaded settings from {config_file}")
        except yaml.YAMLError as e:
            raise ConfigError(f"Error parsing {config_file}: {e}") from e
    else:
        logger.warning(f"Config file {config_file} not found. Using defaults.")

    env_values = _env_overrides()
    if env_values:
        logger.info(f"Using environment overrides for {sorted(env_values)}")
    values.update(env_values)
    return values


def load_settings(config_path: Optional[Path] = None) -> Settings:
    """Build a Settings object from the configured sources."""
    try:
        return Settings(**_load_config(config_path))
    except ValidationError as e:
        raise ConfigError(f"Invalid settings: {e}") from e


# Singleton instance
_settings: Optional[Settings] = None


def get_settings(config_path: Optional[Path] = None) -> Settings:
    """
    Get singleton Settings instance.

    Args:
        config_path: Path to configuration file

    Returns:
        Settings instance
    """
    global _settings
    if _settings is None:
        _settings = load_settings(config_path)
    return _settings


def reset_settings() -> None:
    """Forget the cached settings so the next get_settings() reloads them."""
    global _settings
    _settings = None
