"""
Market Files
Reads and writes market YAML files; rejects files that fail validation
"""

import logging
from pathlib import Path
from typing import Union

import yaml
from pydantic import ValidationError

from model.errors import ConfigError
from model.market import Market, validate

logger = logging.getLogger(__name__)


def parse_market(raw: dict) -> Market:
    """Build and validate a Market from a parsed mapping."""
    if not isinstance(raw, dict):
        raise ConfigError(f"market file must hold a mapping, got {type(raw).__name__}")
    try:
        market = Market(**raw)
    except (ValidationError, TypeError) as e:
        raise ConfigError(f"Invalid market definition: {e}") from e
    validate(market)
    return market


def load_market(path: Union[str, Path]) -> Market:
    """
    Load a market file.

    Args:
        path: YAML file with v_good, v_bad, prior, rate_good, rate_bad and a
            cohorts list of {discount, mass}

    Returns:
        Validated Market
    """
    path = Path(path)
    try:
        with open(path, "r") as f:
            raw = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read market file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Error parsing market file {path}: {e}") from e

    market = parse_market(raw)
    logger.info(f"Loaded market from {path}: {market.n} cohorts, total mass {market.total_mass}")
    return market


def dump_market(market: Market, path: Union[str, Path]) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(market.model_dump(mode="json"), f, sort_keys=False)
