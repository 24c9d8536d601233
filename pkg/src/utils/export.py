"""
Output Files
CSV tables with fixed precision and plain-text reports under one output directory
"""

import logging
from pathlib import Path
from typing import Iterable, Optional

import pandas as pd

logger = logging.getLogger(__name__)

PATH_FILE = "path.csv"
WELFARE_FILE = "welfare.csv"
REPORT_FILE = "report.txt"
POLICY_FILE = "policy.yaml"


def float_format(precision: Optional[int] = None) -> str:
    if precision is None:
        from utils.config import get_settings

        precision = get_settings().csv_precision
    return f"%.{precision}g"


def write_frame(frame: pd.DataFrame, path: Path, precision: Optional[int] = None) -> Path:
    """
    Write a table as CSV with a fixed number of significant digits.

    Args:
        frame: Table to write
        path: Target file; parent directories are created
        precision: Significant digits (defaults to settings)

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=float_format(precision))
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def write_report(lines: Iterable[str], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = "\n".join(lines) + "\n"
    path.write_text(text)
    logger.info(f"Wrote report to {path}")
    return path


def format_table(frame: pd.DataFrame, precision: Optional[int] = None) -> str:
    """Fixed-width text rendering used inside reports."""
    fmt = float_format(precision)
    return frame.to_string(index=False, float_format=lambda v: fmt % v)
