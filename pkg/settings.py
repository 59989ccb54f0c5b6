"""
HeatFlow Lab - Settings
=======================
Environment-driven configuration. Values come from the process environment,
optionally seeded from a `.env` file in the working directory (see
`.env.example`). Command-line flags override everything here.
"""

import logging
import os
from pathlib import Path
from typing import Dict

from dotenv import load_dotenv

load_dotenv()

REPO_ROOT = Path(__file__).resolve().parent

LOG_FORMAT = '%(name)s:%(levelname)s:%(message)s'


def out_dir() -> Path:
    return Path(os.getenv("HEATFLOW_OUT_DIR", "runs"))


def data_dir() -> Path:
    return Path(os.getenv("HEATFLOW_DATA_DIR", str(REPO_ROOT / "data")))


def threads() -> int:
    try:
        return max(1, int(os.getenv("HEATFLOW_THREADS", "1")))
    except ValueError:
        return 1


def log_level() -> str:
    return os.getenv("HEATFLOW_LOG_LEVEL", "INFO").upper()


def configure_logging(level: str = None) -> None:
    """Install the lab's log format once; later calls only adjust the level."""
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(format=LOG_FORMAT)
    root.setLevel(getattr(logging, (level or log_level()).upper(), logging.INFO))


def effective_config() -> Dict:
    """Snapshot of the environment-derived settings, embedded in reports."""
    return {
        "out_dir": str(out_dir()),
        "data_dir": str(data_dir()),
        "threads": threads(),
        "log_level": log_level(),
    }
