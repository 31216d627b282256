"""
Utility functions for the evolving-domain toolkit
"""
import logging
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

import config

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1


def setup_logging(level=logging.INFO):
    """
    Setup logging configuration

    Args:
        level: Logging level (int or level name)
    """
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )


class LinearCongruentialGenerator:
    """
    64-bit linear congruential generator used for every randomized check.

    state <- (6364136223846793005 * state + 1442695040888963407) mod 2**64;
    a uniform draw keeps the top 53 bits of the new state. The sequence is
    fully specified by the seed, so runs reproduce across platforms.
    """

    def __init__(self, seed: int = config.DEFAULT_SEED):
        self.state = int(seed) & _MASK64

    def next_int(self) -> int:
        self.state = (config.LCG_MULTIPLIER * self.state + config.LCG_INCREMENT) & _MASK64
        return self.state

    def uniform(self, size: int) -> np.ndarray:
        """
        Draw uniform numbers in [0, 1)

        Args:
            size: Number of draws

        Returns:
            Array of draws in generation order
        """
        return np.array([(self.next_int() >> 11) / float(1 << 53) for _ in range(size)])

    def symmetric(self, size: int) -> np.ndarray:
        """Uniform draws in [-1, 1)."""
        return 2.0 * self.uniform(size) - 1.0


def estimate_order(residuals: Sequence[float], refinement: float = 2.0) -> float:
    """
    Estimate the convergence order from the two finest levels

    Args:
        residuals: Residuals for successively refined steps
        refinement: Ratio between successive steps (2 for halving)

    Returns:
        log(r(h) / r(h / refinement)) / log(refinement), or nan when it is undefined
    """
    if len(residuals) < 2:
        return float("nan")
    coarse, fine = float(residuals[-2]), float(residuals[-1])
    if not (np.isfinite(coarse) and np.isfinite(fine)) or coarse <= 0.0 or fine <= 0.0:
        return float("nan")
    return float(np.log(coarse / fine) / np.log(refinement))


def write_csv(path: Path, columns: Dict[str, Iterable[float]],
              notes: Optional[Sequence[str]] = None) -> Path:
    """
    Write named numeric columns as CSV with a '#'-prefixed header

    Args:
        path: Target file
        columns: Ordered mapping of column name to values
        notes: Header lines describing the columns

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    data = np.column_stack([np.asarray(list(columns[name]), dtype=float) for name in names])
    header_lines = list(notes or [])
    header_lines.append(config.CSV_DELIMITER.join(names))
    np.savetxt(path, data, fmt=config.CSV_FORMAT, delimiter=config.CSV_DELIMITER,
               header="\n".join(header_lines), comments="# ")
    logger.debug(f"Wrote {len(data)} rows to {path}")
    return path


def format_residual(value: float) -> str:
    """Format a residual for summary lines."""
    return f"{value:.3e}"


def sanitize_filename(name: str) -> str:
    """
    Sanitize a check or scenario name for use as a file name

    Args:
        name: Original name

    Returns:
        Sanitized name
    """
    import re
    sanitized = re.sub(r'[^\w.-]', '_', name)
    return re.sub(r'_+', '_', sanitized).strip('_')
