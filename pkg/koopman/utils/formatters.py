"""Formatting scores and sizes for display."""

from typing import Iterable, Optional


def format_score_range(scores: Iterable[Optional[float]], digits: int = 4) -> Optional[str]:
    """Format a set of R² scores as a human-readable range.

    Args:
        scores: R² values, ``None`` entries are skipped
        digits: Decimal places

    Returns:
        Formatted range (e.g., "0.9844" or "0.9844-0.9958")
        None if no score is available
    """
    values = [float(score) for score in scores if score is not None]
    if not values:
        return None
    low, high = min(values), max(values)
    return f"{low:.{digits}f}" if round(low, digits) == round(high, digits) else f"{low:.{digits}f}-{high:.{digits}f}"


def format_bytes(size: Optional[int]) -> Optional[str]:
    """Format a file size with a binary unit (e.g., "512 B", "3.4 KiB")."""
    if size is None:
        return None
    value = float(size)
    for unit in ("B", "KiB", "MiB"):
        if value < 1024 or unit == "MiB":
            return f"{int(value)} {unit}" if unit == "B" else f"{value:.1f} {unit}"
        value /= 1024
    return None
