"""Rank and linear correlation between predictions and subjective scores."""
from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateError, LengthError


def _check(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise LengthError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise LengthError("need at least two observations")
    return x, y


def plcc(x, y) -> float:
    """Pearson linear correlation coefficient."""
    x, y = _check(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateError("correlation undefined for a constant vector")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def srcc(x, y) -> float:
    """Spearman rank correlation; ties receive their average rank."""
    x, y = _check(x, y)
    return plcc(rankdata(x, method="average"), rankdata(y, method="average"))
