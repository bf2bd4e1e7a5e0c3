"""Two-sample Welch t-test and binary classification scores."""

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import stdtr

from app.core.errors import DegenerateGroups


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p_value: float


def welch_t_test(a: Sequence[float], b: Sequence[float]) -> WelchResult:
    """Unequal-variance t statistic, Welch-Satterthwaite df, two-sided p."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise DegenerateGroups(f"each group needs at least 2 values, got {a.size} and {b.size}")
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    se2 = va + vb
    if se2 == 0.0:
        raise DegenerateGroups("both groups have zero variance")
    t = float((a.mean() - b.mean()) / np.sqrt(se2))
    df = float(se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1)))
    p = float(min(1.0, 2.0 * stdtr(df, -abs(t))))
    return WelchResult(t, df, p)


@dataclass(frozen=True)
class BinaryScores:
    precision: float
    recall: float
    f1: float
    accuracy: float


def binary_scores(predicted: Sequence[int], actual: Sequence[int]) -> BinaryScores:
    predicted = np.asarray(predicted, dtype=bool)
    actual = np.asarray(actual, dtype=bool)
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = float(np.mean(predicted == actual)) if actual.size else 0.0
    return BinaryScores(precision, recall, f1, accuracy)
