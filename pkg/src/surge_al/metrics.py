"""Regression scores for surge-distance predictions, in physical (%) units."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

DEFAULT_THRESHOLD_PCT = 4.0
DEFAULT_MAPE_FLOOR = 1.0


class DegenerateTargetError(ValueError):
    pass


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions, {truth.size} targets")
    if pred.size == 0:
        raise ValueError("metrics need at least one sample")
    return pred, truth


def r_squared(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateTargetError("R^2 is undefined for a constant target")
    return 1.0 - float(np.sum((truth - pred) ** 2)) / ss_tot


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((truth - pred) ** 2)))


def max_error(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.max(np.abs(truth - pred)))


def _relative_errors_pct(pred, truth, floor):
    if not floor > 0:
        raise ValueError("floor must be positive")
    pred, truth = _pair(pred, truth)
    return 100.0 * np.abs(truth - pred) / np.maximum(np.abs(truth), floor)


def mape(pred, truth, floor: float = DEFAULT_MAPE_FLOOR) -> float:
    """Mean absolute percentage error with ``max(|y|, floor)`` as denominator."""
    return float(np.mean(_relative_errors_pct(pred, truth, floor)))


def acceptance_accuracy(pred, truth, threshold_pct: float = DEFAULT_THRESHOLD_PCT,
                        floor: float = DEFAULT_MAPE_FLOOR) -> float:
    """Percentage of samples whose relative error is within ``threshold_pct``."""
    rel = _relative_errors_pct(pred, truth, floor)
    return 100.0 * float(np.count_nonzero(rel <= threshold_pct)) / rel.size


@dataclass(frozen=True)
class MetricsReport:
    r2: float
    rmse: float
    max_error: float
    mape_pct: float
    acceptance_accuracy_pct: float
    n: int
    threshold_pct: float = DEFAULT_THRESHOLD_PCT
    mape_floor: float = DEFAULT_MAPE_FLOOR

    def to_dict(self) -> dict:
        return asdict(self)


def metrics_report(pred, truth, threshold_pct: float = DEFAULT_THRESHOLD_PCT,
                   mape_floor: float = DEFAULT_MAPE_FLOOR) -> MetricsReport:
    pred, truth = _pair(pred, truth)
    return MetricsReport(
        r2=r_squared(pred, truth),
        rmse=rmse(pred, truth),
        max_error=max_error(pred, truth),
        mape_pct=mape(pred, truth, mape_floor),
        acceptance_accuracy_pct=acceptance_accuracy(pred, truth, threshold_pct, mape_floor),
        n=int(pred.size),
        threshold_pct=float(threshold_pct),
        mape_floor=float(mape_floor),
    )
