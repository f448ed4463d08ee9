"""Pump operating-point data: surge distance, a synthetic DoE, CSV I/O, scaling.

Synthetic unit system
---------------------
Temperatures in K, pressures in bar, speed in rpm, power in kW.  ``qin`` is
expressed in whatever unit makes ``qin / (2.93e-3 * n_rpm)`` the
dimensionless flow coefficient; the generator draws that coefficient
directly and back-computes ``qin``.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PHI_SURGE = 0.076
FLOW_CONSTANT = 2.93e-3

CSV_HEADER = ("tin_K", "pin_bar", "n_rpm", "dp_bar", "power_kW", "qin", "sd_pct")
FEATURES = ("tin", "pin", "n_speed", "delta_p", "power")


class CSVFormatError(ValueError):
    """Malformed pump CSV; carries the 1-based line number and column name."""

    def __init__(self, message, line=None, column=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.column = column


class DegenerateFeatureError(ValueError):
    pass


def flow_coefficient(qin, n_speed):
    n_speed = np.asarray(n_speed, dtype=np.float64)
    if np.any(n_speed <= 0):
        raise ValueError("rotational speed must be positive")
    phi = np.asarray(qin, dtype=np.float64) / (FLOW_CONSTANT * n_speed)
    return float(phi) if phi.ndim == 0 else phi


def surge_distance(qin, n_speed):
    """Percentage margin of the flow coefficient above the surge line."""
    phi = flow_coefficient(qin, n_speed)
    return 100.0 * (phi - PHI_SURGE) / PHI_SURGE


@dataclass(frozen=True)
class PumpSample:
    tin: float
    pin: float
    n_speed: float
    delta_p: float
    power: float
    sd: float
    qin: float | None = None

    def features(self) -> tuple[float, float, float, float, float]:
        return (self.tin, self.pin, self.n_speed, self.delta_p, self.power)


@dataclass(frozen=True)
class GeneratorConfig:
    n_samples: int = 5000
    seed: int = 0
    tin_range: tuple[float, float] = (293.15, 353.15)
    pin_range: tuple[float, float] = (10.0, 100.0)
    n_range: tuple[float, float] = (1500.0, 6000.0)
    phi_range: tuple[float, float] = (0.04, 0.20)
    noise_scale: float = 0.02
    heteroscedastic: bool = True
    # differential pressure at n_ref and zero flow (bar)
    dp_coeff: float = 30.0
    # power at n_ref and unit flow coefficient (kW)
    power_coeff: float = 5000.0
    n_ref: float = 4500.0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        for name in ("tin_range", "pin_range", "n_range", "phi_range"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"{name} must be a finite interval with lo < hi")
        if self.phi_range[0] <= 0 or self.n_range[0] <= 0:
            raise ValueError("phi_range and n_range must be positive")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")


def _generate_one(config: GeneratorConfig, index: int) -> PumpSample:
    rng = np.random.default_rng([config.seed, index])
    u = rng.random(4)
    eps = rng.standard_normal(2)

    def lerp(rng_pair, t):
        lo, hi = rng_pair
        return lo + (hi - lo) * t

    tin = lerp(config.tin_range, u[0])
    pin = lerp(config.pin_range, u[1])
    n_speed = lerp(config.n_range, u[2])
    phi = lerp(config.phi_range, u[3])
    phi_hi = config.phi_range[1]

    std = config.noise_scale
    if config.heteroscedastic:
        std *= 1.0 + 2.0 * (1.0 - phi / phi_hi)

    ratio = n_speed / config.n_ref
    qin = FLOW_CONSTANT * n_speed * phi
    delta_p = config.dp_coeff * ratio ** 2 * (1.0 - phi / phi_hi) * (1.0 + std * eps[0])
    power = config.power_coeff * ratio ** 3 * phi * (1.0 + std * eps[1])
    sd = surge_distance(qin, n_speed)
    return PumpSample(float(tin), float(pin), float(n_speed), float(delta_p),
                      float(power), float(sd), float(qin))


def generate_synthetic(config: GeneratorConfig) -> list[PumpSample]:
    """Draw a synthetic design of experiments.

    Every sample uses its own random stream keyed by ``(seed, index)``, so any
    contiguous slice can be generated independently.  Feature noise grows
    towards the surge line when ``heteroscedastic`` is set.
    """
    return [_generate_one(config, i) for i in range(config.n_samples)]


def samples_to_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into a feature matrix ``(n, 5)`` and an SD vector."""
    X = np.array([s.features() for s in samples], dtype=np.float64).reshape(-1, len(FEATURES))
    y = np.array([s.sd for s in samples], dtype=np.float64)
    return X, y


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def save_csv(samples, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for s in samples:
            w.writerow([_fmt(s.tin), _fmt(s.pin), _fmt(s.n_speed), _fmt(s.delta_p),
                        _fmt(s.power), _fmt(s.qin), _fmt(s.sd)])


def load_csv(path) -> list[PumpSample]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CSVFormatError(f"{path} is empty", line=1)
        header = [h.strip() for h in header]
        missing = [c for c in CSV_HEADER if c not in header]
        if missing:
            raise CSVFormatError(f"missing column(s) {', '.join(missing)}", line=1)
        col = {name: header.index(name) for name in CSV_HEADER}

        samples = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CSVFormatError(
                    f"expected {len(header)} fields, found {len(row)}", line=line)
            vals = {}
            for name in CSV_HEADER:
                cell = row[col[name]].strip()
                if name == "qin" and cell == "":
                    vals[name] = None
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise CSVFormatError(f"non-numeric value {cell!r}",
                                         line=line, column=name) from None
                if not math.isfinite(v):
                    raise CSVFormatError(f"non-finite value {cell!r}", line=line, column=name)
                vals[name] = v
            samples.append(PumpSample(
                tin=vals["tin_K"], pin=vals["pin_bar"], n_speed=vals["n_rpm"],
                delta_p=vals["dp_bar"], power=vals["power_kW"], sd=vals["sd_pct"],
                qin=vals["qin"],
            ))
    return samples


@dataclass(frozen=True)
class Scaler:
    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: float
    target_std: float

    def transform_features(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.feature_mean) / self.feature_std

    def transform_target(self, y):
        return (np.asarray(y, dtype=np.float64) - self.target_mean) / self.target_std

    def invert_target(self, z):
        return np.asarray(z, dtype=np.float64) * self.target_std + self.target_mean

    def invert_variance(self, var):
        return np.asarray(var, dtype=np.float64) * self.target_std ** 2

    def to_dict(self) -> dict:
        return {
            "feature_mean": [float(v) for v in self.feature_mean],
            "feature_std": [float(v) for v in self.feature_std],
            "target_mean": float(self.target_mean),
            "target_std": float(self.target_std),
        }

    @classmethod
    def from_dict(cls, d) -> "Scaler":
        return cls(np.array(d["feature_mean"], dtype=np.float64),
                   np.array(d["feature_std"], dtype=np.float64),
                   float(d["target_mean"]), float(d["target_std"]))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.feature_mean, self.feature_std,
                    np.array([self.target_mean, self.target_std])):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def fit_scaler(X, y, train_idx) -> Scaler:
    """Z-score statistics of the rows in ``train_idx`` only."""
    idx = np.asarray(train_idx, dtype=np.intp)
    if idx.size < 2:
        raise ValueError("need at least two training rows to fit a scaler")
    Xt = np.asarray(X, dtype=np.float64)[idx]
    yt = np.asarray(y, dtype=np.float64)[idx]
    f_std = Xt.std(axis=0)
    t_std = float(yt.std())
    bad = [FEATURES[j] for j in np.flatnonzero(f_std <= 0)]
    if bad:
        raise DegenerateFeatureError(f"constant feature column(s) on training rows: {', '.join(bad)}")
    if t_std <= 0:
        raise DegenerateFeatureError("constant target on training rows")
    return Scaler(Xt.mean(axis=0), f_std, float(yt.mean()), t_std)


def apply(scaler: Scaler, X, y=None):
    """Normalize features (and the target, when given)."""
    Xn = scaler.transform_features(X)
    if y is None:
        return Xn
    return Xn, scaler.transform_target(y)


def invert_target(scaler: Scaler, value):
    out = scaler.invert_target(value)
    return float(out) if out.ndim == 0 else out
