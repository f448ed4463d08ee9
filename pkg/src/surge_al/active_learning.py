"""Pool-based active learning with top-variance acquisition.

The loop keeps three disjoint index sets over one dataset.  The ensemble is
trained on the labelled ``train`` set; each round draws ``M * K`` candidates
at random from the ``pool``, keeps the ``K`` with the largest pooled
predictive variance, labels them (moves them to ``train``) and retrains.
The random baseline runs the identical loop but picks ``K`` pool points
uniformly.  Held-out ``test`` scores are recorded after every (re)training.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import metrics
from .ensemble import Ensemble, predict_pooled_batch, retrain_ensemble, train_ensemble
from .nnet import Architecture, TrainConfig
from .pump_data import Scaler, fit_scaler

STRATEGIES = ("top_variance", "random")


class PoolExhausted(RuntimeError):
    pass


@dataclass
class PoolState:
    train_idx: np.ndarray
    pool_idx: np.ndarray
    test_idx: np.ndarray

    def copy(self) -> "PoolState":
        return PoolState(self.train_idx.copy(), self.pool_idx.copy(), self.test_idx.copy())

    def move_to_train(self, selected) -> None:
        selected = np.asarray(selected, dtype=np.intp)
        keep = ~np.isin(self.pool_idx, selected)
        if np.count_nonzero(~keep) != selected.size:
            raise ValueError("selected indices must be distinct members of the pool")
        self.pool_idx = self.pool_idx[keep]
        self.train_idx = np.concatenate([self.train_idx, selected])


@dataclass(frozen=True)
class ALConfig:
    initial_train_size: int = 50
    candidate_multiplier: int = 5
    batch_k: int = 50
    iterations: int | None = None
    total_budget: int = 2200
    test_fraction: float = 0.2
    seed: int = 0
    n_members: int = 5
    warm_start: bool = True
    arch: Architecture = field(default_factory=Architecture)
    train_config: TrainConfig = field(default_factory=TrainConfig)
    threshold_pct: float = metrics.DEFAULT_THRESHOLD_PCT
    mape_floor: float = metrics.DEFAULT_MAPE_FLOOR

    def __post_init__(self):
        if self.candidate_multiplier < 1 or self.batch_k < 1:
            raise ValueError("candidate_multiplier and batch_k must be at least 1")
        if self.initial_train_size < 2:
            # the scaler needs two labelled rows
            raise ValueError("initial_train_size must be at least 2")
        if self.iterations is not None and self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.total_budget < self.initial_train_size:
            raise ValueError("total_budget is smaller than the initial training set")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.n_members < 1:
            raise ValueError("n_members must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def planned_iterations(self) -> int:
        if self.iterations is not None:
            return self.iterations
        return math.ceil((self.total_budget - self.initial_train_size) / self.batch_k)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arch"] = self.arch.to_dict()
        return d


@dataclass
class IterationRecord:
    iteration: int
    train_size: int
    selected_idx: list[int]
    test_rmse: float
    test_r2: float
    test_mape: float
    test_max_error: float
    acceptance_accuracy: float
    mean_pool_variance: float


@dataclass
class LearningCurve:
    strategy: str
    records: list[IterationRecord]
    config: dict
    stop_reason: str = "completed"
    scaler: Scaler | None = None
    final_state: PoolState | None = None


def partition(n_samples: int, test_fraction: float, initial_train_size: int, seed: int) -> PoolState:
    """Seeded split: test first, then the initial train set, the rest is pool."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    n_test = int(round(test_fraction * n_samples))
    n_rest = n_samples - n_test
    if n_test < 1 or initial_train_size < 1 or initial_train_size >= n_rest:
        raise ValueError(
            f"cannot carve {n_test} test and {initial_train_size} initial training "
            f"rows out of {n_samples} samples with a non-empty pool"
        )
    perm = np.random.default_rng([seed, 0]).permutation(n_samples)
    return PoolState(
        train_idx=perm[n_test:n_test + initial_train_size].copy(),
        pool_idx=perm[n_test + initial_train_size:].copy(),
        test_idx=perm[:n_test].copy(),
    )


def sample_candidates(pool_idx, M: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """Up to ``M * K`` distinct pool indices drawn uniformly."""
    pool_idx = np.asarray(pool_idx, dtype=np.intp)
    if pool_idx.size == 0:
        raise PoolExhausted("the pool is empty")
    size = min(M * K, pool_idx.size)
    return rng.choice(pool_idx, size=size, replace=False)


def top_k_by_variance(candidates, variances, K: int) -> np.ndarray:
    """The ``K`` candidates with largest variance; ties go to the lower index."""
    candidates = np.asarray(candidates, dtype=np.intp)
    variances = np.asarray(variances, dtype=np.float64)
    order = np.lexsort((candidates, -variances))
    return candidates[order[:K]]


def acquire_top_variance(ensemble: Ensemble, X, candidates, K: int) -> np.ndarray:
    """Score ``candidates`` (rows of the normalized matrix ``X``) by pooled variance."""
    candidates = np.asarray(candidates, dtype=np.intp)
    if candidates.size == 0:
        raise ValueError("no candidates to score")
    _, var = predict_pooled_batch(ensemble, X[candidates])
    return top_k_by_variance(candidates, var, K)


def iteration_seed(seed: int, iteration: int) -> int:
    """Training seed for round ``iteration``; members XOR their index into it."""
    return int(np.random.SeedSequence([seed, iteration]).generate_state(1)[0] >> 1)


def _evaluate(ensemble, scaler, Xn, y, state, iteration, selected, config) -> IterationRecord:
    mu, _ = predict_pooled_batch(ensemble, Xn[state.test_idx])
    pred = scaler.invert_target(mu)
    rep = metrics.metrics_report(pred, y[state.test_idx], config.threshold_pct, config.mape_floor)
    if state.pool_idx.size:
        _, pool_var = predict_pooled_batch(ensemble, Xn[state.pool_idx])
        pool_var_mean = float(np.mean(scaler.invert_variance(pool_var)))
    else:
        pool_var_mean = float("nan")
    return IterationRecord(
        iteration=iteration,
        train_size=int(state.train_idx.size),
        selected_idx=[int(i) for i in selected],
        test_rmse=rep.rmse,
        test_r2=rep.r2,
        test_mape=rep.mape_pct,
        test_max_error=rep.max_error,
        acceptance_accuracy=rep.acceptance_accuracy_pct,
        mean_pool_variance=pool_var_mean,
    )


def validate(n_samples: int, config: ALConfig) -> None:
    """Raise ``ValueError`` if the campaign cannot run on ``n_samples`` rows."""
    n_test = int(round(config.test_fraction * n_samples))
    available = n_samples - n_test
    if n_test < 1 or config.initial_train_size >= available:
        raise ValueError(
            f"{n_samples} samples leave no pool after {n_test} test and "
            f"{config.initial_train_size} initial training rows"
        )
    if config.iterations is not None:
        need = config.initial_train_size + config.iterations * config.batch_k
        if need > available:
            raise ValueError(
                f"{config.iterations} iterations of {config.batch_k} need {need} "
                f"labelled rows but only {available} are outside the test set"
            )


def run_campaign(X, y, config: ALConfig, strategy: str = "top_variance",
                 observer: Callable[[IterationRecord, PoolState], None] | None = None,
                 n_jobs: int = 1):
    """Run one acquisition campaign; returns ``(LearningCurve, Ensemble)``.

    ``X`` holds raw features and ``y`` the surge distance in percent.  The
    scaler is fitted on the initial training rows and kept fixed so
    warm-started members keep a consistent input space.  ``observer`` is
    called with every record and a snapshot of the index sets.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be (n, d) and y of length n")
    validate(X.shape[0], config)

    state = partition(X.shape[0], config.test_fraction, config.initial_train_size, config.seed)
    scaler = fit_scaler(X, y, state.train_idx)
    Xn = scaler.transform_features(X)
    yn = scaler.transform_target(y)
    ref = scaler.fingerprint()

    def fit(ens, iteration):
        cfg = TrainConfig(**{**asdict(config.train_config),
                             "seed": iteration_seed(config.seed, iteration)})
        tr = state.train_idx
        if ens is None or not config.warm_start:
            return train_ensemble(Xn[tr], yn[tr], cfg, config.n_members,
                                  config.arch, ref, n_jobs=n_jobs)
        return retrain_ensemble(ens, Xn[tr], yn[tr], cfg, n_jobs=n_jobs)

    ensemble = fit(None, 0)
    records = [_evaluate(ensemble, scaler, Xn, y, state, 0, [], config)]
    if observer is not None:
        observer(records[-1], state.copy())

    rng = np.random.default_rng([config.seed, 2])
    stop_reason = "completed"
    for it in range(1, config.planned_iterations + 1):
        k = min(config.batch_k, config.total_budget - state.train_idx.size, state.pool_idx.size)
        if state.pool_idx.size == 0:
            stop_reason = "pool exhausted"
            break
        if k <= 0:
            stop_reason = "budget reached"
            break
        if strategy == "top_variance":
            cands = sample_candidates(state.pool_idx, config.candidate_multiplier,
                                      config.batch_k, rng)
            selected = acquire_top_variance(ensemble, Xn, cands, k)
        else:
            selected = rng.choice(state.pool_idx, size=k, replace=False)
        state.move_to_train(selected)
        ensemble = fit(ensemble, it)
        records.append(_evaluate(ensemble, scaler, Xn, y, state, it, selected, config))
        if observer is not None:
            observer(records[-1], state.copy())

    curve = LearningCurve(strategy, records, config.to_dict(), stop_reason, scaler, state)
    return curve, ensemble


def al_loop(X, y, config: ALConfig, **kwargs):
    """Top-variance acquisition campaign."""
    return run_campaign(X, y, config, "top_variance", **kwargs)


def random_baseline_loop(X, y, config: ALConfig, **kwargs):
    """Same campaign with uniformly random acquisition."""
    return run_campaign(X, y, config, "random", **kwargs)
