"""Deep ensemble of heteroscedastic networks with mixture-moment pooling."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .nnet import (
    DEFAULT_VARIANCE_FLOOR,
    Architecture,
    GaussianPrediction,
    NetworkParams,
    TrainConfig,
    forward,
    init_network,
    predict_batch,
    train,
)


@dataclass
class Ensemble:
    members: list[NetworkParams]
    member_seeds: list[int]
    scaler_ref: str = ""
    variance_floor: float = DEFAULT_VARIANCE_FLOOR

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        if len(self.member_seeds) != len(self.members):
            raise ValueError("one seed per member is required")
        if len(set(self.member_seeds)) != len(self.member_seeds):
            raise ValueError("member seeds must be pairwise distinct")
        arch = self.members[0].arch
        if any(m.arch != arch for m in self.members):
            raise ValueError("all members must share one architecture")

    @property
    def arch(self) -> Architecture:
        return self.members[0].arch

    def __len__(self):
        return len(self.members)


def member_seed(seed: int, m: int) -> int:
    return seed ^ m


def _fit_members(starts, X, y, config, seeds, n_jobs):
    def job(i):
        cfg = replace(config, seed=seeds[i])
        return train(starts[i], X, y, cfg)[0]

    if n_jobs > 1 and len(starts) > 1:
        # the compiled kernels release the GIL for a whole epoch
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(job, range(len(starts))))
    return [job(i) for i in range(len(starts))]


def train_ensemble(X, y, config: TrainConfig, n_members: int = 5,
                   arch: Architecture | None = None, scaler_ref: str = "",
                   n_jobs: int = 1) -> Ensemble:
    """Initialize and train ``n_members`` networks on the same data.

    Member ``m`` is initialized and shuffled with seed ``config.seed ^ m``;
    members see the full training set in different orders.
    """
    if n_members < 1:
        raise ValueError("n_members must be at least 1")
    arch = arch or Architecture()
    seeds = [member_seed(config.seed, m) for m in range(n_members)]
    starts = [init_network(arch, s) for s in seeds]
    members = _fit_members(starts, X, y, config, seeds, n_jobs)
    return Ensemble(members, seeds, scaler_ref, config.variance_floor)


def retrain_ensemble(ensemble: Ensemble, X, y, config: TrainConfig,
                     n_jobs: int = 1) -> Ensemble:
    """Continue training every member from its current weights.

    Shuffle seeds are ``config.seed ^ m``; the recorded member seeds (those
    used for initialization) are kept.
    """
    seeds = [member_seed(config.seed, m) for m in range(len(ensemble))]
    members = _fit_members(ensemble.members, X, y, config, seeds, n_jobs)
    return Ensemble(members, list(ensemble.member_seeds), ensemble.scaler_ref,
                    config.variance_floor)


def predict_members(ensemble: Ensemble, x) -> list[GaussianPrediction]:
    return [forward(m, x, ensemble.variance_floor) for m in ensemble.members]


def pool_moments(means, variances):
    """Moments of a uniform Gaussian mixture along axis 0.

    ``means`` and ``variances`` have shape ``(M, ...)``.  Returns the mixture
    mean and variance ``mean(var + mu**2) - mu_bar**2``, evaluated as
    mean aleatoric variance plus the population variance of the means to
    avoid cancellation.
    """
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    mu = means.mean(axis=0)
    spread = ((means - mu) ** 2).mean(axis=0)
    return mu, variances.mean(axis=0) + spread


def pool_gaussians(preds: list[GaussianPrediction]) -> GaussianPrediction:
    if not preds:
        raise ValueError("nothing to pool")
    mu, var = pool_moments([p.mean for p in preds], [p.variance for p in preds])
    return GaussianPrediction(float(mu), float(var))


def predict_pooled(ensemble: Ensemble, x) -> GaussianPrediction:
    return pool_gaussians(predict_members(ensemble, x))


def predict_members_batch(ensemble: Ensemble, X):
    """Per-member predictions on many inputs, each of shape ``(M, n)``."""
    outs = [predict_batch(m, X, ensemble.variance_floor) for m in ensemble.members]
    return np.stack([o[0] for o in outs]), np.stack([o[1] for o in outs])


def predict_pooled_batch(ensemble: Ensemble, X):
    """Pooled ``(means, variances)`` on many inputs."""
    return pool_moments(*predict_members_batch(ensemble, X))
