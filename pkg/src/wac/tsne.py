"""Exact (quadratic) t-distributed stochastic neighbor embedding.

Per-point Gaussian bandwidths are calibrated by bisection so each
conditional distribution hits the target perplexity; the 2-D map is
fit by momentum gradient descent on the KL divergence, with early
exaggeration of the input affinities.  Suitable for the few hundred
points this project clusters; use a tree-based variant beyond that.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_P_FLOOR = 1e-12


class TsneError(Exception):
    pass


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    initial_momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch_iter: int = 250
    seed: int = 0
    calibration_tol: float = 1e-4
    max_bisection_steps: int = 200


@dataclass(eq=False)
class TsneResult:
    coords: np.ndarray
    kl_initial: float
    kl_final: float
    calibration_residuals: np.ndarray


def _squared_distances(X: np.ndarray) -> np.ndarray:
    sq = np.sum(X * X, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def _row_perplexity(d2_row: np.ndarray, beta: float):
    """Conditional distribution at precision beta and its perplexity."""
    logits = -d2_row * beta
    logits -= logits.max()
    p = np.exp(logits)
    total = p.sum()
    p /= total
    nonzero = p > 0
    entropy = -np.sum(p[nonzero] * np.log(p[nonzero]))
    return p, float(np.exp(entropy))


def calibrate_row(d2_row: np.ndarray, perplexity: float, tol: float, max_steps: int):
    """Bisection on beta until the row perplexity is within tol of target."""
    beta, lo, hi = 1.0, 0.0, np.inf
    p, perp = _row_perplexity(d2_row, beta)
    for _ in range(max_steps):
        if abs(perp - perplexity) < tol:
            break
        if perp > perplexity:
            lo = beta
            beta = beta * 2.0 if hi == np.inf else (lo + hi) / 2.0
        else:
            hi = beta
            beta = (lo + hi) / 2.0
        p, perp = _row_perplexity(d2_row, beta)
    return p, abs(perp - perplexity)


def joint_affinities(X: np.ndarray, config: TsneConfig):
    """Symmetrized input affinities P and per-point calibration residuals."""
    n = len(X)
    if config.perplexity >= n - 1:
        raise TsneError(
            f"perplexity {config.perplexity} is unreachable with {n} points "
            f"(needs perplexity < n - 1)"
        )
    if config.perplexity <= 1:
        raise TsneError("perplexity must be > 1")
    d2 = _squared_distances(X)
    cond = np.zeros((n, n))
    residuals = np.zeros(n)
    mask = ~np.eye(n, dtype=bool)
    for i in range(n):
        p_row, residuals[i] = calibrate_row(
            d2[i][mask[i]], config.perplexity, config.calibration_tol,
            config.max_bisection_steps,
        )
        cond[i][mask[i]] = p_row
    P = (cond + cond.T) / (2.0 * n)
    return np.maximum(P, _P_FLOOR), residuals


def _low_dim_affinities(Y: np.ndarray):
    d2 = _squared_distances(Y)
    w = 1.0 / (1.0 + d2)
    np.fill_diagonal(w, 0.0)
    Q = w / np.sum(w)
    return np.maximum(Q, _P_FLOOR), w


def _kl(P: np.ndarray, Q: np.ndarray) -> float:
    mask = ~np.eye(len(P), dtype=bool)
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def tsne(X, config: TsneConfig | None = None) -> TsneResult:
    """Map n x d inputs to n x 2 coordinates; deterministic given the seed."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise TsneError("input must be a 2-D matrix")
    if not np.all(np.isfinite(X)):
        raise TsneError("non-finite values in t-SNE input")
    config = config if config is not None else TsneConfig()
    n = len(X)
    P, residuals = joint_affinities(X, config)

    rng = np.random.default_rng(config.seed)
    Y = rng.normal(scale=1e-4, size=(n, 2))
    velocity = np.zeros_like(Y)

    Q0, _ = _low_dim_affinities(Y)
    kl_initial = _kl(P, Q0)

    for it in range(config.iterations):
        exaggerate = it < config.exaggeration_iters
        P_eff = P * config.early_exaggeration if exaggerate else P
        Q, w = _low_dim_affinities(Y)
        # grad_i = 4 * sum_j (p_ij - q_ij) (y_i - y_j) / (1 + |y_i - y_j|^2)
        pq_w = (P_eff - Q) * w
        grad = 4.0 * (np.diag(pq_w.sum(axis=1)) - pq_w) @ Y
        momentum = (
            config.initial_momentum
            if it < config.momentum_switch_iter
            else config.final_momentum
        )
        velocity = momentum * velocity - config.learning_rate * grad
        Y = Y + velocity
        Y = Y - Y.mean(axis=0)

    Q_final, _ = _low_dim_affinities(Y)
    return TsneResult(
        coords=Y,
        kl_initial=kl_initial,
        kl_final=_kl(P, Q_final),
        calibration_residuals=residuals,
    )
