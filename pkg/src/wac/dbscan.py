"""Density-based clustering (DBSCAN) with Euclidean neighborhoods.

Quadratic-time region queries; cluster ids are assigned in first-visited
order over the input, so labeling is deterministic for a fixed input
order.  Noise points get the label -1.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

NOISE = -1
_UNVISITED = -2


@dataclass(frozen=True)
class ClusterConfig:
    eps: float = 0.7
    min_pts: int = 5

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")


def dbscan(points, config: ClusterConfig | None = None) -> np.ndarray:
    """Cluster labels per point (ints, noise = -1).

    A point is a core point when at least ``min_pts`` points (itself
    included) lie within ``eps``; clusters are the transitive closure of
    core-point neighborhoods, and border points join the first cluster
    that reaches them.
    """
    config = config if config is not None else ClusterConfig()
    X = np.asarray(points, dtype=float)
    if X.ndim != 2:
        raise ValueError("points must be an n x d matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite coordinates")
    n = len(X)
    labels = np.full(n, _UNVISITED, dtype=int)
    sq = np.sum(X * X, axis=1)
    eps2 = config.eps * config.eps

    def neighbors(i: int) -> np.ndarray:
        d2 = sq + sq[i] - 2.0 * (X @ X[i])
        return np.nonzero(d2 <= eps2)[0]

    cluster_id = 0
    for i in range(n):
        if labels[i] != _UNVISITED:
            continue
        seed_neighbors = neighbors(i)
        if len(seed_neighbors) < config.min_pts:
            labels[i] = NOISE
            continue
        labels[i] = cluster_id
        queue = deque(int(j) for j in seed_neighbors if j != i)
        while queue:
            j = queue.popleft()
            if labels[j] == NOISE:
                labels[j] = cluster_id  # border point
            if labels[j] != _UNVISITED:
                continue
            labels[j] = cluster_id
            j_neighbors = neighbors(j)
            if len(j_neighbors) >= config.min_pts:
                queue.extend(int(k) for k in j_neighbors if labels[k] == _UNVISITED)
        cluster_id += 1
    return labels
