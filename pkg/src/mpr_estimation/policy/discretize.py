"""State-space quantisation: sample covariance paths, cluster in Frobenius norm."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..channel import ChannelParams
from ..estimator import SystemModel, successor_covariances
from .greedy import StageCost
from .table import SolverConfig

log = logging.getLogger(__name__)


@dataclass
class Discretization:
    centroids: np.ndarray      # (D, n, n)
    pool_size: int
    truncated: bool            # fewer distinct pooled states than requested D
    distortion: float          # mean squared Frobenius distance to centroid


def random_initial(model: SystemModel, rng: np.random.Generator) -> np.ndarray:
    """Random positive-definite start, block diagonal on decoupled models."""
    n = model.n
    scale = 10.0 ** rng.uniform(-1.0, 1.0)
    G = rng.standard_normal((n, n))
    P0 = G @ G.T / n + 0.1 * np.eye(n)
    if model.decoupled is not None:
        mask = np.zeros((n, n), dtype=bool)
        for i in range(model.n_sensors):
            sl = model.block_slice(i)
            mask[sl, sl] = True
        P0 = np.where(mask, P0, 0.0)
    return scale * P0


def sample_paths(model: SystemModel, channel: ChannelParams, cfg: SolverConfig,
                 stage: StageCost | None = None) -> np.ndarray:
    """Predicted covariances visited under random actions, ``(paths * length, n, n)``."""
    stage = stage or StageCost(model, channel, mc_samples=cfg.mc_samples, seed=cfg.seed)
    n_act, n_out = stage.probs.shape
    cum = np.cumsum(stage.probs, axis=1)
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_paths)
    pool = np.empty((cfg.n_paths, cfg.path_length, model.n, model.n))
    for p, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        P = successor_covariances(random_initial(model, rng), model)[0]
        idle = rng.uniform() if cfg.exploration == "mixed" else 0.0
        for k in range(cfg.path_length):
            pool[p, k] = P
            u = 0 if rng.uniform() < idle else rng.integers(n_act)
            g = min(int(np.searchsorted(cum[u], rng.uniform(), side="right")), n_out - 1)
            P = successor_covariances(P, model)[g]
    return pool.reshape(-1, model.n, model.n)


def kmeans_frobenius(X: np.ndarray, k: int, rng: np.random.Generator,
                     max_iter: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm on flattened matrices with k-means++ seeding.

    Returns ``(centers, labels)``; centers are element-wise means, so
    symmetric PSD inputs give symmetric PSD centers.
    """
    m = len(X)
    flat = X.reshape(m, -1)
    sq = (flat ** 2).sum(axis=1)

    def dist2(C):
        d = sq[:, None] - 2.0 * flat @ C.T + (C ** 2).sum(axis=1)[None, :]
        return np.maximum(d, 0.0)

    centers = np.empty((k, flat.shape[1]))
    centers[0] = flat[rng.integers(m)]
    closest = dist2(centers[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(m)
        else:
            idx = rng.choice(m, p=closest / total)
        centers[j] = flat[idx]
        closest = np.minimum(closest, dist2(centers[j:j + 1])[:, 0])

    labels = np.full(m, -1)
    for _ in range(max_iter):
        d = dist2(centers)
        new = np.argmin(d, axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, flat)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        for j in np.flatnonzero(~nonempty):
            # re-seed an empty cluster at the worst-served point
            far = int(np.argmax(d[np.arange(m), labels]))
            centers[j] = flat[far]
            labels[far] = j
    labels = np.argmin(dist2(centers), axis=1)
    return centers.reshape((k,) + X.shape[1:]), labels


def cluster_states(pool: np.ndarray, D: int, rng: np.random.Generator,
                   max_iter: int = 50) -> Discretization:
    unique = np.unique(pool.reshape(len(pool), -1), axis=0).reshape((-1,) + pool.shape[1:])
    if D >= len(unique):
        if D > len(unique):
            log.warning("only %d distinct states pooled, fewer than D=%d",
                        len(unique), D)
        return Discretization(unique, len(pool), D > len(unique), 0.0)
    centers, labels = kmeans_frobenius(pool, D, rng, max_iter)
    err = ((pool - centers[labels]) ** 2).sum(axis=(1, 2)).mean()
    return Discretization(0.5 * (centers + np.swapaxes(centers, 1, 2)),
                          len(pool), False, float(err))


def discretize_states(model: SystemModel, channel: ChannelParams, cfg: SolverConfig,
                      rng: np.random.Generator | None = None,
                      stage: StageCost | None = None) -> Discretization:
    """Quantise the reachable covariances into ``cfg.D`` centroids."""
    pool = sample_paths(model, channel, cfg, stage)
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,)))
    return cluster_states(pool, cfg.D, rng)
