"""Deterministic weighted k-means with k-means++ seeding.

Implemented here rather than taken from a library because the pipeline needs
bitwise reproducibility (cluster centers feed the solver, whose serialized
outputs are compared byte-for-byte) and graceful handling of heavily
duplicated inputs: idle cores contribute identical all-zero samples, so the
pooled set may hold fewer distinct locations than requested centers.

Inputs are canonicalized by merging exact duplicate points (weights summed,
rows lexicographically sorted), which makes the result invariant to input
permutation for a fixed seed.
"""

from __future__ import annotations

import numpy as np

_ASSIGN_CHUNK = 4096


def _pairwise_sq(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = (
        (points * points).sum(axis=1)[:, None]
        + (centers * centers).sum(axis=1)[None, :]
        - 2.0 * (points @ centers.T)
    )
    return np.maximum(d2, 0.0)


def _assign(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    labels = np.empty(len(points), dtype=np.intp)
    for lo in range(0, len(points), _ASSIGN_CHUNK):
        hi = min(lo + _ASSIGN_CHUNK, len(points))
        labels[lo:hi] = _pairwise_sq(points[lo:hi], centers).argmin(axis=1)
    return labels


def _seed_centers(points: np.ndarray, weights: np.ndarray, k: int,
                  rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((k, points.shape[1]))
    prob = weights / weights.sum()
    centers[0] = points[rng.choice(len(points), p=prob)]
    d2 = _pairwise_sq(points, centers[:1])[:, 0]
    for c in range(1, k):
        mass = weights * d2
        total = mass.sum()
        if total <= 0.0:
            # every point coincides with an existing center; repeat it
            centers[c] = centers[0]
            continue
        centers[c] = points[rng.choice(len(points), p=mass / total)]
        d2 = np.minimum(d2, _pairwise_sq(points, centers[c:c + 1])[:, 0])
    return centers


def weighted_kmeans(points, weights, k: int, seed: int = 0,
                    max_iter: int = 100, tol: float = 1e-12):
    """Cluster a weighted point cloud into ``k`` centers.

    Returns ``(centers, cluster_weights)`` with ``centers`` of shape (k, d)
    in seeding order and ``cluster_weights`` the summed input weight per
    cluster (zero for clusters that end up empty, whose centers are repeats).
    """
    pts = np.asarray(points, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if pts.ndim != 2 or w.ndim != 1 or len(pts) != len(w):
        raise ValueError("points must be (n, d) with one weight per point")
    if np.any(w < 0.0) or w.sum() <= 0.0:
        raise ValueError("weights must be nonnegative with positive total")
    if not 1 <= k <= len(pts):
        raise ValueError(f"k={k} must be between 1 and the point count {len(pts)}")

    uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
    uw = np.bincount(inverse, weights=w, minlength=len(uniq))
    rng = np.random.default_rng(seed)
    k_eff = min(k, len(uniq))
    centers = _seed_centers(uniq, uw, k_eff, rng)

    labels = _assign(uniq, centers)
    for _ in range(max_iter):
        moved = 0.0
        for c in range(k_eff):
            mask = labels == c
            mass = uw[mask].sum()
            if mass <= 0.0:
                continue
            target = (uniq[mask] * uw[mask, None]).sum(axis=0) / mass
            moved = max(moved, float(np.abs(target - centers[c]).max()))
            centers[c] = target
        new_labels = _assign(uniq, centers)
        if moved <= tol and np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels

    if k_eff < k:
        centers = np.vstack([centers, np.repeat(centers[:1], k - k_eff, axis=0)])
    cluster_weights = np.bincount(labels, weights=uw, minlength=k)
    return centers, cluster_weights
