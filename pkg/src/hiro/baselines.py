"""Comparison clusterings for hierarchy-quality experiments."""
from __future__ import annotations

import numpy as np
from sklearn.cluster import KMeans


def recursive_kmeans(
    embeddings: np.ndarray,
    k: int,
    depth: int,
    seed: int = 0,
) -> np.ndarray:
    """Hierarchical paths via k-means on residuals.

    Level 1 clusters the embeddings; each deeper level clusters the
    residuals left after subtracting the assigned centroids of the level
    above. Returns an (n, depth) array of cluster ids per level.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    n = X.shape[0]
    paths = np.zeros((n, depth), dtype=np.int64)
    residual = X.copy()
    for d in range(depth):
        km = KMeans(n_clusters=min(k, n), n_init=10, random_state=seed + d)
        labels = km.fit_predict(residual)
        paths[:, d] = labels
        residual = residual - km.cluster_centers_[labels]
    return paths
