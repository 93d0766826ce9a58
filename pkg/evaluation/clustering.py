"""Class-discovery quality of instance embeddings."""
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.cluster import KMeans
from sklearn.metrics import normalized_mutual_info_score
from sklearn.metrics.cluster import contingency_matrix

from utils import logger
from utils.errors import DegenerateInput


@dataclass(frozen=True)
class ClusteringScore:
    nmi: float
    purity: float
    k: int
    num_instances: int
    degenerate: bool = False


def purity_score(labels: Sequence[int], clusters: Sequence[int]) -> float:
    """Fraction of instances whose cluster's majority label equals their own."""
    table = contingency_matrix(labels, clusters)
    return float(table.max(axis=0).sum() / table.sum())


def cluster_embeddings(embeddings: np.ndarray, k: int, seed: int = 0, n_init: int = 10) -> np.ndarray:
    """k-means assignments with a fixed seed and n_init restarts."""
    model = KMeans(n_clusters=k, n_init=n_init, random_state=seed)
    return model.fit_predict(np.asarray(embeddings, dtype=np.float64))


def clustering_quality(embeddings: np.ndarray, labels: Sequence[int], k: int, seed: int = 0,
                       n_init: int = 10, strict: bool = False) -> ClusteringScore:
    """
    NMI and purity of k-means clusters against hidden category labels.

    Args:
        embeddings: (N, D) instance embeddings
        labels: N hidden category ids
        k: Number of clusters
        seed: k-means seed
        n_init: Number of k-means restarts
        strict: Raise DegenerateInput for identical embeddings instead of reporting NMI 0

    Returns:
        ClusteringScore
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    n = embeddings.shape[0]
    if n != labels.shape[0]:
        raise ValueError(f"{n} embeddings but {labels.shape[0]} labels")
    if k < 1 or n < k:
        raise DegenerateInput(f"Need at least k={k} instances, got {n}")

    if np.allclose(embeddings, embeddings[0]):
        if strict:
            raise DegenerateInput("All embeddings are identical")
        logger.warning(f"All {n} embeddings are identical; reporting NMI 0")
        majority = np.unique(labels, return_counts=True)[1].max()
        return ClusteringScore(nmi=0.0, purity=float(majority / n), k=k, num_instances=n, degenerate=True)

    clusters = cluster_embeddings(embeddings, k, seed=seed, n_init=n_init)
    nmi = float(normalized_mutual_info_score(labels, clusters))
    return ClusteringScore(
        nmi=min(max(nmi, 0.0), 1.0),
        purity=purity_score(labels, clusters),
        k=k,
        num_instances=n,
    )


def estimate_k_elbow(embeddings: np.ndarray, k_max: int, seed: int = 0, n_init: int = 10) -> int:
    """
    Experimental: choose k at the largest second difference of k-means inertia.

    Args:
        embeddings: (N, D) embeddings
        k_max: Largest k tried (capped at N)
        seed: k-means seed
        n_init: Restarts per k

    Returns:
        Estimated cluster count
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    k_max = min(k_max, embeddings.shape[0])
    if k_max < 3:
        return max(k_max, 1)
    inertia = [
        KMeans(n_clusters=k, n_init=n_init, random_state=seed).fit(embeddings).inertia_
        for k in range(1, k_max + 1)
    ]
    bends = np.diff(inertia, n=2)
    return int(np.argmax(bends)) + 2
