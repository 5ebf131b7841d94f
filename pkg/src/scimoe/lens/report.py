"""Label-separation statistics for profiles and their embeddings."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np


def cosine_distances(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    u = x / safe[:, None]
    d = 1.0 - u @ u.T
    d[norms == 0, :] = 0.0
    d[:, norms == 0] = 0.0
    np.fill_diagonal(d, 0.0)
    return np.clip(d, 0.0, 2.0)


def euclidean_distances(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def silhouette(dist: np.ndarray, labels: Sequence[str]) -> float:
    """Mean silhouette coefficient from a precomputed distance matrix.

    Points in singleton clusters score 0, as do points with a(i) = b(i) = 0.
    """
    labels = np.asarray(labels)
    names = sorted(set(labels.tolist()))
    if len(names) < 2:
        raise ValueError("silhouette needs at least two labels")
    n = len(labels)
    member = np.stack([labels == name for name in names])  # (L, n)
    sizes = member.sum(axis=1)
    sums = dist @ member.T.astype(np.float64)  # (n, L)
    own = np.array([names.index(lab) for lab in labels.tolist()])
    own_size = sizes[own]
    a = np.where(own_size > 1, sums[np.arange(n), own] / np.maximum(own_size - 1, 1), 0.0)
    means = sums / sizes[None, :]
    means[np.arange(n), own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((own_size > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


@dataclass
class ClusterReport:
    labels: list[str]
    counts: dict[str, int]
    intra: dict[str, float]
    pair_distance: dict[str, float] = field(default_factory=dict)  # "a|b" -> mean cosine distance
    mean_intra: float = 0.0
    mean_inter: float = 0.0
    silhouette: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def cluster_report(profiles: np.ndarray, labels: Sequence[str], embedding: np.ndarray | None = None) -> ClusterReport:
    """Cosine separation of raw profiles, plus silhouette of the embedding if given.

    Intra-label means exclude self-pairs. Without an embedding the silhouette
    is computed on the raw profiles with cosine distance.
    """
    profiles = np.asarray(profiles, dtype=np.float64)
    labels = [str(x) for x in labels]
    if len(labels) != len(profiles):
        raise ValueError("one label per profile required")
    names = sorted(set(labels))
    counts = {name: labels.count(name) for name in names}
    if len(names) < 2 or min(counts.values()) < 2:
        raise ValueError("need at least 2 labels with at least 2 points each")
    lab = np.asarray(labels)
    dist = cosine_distances(profiles)
    same = lab[:, None] == lab[None, :]
    off_diag = ~np.eye(len(lab), dtype=bool)

    intra = {}
    for name in names:
        idx = lab == name
        block = dist[np.ix_(idx, idx)]
        m = idx.sum()
        intra[name] = float(block.sum() / (m * (m - 1)))
    pairs = {}
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            pairs[f"{a}|{b}"] = float(dist[np.ix_(lab == a, lab == b)].mean())
    mean_intra = float(dist[same & off_diag].mean())
    mean_inter = float(dist[~same].mean())
    if embedding is not None:
        sil = silhouette(euclidean_distances(np.asarray(embedding, dtype=np.float64)), labels)
    else:
        sil = silhouette(dist, labels)
    return ClusterReport(names, counts, intra, pairs, mean_intra, mean_inter, sil)
