"""Exact t-SNE (no tree approximation), deterministic for a given seed."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class CalibrationError(ValueError):
    pass


@dataclass
class EmbeddingResult:
    coords: np.ndarray
    kl_history: list[float] = field(default_factory=list)
    seed: int = 0
    perplexity: float = 30.0
    exaggeration_iters: int = 250


def squared_distances(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _row_entropy(d: np.ndarray, beta: float):
    p = np.exp(-beta * d)
    s = p.sum()
    p /= s
    h = beta * float(np.sum(d * p)) + math.log(s)
    return h, p


def conditional_affinities(x: np.ndarray, perplexity: float, tol: float = 1e-5, max_iter: int = 200) -> np.ndarray:
    """Row-stochastic Gaussian affinities, each row bisected to hit ``perplexity``."""
    n = x.shape[0]
    dist = squared_distances(np.asarray(x, dtype=np.float64))
    target = math.log(perplexity)
    P = np.zeros((n, n))
    bad = []
    for i in range(n):
        d = np.delete(dist[i], i)
        # shifting by the nearest distance leaves the row distribution unchanged
        dmin = d.min()
        d = d - dmin
        ties = d <= 1e-12 * max(1.0, dmin)
        n_ties = int(ties.sum())
        # entropy can go no lower than log(#tied nearest neighbours)
        if target <= math.log(n_ties) + 1e-9:
            if dmin == 0.0 and target < math.log(n_ties) - 1e-9:
                bad.append(i)
                continue
            row = ties / n_ties
        else:
            beta, lo, hi = 1.0 / max(d.mean(), 1e-300), 0.0, math.inf
            for _ in range(max_iter):
                h, row = _row_entropy(d, beta)
                diff = h - target
                if abs(diff) < tol:
                    break
                if diff > 0:
                    lo = beta
                    beta = beta * 2.0 if hi == math.inf else 0.5 * (beta + hi)
                else:
                    hi = beta
                    beta = 0.5 * (beta + lo)
        P[i, np.arange(n) != i] = row
    if bad:
        raise CalibrationError(f"rows {bad} have too many exact duplicates for perplexity {perplexity}")
    return P


def joint_affinities(x: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetric, zero-diagonal affinity matrix summing to 1."""
    P = conditional_affinities(x, perplexity)
    P = P + P.T
    return P / P.sum()


def _kl(P: np.ndarray, Q: np.ndarray) -> float:
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / np.maximum(Q[mask], 1e-300))))


def _pca_init(x: np.ndarray, dims: int, rng: np.random.Generator) -> np.ndarray:
    xc = x - x.mean(axis=0)
    u, s, vt = np.linalg.svd(xc, full_matrices=False)
    y = np.zeros((x.shape[0], dims))
    r = min(dims, len(s))
    y[:, :r] = u[:, :r] * s[:r]
    for j in range(r):
        col = y[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            y[:, j] = -col
    scale = y[:, 0].std()
    if scale > 1e-12:
        y = y / scale * 1e-4
    # rank-deficient directions get seeded jitter so points can separate
    for j in range(dims):
        if y[:, j].std() < 1e-12:
            y[:, j] = rng.normal(0.0, 1e-4, x.shape[0])
    return y


def default_perplexity(n: int, perplexity: float = 30.0) -> float:
    return min(perplexity, (n - 1) / 3.0)


def tsne_reduce(
    x: np.ndarray,
    perplexity: float | None = None,
    iterations: int = 1000,
    seed: int = 0,
    dims: int = 3,
    early_exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
    learning_rate: float | None = None,
    init: str = "pca",
    adaptive_gains: bool = False,
) -> EmbeddingResult:
    """Embed rows of ``x`` into ``dims`` dimensions.

    ``perplexity=None`` means 30 capped at (n-1)/3. The learning rate
    defaults to n/12; momentum is 0.5 during early exaggeration, 0.8 after.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 4:
        raise ValueError(f"t-SNE needs at least 4 points, got {n}")
    if perplexity is None:
        perplexity = default_perplexity(n)
    if perplexity > (n - 1) / 3.0 + 1e-12 or perplexity < 1.0:
        raise ValueError(f"perplexity {perplexity} must lie in [1, (n-1)/3 = {(n - 1) / 3:.3g}]")
    rng = np.random.default_rng(seed)
    P = joint_affinities(x, perplexity)
    if init == "pca":
        y = _pca_init(x, dims, rng)
    elif init == "random":
        y = rng.normal(0.0, 1e-4, (n, dims))
    else:
        raise ValueError(f"unknown init {init!r}")
    eta = learning_rate if learning_rate is not None else n / 12.0
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    history = []
    for it in range(iterations):
        exaggerate = it < exaggeration_iters
        momentum = 0.5 if exaggerate else 0.8
        Pe = P * early_exaggeration if exaggerate else P
        num = 1.0 / (1.0 + squared_distances(y))
        np.fill_diagonal(num, 0.0)
        Q = num / num.sum()
        W = (Pe - Q) * num
        grad = 4.0 * (W.sum(axis=1)[:, None] * y - W @ y)
        if adaptive_gains:
            same = (grad > 0) == (update > 0)
            gains = np.where(same, gains * 0.8, gains + 0.2)
            np.maximum(gains, 0.01, out=gains)
        update = momentum * update - eta * gains * grad
        y = y + update
        y = y - y.mean(axis=0)
        num = 1.0 / (1.0 + squared_distances(y))
        np.fill_diagonal(num, 0.0)
        history.append(_kl(P, num / num.sum()))
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("t-SNE diverged")
    return EmbeddingResult(y, history, seed, perplexity, min(exaggeration_iters, iterations))
