"""Feature-space analysis: exact t-SNE to 2-D and per-class robust
elliptic envelopes for outlier flagging.

The t-SNE is the exact O(n^2) variant: per-point Gaussian bandwidths found
by bisection to match the target perplexity, symmetrised affinities, a
Student-t low-dimensional kernel, and momentum gradient descent with early
exaggeration. Intended for test-fold scale (n up to a few thousand).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod


class TooFewPoints(ValueError):
    pass


class MissingEnvelope(KeyError):
    pass


# ----------------------------------------------------------------------- tsne

def _pairwise_sq_dists(X: np.ndarray) -> np.ndarray:
    s = (X * X).sum(axis=1)
    d2 = s[:, None] + s[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def _entropy_and_probs(d2_row: np.ndarray, beta: float):
    p = np.exp(-d2_row * beta)
    sum_p = p.sum()
    if sum_p <= 0:
        return 0.0, np.zeros_like(p)
    h = math.log(sum_p) + beta * float((d2_row * p).sum()) / sum_p
    return h, p / sum_p


def _conditional_probs(d2: np.ndarray, perplexity: float, tol: float = 1e-5,
                       max_iter: int = 64) -> np.ndarray:
    """Bisection on per-point precision so each row's entropy matches
    log(perplexity) within tol."""
    n = d2.shape[0]
    target = math.log(perplexity)
    P = np.zeros((n, n))
    idx = np.arange(n)
    for i in range(n):
        row = d2[i, idx != i]
        beta, lo, hi = 1.0, 0.0, math.inf
        h, p = _entropy_and_probs(row, beta)
        for _ in range(max_iter):
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == math.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
            h, p = _entropy_and_probs(row, beta)
        P[i, idx != i] = p
    return P


def _kl_divergence(P: np.ndarray, Q: np.ndarray) -> float:
    mask = P > 0
    return float((P[mask] * np.log(P[mask] / Q[mask])).sum())


@dataclass
class TsneResult:
    coords: np.ndarray
    perplexity: float
    kl_history: list[float] = field(default_factory=list)   # (iter, kl) pairs
    kl_final: float = 0.0


def tsne(X, perplexity: float = 50.0, early_exaggeration: float = 30.0,
         seed: int = 0, n_iter: int = 1000, exaggeration_iters: int = 250,
         learning_rate: float = 200.0) -> TsneResult:
    """Project rows of X to 2-D. Deterministic given the seed.

    When n <= 3 * perplexity the perplexity is reduced to (n - 1) / 3 with a
    warning. Momentum switches 0.5 -> 0.8 when exaggeration ends; adaptive
    per-coordinate gains follow the reference descent schedule.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if n < 8:
        raise TooFewPoints(f"need at least 8 points, got {n}")
    if n <= 3 * perplexity:
        new_p = max(2.0, (n - 1) / 3.0)
        warnings.warn(f"perplexity {perplexity} too large for n={n}; "
                      f"using {new_p:.1f}")
        perplexity = new_p

    d2 = _pairwise_sq_dists(X)
    cond = _conditional_probs(d2, perplexity)
    P = (cond + cond.T) / (2.0 * n)
    P = np.maximum(P, 1e-12)

    rng = rngmod.substream(seed, "tsne")
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(Y)
    gains = np.ones_like(Y)
    min_gain = 0.01

    P_run = P * early_exaggeration
    momentum = 0.5
    kl_history = []
    kl_final = math.nan
    for it in range(n_iter):
        if it == exaggeration_iters:
            P_run = P
            momentum = 0.8
        dy2 = _pairwise_sq_dists(Y)
        num = 1.0 / (1.0 + dy2)
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)

        PQ = (P_run - Q) * num
        grad = 4.0 * ((np.diag(PQ.sum(axis=1)) - PQ) @ Y)

        dir_flip = np.sign(grad) != np.sign(velocity)
        gains = np.where(dir_flip, gains + 0.2, gains * 0.8)
        gains = np.maximum(gains, min_gain)
        velocity = momentum * velocity - learning_rate * gains * grad
        Y = Y + velocity
        Y = Y - Y.mean(axis=0)

        if it >= exaggeration_iters and (it - exaggeration_iters) % 50 == 0:
            kl_history.append((it, _kl_divergence(P, Q)))
    dy2 = _pairwise_sq_dists(Y)
    num = 1.0 / (1.0 + dy2)
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), 1e-12)
    kl_final = _kl_divergence(P, Q)
    return TsneResult(coords=Y, perplexity=perplexity,
                      kl_history=kl_history, kl_final=kl_final)


# ------------------------------------------------------------------ envelopes

def _chi2_2_quantile(q: float) -> float:
    """chi-squared(2 dof) quantile: survival is exp(-x/2)."""
    return -2.0 * math.log(1.0 - q)


def _chi2_4_cdf(x: float) -> float:
    return 1.0 - math.exp(-x / 2.0) * (1.0 + x / 2.0)


@dataclass
class Envelope:
    class_id: int
    location: np.ndarray          # (2,)
    scatter: np.ndarray           # (2,2) symmetric positive definite
    threshold: float              # squared Mahalanobis cutoff
    contamination: float

    def mahalanobis_sq(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64)) - self.location
        inv = np.linalg.inv(self.scatter)
        return np.einsum("ij,jk,ik->i", pts, inv, pts)


def _estimate(points: np.ndarray):
    loc = points.mean(axis=0)
    centred = points - loc
    cov = centred.T @ centred / len(points)
    return loc, cov


def _regularise(cov: np.ndarray) -> np.ndarray:
    tr = np.trace(cov)
    cov = cov + 1e-6 * tr * np.eye(2)
    # fully degenerate clouds (all points identical) need an absolute floor
    if np.linalg.det(cov) <= 0 or not np.isfinite(np.linalg.det(cov)):
        cov = cov + 1e-12 * np.eye(2)
    return cov


def fit_envelope(points, class_id: int = 0, contamination: float = 0.05) -> Envelope:
    """Robust location/scatter by iterative trimming.

    Fit mean/covariance, drop the contamination fraction with the largest
    Mahalanobis distances, refit; two trimming rounds. The trimmed scatter
    is rescaled by the Gaussian consistency factor so the chi-squared
    threshold flags about the contamination fraction on clean data.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (n, 2)")
    if len(pts) < 10:
        raise TooFewPoints(f"need >= 10 points per class, got {len(pts)}")

    keep = pts
    loc, cov = _estimate(keep)
    cov = _regularise(cov)
    for _ in range(2):
        inv = np.linalg.inv(cov)
        centred = pts - loc
        d2 = np.einsum("ij,jk,ik->i", centred, inv, centred)
        n_keep = max(3, int(math.ceil((1.0 - contamination) * len(pts))))
        keep = pts[np.argsort(d2, kind="stable")[:n_keep]]
        loc, cov = _estimate(keep)
        cov = _regularise(cov)

    q = _chi2_2_quantile(1.0 - contamination)
    consistency = (1.0 - contamination) / max(_chi2_4_cdf(q), 1e-12)
    cov = cov * consistency
    return Envelope(class_id=class_id, location=loc, scatter=cov,
                    threshold=q, contamination=contamination)


@dataclass
class OutlierRecord:
    index: int
    class_id: int
    distance: float               # Mahalanobis distance (not squared)


def flag_outliers(coords, labels, envelopes: dict[int, Envelope]) -> list[OutlierRecord]:
    """Samples beyond their class threshold, sorted by distance descending."""
    coords = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    for c in np.unique(labels):
        if int(c) not in envelopes:
            raise MissingEnvelope(f"no envelope fitted for class {int(c)}")
    out = []
    for c in np.unique(labels):
        env = envelopes[int(c)]
        idx = np.nonzero(labels == c)[0]
        d2 = env.mahalanobis_sq(coords[idx])
        for i, dd in zip(idx, d2):
            if dd > env.threshold:
                out.append(OutlierRecord(index=int(i), class_id=int(c),
                                         distance=float(math.sqrt(dd))))
    out.sort(key=lambda r: -r.distance)
    return out
