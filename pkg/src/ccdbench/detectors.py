"""Unsupervised detector bank: global RX, robust RX (Tyler + shrinkage),
Local-RX with dual ring windows, and CCD."""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .features import FeatureStack, box_sum, box_count, flatten

DETECTOR_NAMES = ("rx", "rxrob", "lrx", "ccd", "ae", "fuse2", "fusew", "fuse3w")


class InsufficientDataError(ValueError):
    pass


@dataclass
class BackgroundModel:
    mean: np.ndarray
    scatter: np.ndarray
    scatter_kind: str
    _chol: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        sym_err = np.abs(self.scatter - self.scatter.T).max()
        if sym_err > 1e-10:
            raise ValueError("scatter matrix must be symmetric")
        try:
            self._chol = linalg.cho_factor(self.scatter)
        except linalg.LinAlgError as exc:
            raise ValueError("scatter matrix is not positive definite") from exc

    @property
    def dim(self):
        return self.mean.size


def rx_score(x, model: BackgroundModel):
    """Mahalanobis distance (x-mu)' Sigma^-1 (x-mu) via a Cholesky solve."""
    diff = np.atleast_2d(x) - model.mean
    sol = linalg.cho_solve(model._chol, diff.T)
    out = np.einsum("ij,ji->i", diff, sol)
    return out if np.ndim(x) > 1 else float(out[0])


def _shrink(scatter, shrinkage, d):
    # zero-trace scatter (all-identical data) falls back to a unit ridge so
    # scoring stays defined (every score is then 0 anyway)
    scale = np.trace(scatter) / d
    if scale <= 0:
        scale = 1.0
    return scatter + shrinkage * scale * np.eye(d)


def tyler_scatter(centered, shrinkage=0.05, max_iter=30):
    """Tyler fixed point with per-iteration ridge blending and trace
    renormalization to trace = d."""
    n, d = centered.shape
    sigma = np.eye(d)
    for _ in range(max_iter):
        sol = np.linalg.solve(sigma, centered.T)         # (d, n)
        q = np.einsum("ij,ji->i", centered, sol)         # Mahalanobis^2
        q = np.maximum(q, 1e-30)
        sigma = (d / n) * (centered.T / q) @ centered
        if shrinkage > 0:
            sigma = (1.0 - shrinkage) * sigma + shrinkage * (np.trace(sigma) / d) * np.eye(d)
        sigma *= d / np.trace(sigma)
    return sigma


def fit_background(vectors, scatter_kind="sample", shrinkage=0.05, max_iter=30):
    """Fit (mu, Sigma) on background vectors.

    sample: mean + ridge-shrunk sample covariance. tyler: coordinatewise
    median center + regularized Tyler fixed point (trace = d).
    """
    vectors = np.asarray(vectors, dtype=float)
    n, d = vectors.shape
    if n < d + 1:
        raise InsufficientDataError(f"need at least {d + 1} vectors, got {n}")
    if not 0.0 <= shrinkage < 1.0:
        raise ValueError("shrinkage must lie in [0, 1)")
    if scatter_kind == "sample":
        mu = vectors.mean(axis=0)
        cov = np.cov(vectors, rowvar=False, bias=True)
        sigma = _shrink(cov, shrinkage, d)
    elif scatter_kind == "tyler":
        mu = np.median(vectors, axis=0)
        sigma = tyler_scatter(vectors - mu, shrinkage=shrinkage, max_iter=max_iter)
    else:
        raise ValueError(f"unknown scatter kind {scatter_kind!r}")
    sigma = 0.5 * (sigma + sigma.T)
    return BackgroundModel(mean=mu, scatter=sigma, scatter_kind=scatter_kind)


@dataclass
class ScoreMap:
    detector: str
    scores: np.ndarray
    valid_mask: np.ndarray = None
    degenerate: bool = False

    def __post_init__(self):
        if self.valid_mask is None:
            self.valid_mask = np.ones(self.scores.shape, dtype=bool)
        if not np.all(np.isfinite(self.scores[self.valid_mask])):
            raise ValueError("scores must be finite on the valid mask")


def global_rx_map(stack: FeatureStack, scatter_kind="sample", shrinkage=0.05,
                  background_mask=None) -> ScoreMap:
    """RX over the whole stack; the model is fit on all pixels unless a
    background subsample mask is supplied."""
    vectors, _ = flatten(stack)
    fit_vectors = vectors if background_mask is None else flatten(stack, background_mask)[0]
    model = fit_background(fit_vectors, scatter_kind=scatter_kind, shrinkage=shrinkage)
    name = "rxrob" if scatter_kind == "tyler" else "rx"
    scores = rx_score(vectors, model).reshape(stack.shape)
    return ScoreMap(detector=name, scores=scores)


@dataclass(frozen=True)
class LocalRxGeometry:
    outer: int = 21
    guard: int = 9

    def __post_init__(self):
        if self.outer % 2 == 0 or self.guard % 2 == 0:
            raise ValueError("window sizes must be odd")
        if self.guard >= self.outer:
            raise ValueError("guard window must be smaller than the outer window")


def local_rx_map(stack: FeatureStack, geom: LocalRxGeometry = LocalRxGeometry(),
                 scatter_kind="sample", shrinkage=0.05) -> ScoreMap:
    """Sliding dual-ring RX: per-pixel background statistics from the outer
    window minus the guard window, shrunk sample scatter by default."""
    arr = stack.as_array()
    h, w, d = arr.shape
    if h <= geom.outer or w <= geom.outer:
        raise ValueError("scene must be larger than the outer window")

    if scatter_kind == "tyler":
        return _local_rx_tyler(arr, geom, shrinkage)

    n_ring = box_count((h, w), geom.outer) - box_count((h, w), geom.guard)
    sums = np.stack([box_sum(arr[..., i], geom.outer) - box_sum(arr[..., i], geom.guard)
                     for i in range(d)], axis=-1)
    mean = sums / n_ring[..., None]

    second = np.empty((h, w, d, d))
    for i in range(d):
        for j in range(i, d):
            p = arr[..., i] * arr[..., j]
            s = box_sum(p, geom.outer) - box_sum(p, geom.guard)
            second[..., i, j] = s / n_ring
            second[..., j, i] = second[..., i, j]

    cov = second - mean[..., :, None] * mean[..., None, :]
    tr = np.trace(cov, axis1=-2, axis2=-1)
    cov = cov + (shrinkage * tr / d)[..., None, None] * np.eye(d)

    diff = arr - mean
    valid = n_ring >= d + 1
    scores = np.zeros((h, w))
    flat_cov = cov.reshape(-1, d, d)
    flat_diff = diff.reshape(-1, d, 1)
    try:
        sol = np.linalg.solve(flat_cov, flat_diff)
        scores = np.einsum("nij,nij->n", flat_diff, sol).reshape(h, w)
    except np.linalg.LinAlgError:
        # fall back pixel by pixel, marking singular rings invalid
        scores = np.zeros(h * w)
        valid = valid.reshape(-1)
        for idx in range(flat_cov.shape[0]):
            try:
                s = np.linalg.solve(flat_cov[idx], flat_diff[idx])
                scores[idx] = float(flat_diff[idx].T @ s)
            except np.linalg.LinAlgError:
                valid[idx] = False
        scores = scores.reshape(h, w)
        valid = valid.reshape(h, w)
    scores = np.where(valid & np.isfinite(scores), scores, 0.0)
    return ScoreMap(detector="lrx", scores=scores, valid_mask=valid)


def _local_rx_tyler(arr, geom, shrinkage):
    """Per-pixel Tyler variant; loop-based, intended for small tiles."""
    h, w, d = arr.shape
    ho, hg = geom.outer // 2, geom.guard // 2
    scores = np.zeros((h, w))
    valid = np.zeros((h, w), dtype=bool)
    for y in range(h):
        for x in range(w):
            y0, y1 = max(0, y - ho), min(h, y + ho + 1)
            x0, x1 = max(0, x - ho), min(w, x + ho + 1)
            block = arr[y0:y1, x0:x1].reshape(-1, d)
            gy, gx = np.mgrid[y0:y1, x0:x1]
            in_guard = (np.abs(gy - y) <= hg) & (np.abs(gx - x) <= hg)
            ring = block[~in_guard.reshape(-1)]
            if ring.shape[0] < d + 1:
                continue
            try:
                model = fit_background(ring, scatter_kind="tyler", shrinkage=shrinkage)
                scores[y, x] = rx_score(arr[y, x], model)
                valid[y, x] = True
            except (ValueError, linalg.LinAlgError):
                continue
    return ScoreMap(detector="lrx", scores=scores, valid_mask=valid)


def ccd_map(coherence_mag) -> ScoreMap:
    """Decorrelation score 1 - |coherence|."""
    coh = np.asarray(coherence_mag, dtype=float)
    if np.any(coh < 0.0) or np.any(coh > 1.0):
        raise ValueError("coherence magnitudes must lie in [0, 1]")
    return ScoreMap(detector="ccd", scores=1.0 - coh)


def ml_ccd_map(slc):
    """Hook for the maximum-likelihood CCD comparator; not implemented here."""
    raise NotImplementedError("maximum-likelihood CCD statistic is not provided")
