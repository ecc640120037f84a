"""Physics-aware feature stack: log-intensities, log-ratio, windowed texture
statistics, incidence angle and sample coherence magnitude."""

from dataclasses import dataclass

import numpy as np

from .slc import SlcPair, multilook_intensity

PLANE_NAMES = ("log_I1", "log_I2", "log_ratio", "texture_mean",
               "texture_var", "incidence", "coherence_mag")


def box_sum(arr, window):
    """Moving sum over a window x window box, truncated at the edges."""
    half = window // 2
    out = arr
    for axis in (0, 1):
        csum = np.cumsum(out, axis=axis)
        n = out.shape[axis]
        idx_hi = np.minimum(np.arange(n) + half, n - 1)
        idx_lo = np.arange(n) - half - 1
        hi = np.take(csum, idx_hi, axis=axis)
        lo = np.where(
            (idx_lo >= 0).reshape([-1, 1] if axis == 0 else [1, -1]),
            np.take(csum, np.maximum(idx_lo, 0), axis=axis), 0.0)
        out = hi - lo
    return out


def box_count(shape, window):
    """Per-pixel number of in-raster samples of the truncated box."""
    return box_sum(np.ones(shape), window)


def sample_coherence(slc: SlcPair, coh_window: int = 7) -> np.ndarray:
    """Sample coherence magnitude with sums pooled over the boxcar and looks.

    Edge pixels use the truncated window; a zero denominator yields 0.
    """
    if coh_window < 3 or coh_window % 2 == 0:
        raise ValueError("coh_window must be odd and >= 3")
    num = np.zeros(slc.s1.shape[1:], dtype=complex)
    d1 = np.zeros(slc.s1.shape[1:])
    d2 = np.zeros(slc.s1.shape[1:])
    for look in range(slc.looks):
        num += box_sum(slc.s1[look] * np.conj(slc.s2[look]), coh_window)
        d1 += box_sum(np.abs(slc.s1[look]) ** 2, coh_window)
        d2 += box_sum(np.abs(slc.s2[look]) ** 2, coh_window)
    den = np.sqrt(d1 * d2)
    mag = np.zeros_like(d1)
    np.divide(np.abs(num), den, out=mag, where=den > 0)
    return np.clip(mag, 0.0, 1.0)


@dataclass
class FeatureStack:
    planes: dict            # name -> (H, W) raster, in PLANE_NAMES order
    epsilon: float
    window: int
    coh_window: int

    def __post_init__(self):
        shapes = {p.shape for p in self.planes.values()}
        if len(shapes) != 1:
            raise ValueError("feature planes must share dimensions")

    @property
    def shape(self):
        return next(iter(self.planes.values())).shape

    @property
    def names(self):
        return tuple(self.planes.keys())

    def as_array(self) -> np.ndarray:
        """(H, W, d) view of the stack."""
        return np.stack(list(self.planes.values()), axis=-1)


def moving_mean_var(img, window):
    """Truncated-window moving mean and variance."""
    n = box_count(img.shape, window)
    mean = box_sum(img, window) / n
    var = box_sum(img ** 2, window) / n - mean ** 2
    return mean, np.maximum(var, 0.0)


def build_feature_stack(slc: SlcPair, theta, window: int = 7,
                        epsilon: float = None, coh_window: int = 7) -> FeatureStack:
    """Assemble the 7-plane feature stack from an SLC pair."""
    if window < 3 or window % 2 == 0:
        raise ValueError("texture window must be odd and >= 3")
    i1 = multilook_intensity(slc, 1)
    i2 = multilook_intensity(slc, 2)
    if epsilon is None:
        epsilon = 1e-6 * 0.5 * (i1.mean() + i2.mean())
    if epsilon <= 0:
        epsilon = 1e-300  # all-zero input still yields finite logs downstream
    log_i1 = np.log(i1 + epsilon)
    log_i2 = np.log(i2 + epsilon)
    tex_mean, tex_var = moving_mean_var(log_i2, window)
    planes = {
        "log_I1": log_i1,
        "log_I2": log_i2,
        "log_ratio": np.log((i2 + epsilon) / (i1 + epsilon)),
        "texture_mean": tex_mean,
        "texture_var": tex_var,
        "incidence": np.asarray(theta, dtype=float),
        "coherence_mag": sample_coherence(slc, coh_window),
    }
    return FeatureStack(planes=planes, epsilon=epsilon, window=window,
                        coh_window=coh_window)


def flatten(stack: FeatureStack, mask=None):
    """Row-major pixel vectors plus their flat indices for reassembly."""
    arr = stack.as_array()
    h, w, d = arr.shape
    flat = arr.reshape(h * w, d)
    if mask is None:
        idx = np.arange(h * w)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (h, w):
            raise ValueError("mask dimension mismatch")
        idx = np.flatnonzero(mask.reshape(-1))
    return flat[idx], idx


def reassemble(values, indices, shape):
    """Scatter per-pixel values back into a raster (inverse of flatten)."""
    out = np.full(shape[0] * shape[1], np.nan)
    out[indices] = values
    return out.reshape(shape)
