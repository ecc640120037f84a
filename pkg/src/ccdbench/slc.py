"""Bi-temporal SLC formation: correlated fully developed speckle, compound
gamma texture, multilook stacks, receiver noise and residual coregistration
and phase errors."""

from dataclasses import dataclass

import numpy as np

from .scene import smooth_unit_field


@dataclass
class SlcPair:
    s1: np.ndarray          # (L, H, W) complex
    s2: np.ndarray          # (L, H, W) complex
    looks: int
    true_gamma: np.ndarray  # (H, W) in [0, 1]
    snr_db: float
    nu: float               # texture shape; inf disables texture
    sigma_xy: float         # px
    sigma_phi: float        # rad
    seed: object = 0

    def __post_init__(self):
        if self.s1.shape != self.s2.shape:
            raise ValueError("epoch rasters must share dimensions")
        if self.s1.shape[0] != self.looks:
            raise ValueError("look count mismatch")
        if self.s1.shape[1:] != self.true_gamma.shape:
            raise ValueError("gamma field dimension mismatch")


def _ccn(rng, shape):
    """Circular complex Gaussian, unit mean intensity."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def correlated_speckle(gamma_field, rng):
    """Draw (w1, w2) with w2 = g*w1 + sqrt(1-g^2)*w_perp per pixel."""
    gamma_field = np.asarray(gamma_field, dtype=float)
    if np.any(gamma_field < 0.0) or np.any(gamma_field > 1.0):
        raise ValueError("coherence values must lie in [0, 1]")
    w1 = _ccn(rng, gamma_field.shape)
    w_perp = _ccn(rng, gamma_field.shape)
    w2 = gamma_field * w1 + np.sqrt(1.0 - gamma_field ** 2) * w_perp
    return w1, w2


def _bilinear_shift(img, dy, dx):
    """Rigid subpixel shift with bilinear resampling, edge-replicated."""
    if dy == 0.0 and dx == 0.0:
        return img
    iy, fy = int(np.floor(dy)), dy - np.floor(dy)
    ix, fx = int(np.floor(dx)), dx - np.floor(dx)

    def roll_clip(a, sy, sx):
        h, w = a.shape
        ys = np.clip(np.arange(h) - sy, 0, h - 1)
        xs = np.clip(np.arange(w) - sx, 0, w - 1)
        return a[np.ix_(ys, xs)]

    return ((1 - fy) * (1 - fx) * roll_clip(img, iy, ix)
            + (1 - fy) * fx * roll_clip(img, iy, ix + 1)
            + fy * (1 - fx) * roll_clip(img, iy + 1, ix)
            + fy * fx * roll_clip(img, iy + 1, ix + 1))


def form_slc_pair(sigma0_t1, sigma0_t2, gamma_field, looks, nu, snr_db,
                  sigma_xy, sigma_phi, seed):
    """Form an L-look SLC pair.

    Per-pixel gamma texture (shape nu, mean 1) is shared across epochs and
    looks; receiver noise power references the scene-mean sigma0; epoch 2
    gets one rigid subpixel shift and a smooth random phase screen.
    """
    sigma0_t1 = np.asarray(sigma0_t1, dtype=float)
    sigma0_t2 = np.asarray(sigma0_t2, dtype=float)
    if sigma0_t1.shape != sigma0_t2.shape or sigma0_t1.shape != np.shape(gamma_field):
        raise ValueError("input rasters must share dimensions")
    if looks < 1:
        raise ValueError("looks must be >= 1")
    if not nu > 0:
        raise ValueError("texture shape nu must be positive")

    rng = np.random.Generator(np.random.Philox(key=seed))
    h, w = sigma0_t1.shape

    if np.isinf(nu):
        tau = np.ones((h, w))
    else:
        tau = rng.gamma(shape=nu, scale=1.0 / nu, size=(h, w))
    amp1 = np.sqrt(tau * sigma0_t1)
    amp2 = np.sqrt(tau * sigma0_t2)

    mean_power = 0.5 * (sigma0_t1.mean() + sigma0_t2.mean())
    noise_power = 0.0 if np.isinf(snr_db) else mean_power * 10.0 ** (-snr_db / 10.0)

    dy = dx = 0.0
    if sigma_xy > 0:
        dy, dx = rng.normal(0.0, sigma_xy, size=2)
    phase = np.zeros((h, w))
    if sigma_phi > 0:
        screen = smooth_unit_field(w, h, seed=[_fold_seed(seed), 7], n_modes=4)
        std = screen.std()
        phase = screen * (sigma_phi / std if std > 0 else 0.0)

    s1 = np.empty((looks, h, w), dtype=complex)
    s2 = np.empty((looks, h, w), dtype=complex)
    for look in range(looks):
        w1, w2 = correlated_speckle(gamma_field, rng)
        e1 = amp1 * w1
        e2 = amp2 * w2
        if noise_power > 0:
            e1 = e1 + np.sqrt(noise_power) * _ccn(rng, (h, w))
            e2 = e2 + np.sqrt(noise_power) * _ccn(rng, (h, w))
        if dy != 0.0 or dx != 0.0:
            e2 = _bilinear_shift(e2.real, dy, dx) + 1j * _bilinear_shift(e2.imag, dy, dx)
        if sigma_phi > 0:
            e2 = e2 * np.exp(1j * phase)
        s1[look] = e1
        s2[look] = e2

    return SlcPair(s1=s1, s2=s2, looks=looks,
                   true_gamma=np.asarray(gamma_field, dtype=float),
                   snr_db=snr_db, nu=nu, sigma_xy=sigma_xy,
                   sigma_phi=sigma_phi, seed=seed)


def _fold_seed(seed):
    """Collapse list-style Philox keys into one int for derived streams."""
    if np.iterable(seed):
        out = 0
        for s in seed:
            out = (out * 0x9E3779B97F4A7C15 + int(s) + 1) % (1 << 63)
        return out
    return int(seed)


def multilook_intensity(slc: SlcPair, epoch: int) -> np.ndarray:
    """Mean |S|^2 over looks for one epoch."""
    if epoch not in (1, 2):
        raise ValueError("epoch must be 1 or 2")
    s = slc.s1 if epoch == 1 else slc.s2
    return np.mean(np.abs(s) ** 2, axis=0)
