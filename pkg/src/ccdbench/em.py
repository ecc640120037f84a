"""Surrogate electromagnetic forward model: Fresnel reflectivity times a
roughness attenuation, mapping per-pixel material parameters to mean
linear-power backscatter."""

from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299792458.0  # m/s


@dataclass(frozen=True)
class RadarConfig:
    frequency: float = 5.4e9        # Hz (C-band)
    polarization: str = "VV"
    lc_ref: float = 0.10            # m, reference correlation length

    def __post_init__(self):
        if self.frequency <= 0:
            raise ValueError("frequency must be positive")

    @property
    def wavenumber(self) -> float:
        return 2.0 * np.pi * self.frequency / SPEED_OF_LIGHT


def fresnel_term(eps_r, theta):
    """VV Fresnel power reflectivity |(e cos t - sqrt(e - sin^2 t)) /
    (e cos t + sqrt(e - sin^2 t))|^2, in [0, 1]."""
    eps_r = np.asarray(eps_r, dtype=complex)
    theta = np.asarray(theta, dtype=float)
    if np.any(eps_r.real < 1.0):
        raise ValueError("Re(eps_r) must be >= 1")
    if np.any(theta < 0.0) or np.any(theta >= np.pi / 2):
        raise ValueError("theta must lie in [0, pi/2)")
    root = np.sqrt(eps_r - np.sin(theta) ** 2)  # principal branch
    num = eps_r * np.cos(theta) - root
    den = eps_r * np.cos(theta) + root
    out = np.abs(num / den) ** 2
    return out if out.ndim else float(out)


def roughness_term(theta, sigma_s, l_c, cfg: RadarConfig):
    """exp[-(2 k sigma cos theta)^2] * l_c/(l_c + lc_ref), in (0, 1]."""
    theta = np.asarray(theta, dtype=float)
    sigma_s = np.asarray(sigma_s, dtype=float)
    l_c = np.asarray(l_c, dtype=float)
    if np.any(sigma_s < 0.0):
        raise ValueError("sigma_s must be >= 0")
    if np.any(l_c <= 0.0):
        raise ValueError("l_c must be > 0")
    k = cfg.wavenumber
    atten = np.exp(-((2.0 * k * sigma_s * np.cos(theta)) ** 2))
    phi = l_c / (l_c + cfg.lc_ref)
    out = atten * phi
    return out if out.ndim else float(out)


def backscatter_map(scene, cfg: RadarConfig = RadarConfig(), roughness_fn=None):
    """Per-pixel sigma0 = F * G over the scene rasters.

    roughness_fn may replace the default attenuation (same signature as
    roughness_term) to plug in a higher-fidelity model.
    """
    if roughness_fn is None:
        roughness_fn = roughness_term
    f = fresnel_term(scene.eps_r, scene.theta)
    g = roughness_fn(scene.theta, scene.sigma_s, scene.l_c, cfg)
    return f * g
