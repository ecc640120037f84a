"""Labelled material scene synthesis: parameter rasters, incidence field,
vegetation mask and change-region injection with ground truth."""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class MaterialClass:
    name: str
    eps_real: float
    eps_imag: float
    rms_height: float   # meters
    corr_length: float  # meters

    def __post_init__(self):
        if self.eps_real < 1.0:
            raise ValueError("eps_real must be >= 1")
        if self.eps_imag < 0.0:
            raise ValueError("eps_imag must be >= 0")
        if self.rms_height <= 0.0:
            raise ValueError("rms_height must be > 0")
        if self.corr_length <= 0.0:
            raise ValueError("corr_length must be > 0")

    @property
    def eps(self) -> complex:
        return complex(self.eps_real, self.eps_imag)


# Illustrative microwave-band presets; configurable, not measurements.
MATERIALS = {
    "dry_soil": MaterialClass("dry_soil", 6.0, 1.0, 0.010, 0.10),
    "wet_soil": MaterialClass("wet_soil", 20.0, 4.0, 0.010, 0.10),
    "asphalt": MaterialClass("asphalt", 5.0, 0.5, 0.003, 0.15),
    "gravel": MaterialClass("gravel", 4.0, 0.3, 0.020, 0.05),
    "veg_soil": MaterialClass("veg_soil", 8.0, 2.0, 0.015, 0.08),
}


@dataclass(frozen=True)
class ChangeSpec:
    """Compact change region and the parameter perturbations applied inside it."""
    shape: str                      # "square" | "rectangle" | "ellipse"
    center: tuple                   # (row, col) pixels
    extent: tuple                   # (half_height, half_width) pixels
    eps_delta: complex = 0.0
    sigma_delta: float = 0.0
    lc_delta: float = 0.0

    def __post_init__(self):
        if self.shape not in ("square", "rectangle", "ellipse"):
            raise ValueError(f"unknown change shape {self.shape!r}")
        if self.shape == "square" and self.extent[0] != self.extent[1]:
            raise ValueError("square change region needs equal half-widths")

    def mask(self, height: int, width: int) -> np.ndarray:
        cy, cx = self.center
        hy, hx = self.extent
        if cy - hy < 0 or cy + hy >= height or cx - hx < 0 or cx + hx >= width:
            raise ValueError("change region must lie fully inside the raster")
        yy, xx = np.mgrid[0:height, 0:width]
        if self.shape == "ellipse":
            m = ((yy - cy) / hy) ** 2 + ((xx - cx) / hx) ** 2 <= 1.0
        else:
            m = (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)
        area_frac = m.sum() / (height * width)
        if not (0.005 <= area_frac <= 0.05):
            raise ValueError(
                f"change region covers {area_frac:.2%} of the scene; "
                "must be between 0.5% and 5%")
        return m


@dataclass
class MaterialScene:
    width: int
    height: int
    eps_r: np.ndarray       # complex, per-pixel relative permittivity
    sigma_s: np.ndarray     # rms height (m)
    l_c: np.ndarray         # correlation length (m)
    theta: np.ndarray       # local incidence (rad)
    veg_mask: np.ndarray
    change_mask: np.ndarray
    gamma_bg: float
    gamma_chg: float
    bg_decorr: float
    seed: int = 0

    def __post_init__(self):
        shp = (self.height, self.width)
        for name in ("eps_r", "sigma_s", "l_c", "theta", "veg_mask", "change_mask"):
            if getattr(self, name).shape != shp:
                raise ValueError(f"raster {name} has shape mismatch")
        if not (np.all(self.theta > 0) and np.all(self.theta < np.pi / 2)):
            raise ValueError("incidence angles must lie in (0, pi/2)")
        if not self.gamma_chg < self.gamma_bg:
            raise ValueError("gamma_chg must be below gamma_bg")


def _cosine_modes(width, height, rng, n_modes):
    """Sum of low-frequency 2-D cosine modes, normalized to max |.| = 1."""
    yy, xx = np.mgrid[0:height, 0:width]
    out = np.zeros((height, width))
    for _ in range(n_modes):
        fy = rng.uniform(0.5, 2.0) / height
        fx = rng.uniform(0.5, 2.0) / width
        phase = rng.uniform(0, 2 * np.pi)
        out += np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
    peak = np.abs(out).max()
    if peak > 0:
        out /= peak
    return out


def smooth_unit_field(width, height, seed, n_modes=3):
    """Smooth random field in [-1, 1]; shared generator for incidence ripple,
    background decorrelation and phase screens."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    return _cosine_modes(width, height, rng, n_modes)


def make_incidence_field(width, height, theta_center, ripple_amplitude, seed):
    """Smooth incidence-angle raster within theta_center +/- ripple_amplitude."""
    if width <= 0 or height <= 0:
        raise ValueError("raster dimensions must be positive")
    if not 0 < theta_center < np.pi / 2:
        raise ValueError("theta_center must lie in (0, pi/2)")
    if ripple_amplitude >= theta_center:
        raise ValueError("ripple_amplitude must be below theta_center")
    if ripple_amplitude == 0:
        return np.full((height, width), theta_center)
    rng = np.random.Generator(np.random.Philox(key=seed))
    n_modes = int(rng.integers(2, 5))
    ripple = _cosine_modes(width, height, rng, n_modes)
    return theta_center + ripple_amplitude * ripple


def make_veg_mask(width, height, veg_fraction, seed):
    """Contiguous vegetation blobs covering ~veg_fraction of the pixels,
    from thresholded smoothed white noise."""
    if not 0.0 <= veg_fraction <= 1.0:
        raise ValueError("veg_fraction must lie in [0, 1]")
    if veg_fraction == 0.0:
        return np.zeros((height, width), dtype=bool)
    rng = np.random.Generator(np.random.Philox(key=seed))
    noise = rng.standard_normal((height, width))
    smooth = ndimage.gaussian_filter(noise, sigma=max(2.0, min(width, height) / 32))
    thresh = np.quantile(smooth, 1.0 - veg_fraction)
    return smooth > thresh


def build_scene(base_class, change, veg_fraction, gamma_bg, gamma_chg, bg_decorr,
                seed, width=256, height=256,
                theta_center=np.deg2rad(35.0), theta_ripple=np.deg2rad(3.0),
                veg_class=None):
    """Build the epoch-1/epoch-2 scene pair with the change injected in epoch 2.

    Outside the change mask the two epochs are identical; inside, epoch-2
    parameters are epoch-1 parameters plus the ChangeSpec deltas. Vegetation
    pixels carry veg_class parameters (in both epochs), which makes the
    background radiometrically heterogeneous.
    """
    if not (0.0 <= gamma_chg <= 1.0 and 0.0 <= gamma_bg <= 1.0):
        raise ValueError("coherence magnitudes must lie in [0, 1]")
    if veg_class is None:
        veg_class = MATERIALS["veg_soil"]
    change_mask = change.mask(height, width)
    veg = make_veg_mask(width, height, veg_fraction, seed=[seed, 2])

    eps1 = np.full((height, width), base_class.eps, dtype=complex)
    sig1 = np.full((height, width), base_class.rms_height)
    lc1 = np.full((height, width), base_class.corr_length)
    eps1[veg] = veg_class.eps
    sig1[veg] = veg_class.rms_height
    lc1[veg] = veg_class.corr_length

    eps2 = eps1.copy()
    sig2 = sig1.copy()
    lc2 = lc1.copy()
    eps2[change_mask] += change.eps_delta
    sig2[change_mask] += change.sigma_delta
    lc2[change_mask] += change.lc_delta
    if np.any(eps2.real < 1.0) or np.any(eps2.imag < 0.0):
        raise ValueError("eps delta drives permittivity out of range")
    if np.any(sig2 <= 0.0):
        raise ValueError("sigma delta drives rms height out of range")
    if np.any(lc2 <= 0.0):
        raise ValueError("lc delta drives correlation length out of range")

    theta = make_incidence_field(width, height, theta_center, theta_ripple,
                                 seed=[seed, 1])

    common = dict(width=width, height=height, theta=theta, veg_mask=veg,
                  change_mask=change_mask, gamma_bg=gamma_bg,
                  gamma_chg=gamma_chg, bg_decorr=bg_decorr, seed=seed)
    scene1 = MaterialScene(eps_r=eps1, sigma_s=sig1, l_c=lc1, **common)
    scene2 = MaterialScene(eps_r=eps2, sigma_s=sig2, l_c=lc2, **common)
    return scene1, scene2


# Vegetation pixels lose extra coherence between epochs.
VEG_COHERENCE_FACTOR = 0.75

# Background decorrelation varies smoothly within this band.
BG_DECORR_RANGE = (0.75, 0.90)


def true_coherence_field(scene: MaterialScene) -> np.ndarray:
    """Per-pixel true coherence magnitude: gamma_bg times a smooth background
    decorrelation factor (reduced further on vegetation), gamma_chg inside
    the change mask."""
    lo, hi = BG_DECORR_RANGE
    amp = min(scene.bg_decorr - lo, hi - scene.bg_decorr)
    unit = smooth_unit_field(scene.width, scene.height, seed=[scene.seed, 3])
    decorr = scene.bg_decorr + amp * unit
    gamma = scene.gamma_bg * decorr
    gamma[scene.veg_mask] *= VEG_COHERENCE_FACTOR
    gamma[scene.change_mask] = scene.gamma_chg
    return np.clip(gamma, 0.0, 1.0)
