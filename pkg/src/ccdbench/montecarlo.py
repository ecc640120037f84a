"""Seeded Monte Carlo campaigns: trial parameter sampling, the full
scene -> SLC -> features -> detectors -> metrics pipeline, and bootstrap
aggregation across trials."""

import time
from dataclasses import dataclass, field, fields, replace
from multiprocessing import get_context

import numpy as np

from . import ae as ae_mod
from .detectors import (LocalRxGeometry, ccd_map, global_rx_map, local_rx_map,
                        ScoreMap)
from .em import RadarConfig, backscatter_map
from .features import build_feature_stack
from .fusion import (FusionWeights, InsufficientDataError, MetricReport,
                     evaluate_map, fuse, learn_weights, znorm)
from .scene import MATERIALS, ChangeSpec, build_scene, true_coherence_field
from .slc import form_slc_pair

DEFAULT_DETECTORS = ("rx", "rxrob", "lrx", "ccd", "ae", "fuse2", "fusew", "fuse3w")

_FUSION_INPUTS = {
    "fuse2": ("rxrob", "ccd"),
    "fusew": ("rxrob", "ccd"),
    "fuse3w": ("rxrob", "ccd", "ae"),
}


@dataclass(frozen=True)
class TrialRanges:
    """Uniform sampling intervals for the global nuisance parameters."""
    snr_db: tuple = (12.0, 28.0)
    nu: tuple = (0.3, 1.2)
    sigma_xy: tuple = (0.08, 0.25)
    sigma_phi: tuple = (0.10, 0.30)
    veg_fraction: tuple = (0.08, 0.18)
    gamma_bg: tuple = (0.90, 0.95)
    gamma_chg: tuple = (0.45, 0.65)
    looks: tuple = (2, 8)               # inclusive integer range
    bg_decorr: tuple = (0.75, 0.90)
    change_area: tuple = (0.01, 0.04)   # fraction of scene area
    change_strength: tuple = (0.3, 1.0)  # fraction of the full material swap

    def at_midpoints(self, **overrides):
        """Degenerate ranges pinned at interval midpoints (for sweeps)."""
        pinned = {}
        for f in fields(self):
            lo, hi = getattr(self, f.name)
            if f.name == "looks":
                mid = int(round((lo + hi) / 2))
            else:
                mid = 0.5 * (lo + hi)
            pinned[f.name] = (mid, mid)
        pinned.update(overrides)
        return TrialRanges(**pinned)


# (base, target) material presets for the injected change
DEFAULT_SCENARIOS = (("dry_soil", "wet_soil"),)


@dataclass
class TrialParams:
    snr_db: float
    nu: float
    sigma_xy: float
    sigma_phi: float
    veg_fraction: float
    gamma_bg: float
    gamma_chg: float
    looks: int
    bg_decorr: float
    base_material: str
    change: ChangeSpec
    seed: object
    trial_index: int = 0

    def row(self):
        return {
            "snr_db": self.snr_db, "nu": self.nu, "sigma_xy": self.sigma_xy,
            "sigma_phi": self.sigma_phi, "veg_fraction": self.veg_fraction,
            "gamma_bg": self.gamma_bg, "gamma_chg": self.gamma_chg,
            "looks": self.looks, "bg_decorr": self.bg_decorr,
            "base_material": self.base_material,
            "change_shape": self.change.shape,
        }


def _sample_change(rng, ranges, width, height, base_name, target_name):
    shape = ("square", "rectangle", "ellipse")[int(rng.integers(0, 3))]
    frac = rng.uniform(*ranges.change_area)
    area = frac * width * height
    if shape == "square":
        half = max(2, int(round((np.sqrt(area) - 1) / 2)))
        hy = hx = half
    elif shape == "rectangle":
        aspect = rng.uniform(0.5, 2.0)
        hy = max(2, int(round((np.sqrt(area * aspect) - 1) / 2)))
        hx = max(2, int(round((np.sqrt(area / aspect) - 1) / 2)))
    else:
        aspect = rng.uniform(0.5, 2.0)
        hy = max(2, int(round(np.sqrt(area * aspect / np.pi))))
        hx = max(2, int(round(np.sqrt(area / aspect / np.pi))))
    cy = int(rng.integers(hy + 1, height - hy - 1))
    cx = int(rng.integers(hx + 1, width - hx - 1))

    u = rng.uniform(*ranges.change_strength)
    base = MATERIALS[base_name]
    target = MATERIALS[target_name]
    return ChangeSpec(
        shape=shape, center=(cy, cx), extent=(hy, hx),
        eps_delta=u * (target.eps - base.eps),
        sigma_delta=u * (target.rms_height - base.rms_height),
        lc_delta=u * (target.corr_length - base.corr_length),
    )


def sample_trial_params(campaign_seed, trial_index, width=256, height=256,
                        ranges: TrialRanges = TrialRanges(),
                        scenarios=DEFAULT_SCENARIOS) -> TrialParams:
    """Independent uniform draws from a counter-based stream keyed by
    (campaign_seed, trial_index)."""
    if trial_index < 0:
        raise ValueError("trial_index must be >= 0")
    rng = np.random.Generator(np.random.Philox(key=[campaign_seed, trial_index]))
    base_name, target_name = scenarios[int(rng.integers(0, len(scenarios)))]
    params = TrialParams(
        snr_db=rng.uniform(*ranges.snr_db),
        nu=rng.uniform(*ranges.nu),
        sigma_xy=rng.uniform(*ranges.sigma_xy),
        sigma_phi=rng.uniform(*ranges.sigma_phi),
        veg_fraction=rng.uniform(*ranges.veg_fraction),
        gamma_bg=rng.uniform(*ranges.gamma_bg),
        gamma_chg=rng.uniform(*ranges.gamma_chg),
        looks=int(rng.integers(ranges.looks[0], ranges.looks[1] + 1)),
        bg_decorr=rng.uniform(*ranges.bg_decorr),
        base_material=base_name,
        change=_sample_change(rng, ranges, width, height, base_name, target_name),
        seed=[campaign_seed, trial_index],
        trial_index=trial_index,
    )
    return params


@dataclass
class TrialRecord:
    params: TrialParams
    reports: dict            # detector name -> MetricReport
    visibility: float
    wall_time: float


@dataclass
class PipelineConfig:
    width: int = 256
    height: int = 256
    radar: RadarConfig = field(default_factory=RadarConfig)
    lrx_geometry: LocalRxGeometry = field(default_factory=LocalRxGeometry)
    shrinkage: float = 0.05
    tyler_iters: int = 30
    ae: ae_mod.AeConfig = field(default_factory=ae_mod.AeConfig)
    pfa: float = 1e-3
    calib_fraction: float = 0.1
    morph_radius: int = 1
    fit_on_background_only: bool = False


class TrialError(RuntimeError):
    pass


def _required_detectors(detector_set):
    needed = set(detector_set)
    for name in detector_set:
        needed.update(_FUSION_INPUTS.get(name, ()))
    return needed


def run_trial(params: TrialParams, detector_set=DEFAULT_DETECTORS,
              cfg: PipelineConfig = None, keep_artifacts=False) -> TrialRecord:
    """Execute one full simulation/detection/evaluation trial."""
    cfg = cfg or PipelineConfig()
    t0 = time.perf_counter()
    try:
        base = MATERIALS[params.base_material]
        scene1, scene2 = build_scene(
            base, params.change, params.veg_fraction, params.gamma_bg,
            params.gamma_chg, params.bg_decorr, seed=_seed_int(params.seed),
            width=cfg.width, height=cfg.height)
        gamma = true_coherence_field(scene1)
        sigma0_1 = backscatter_map(scene1, cfg.radar)
        sigma0_2 = backscatter_map(scene2, cfg.radar)
        slc = form_slc_pair(sigma0_1, sigma0_2, gamma, params.looks, params.nu,
                            params.snr_db, params.sigma_xy, params.sigma_phi,
                            seed=[_seed_int(params.seed), 11])
        stack = build_feature_stack(slc, scene1.theta)

        truth = scene1.change_mask
        bg_mask = ~truth if cfg.fit_on_background_only else None
        needed = _required_detectors(detector_set)
        raw = {}
        if "rx" in needed:
            raw["rx"] = global_rx_map(stack, "sample", cfg.shrinkage, bg_mask)
        if "rxrob" in needed:
            raw["rxrob"] = global_rx_map(stack, "tyler", cfg.shrinkage, bg_mask)
        if "lrx" in needed:
            raw["lrx"] = local_rx_map(stack, cfg.lrx_geometry, "sample", cfg.shrinkage)
        # CCD is always formed: the visibility index is defined on it
        raw["ccd"] = ccd_map(stack.planes["coherence_mag"])
        if "ae" in needed:
            ae_cfg = replace(cfg.ae, seed=_seed_int([_seed_int(params.seed), 13]))
            model = ae_mod.train_ae(stack, ~truth, ae_cfg)
            raw["ae"] = ae_mod.ae_score_map(stack, model)

        z = {name: znorm(m) for name, m in raw.items()}
        if "fuse2" in detector_set:
            z["fuse2"] = fuse([z["rxrob"], z["ccd"]],
                              FusionWeights(("rxrob", "ccd"), np.array([1.0, 1.0])),
                              name="fuse2")
        for name in ("fusew", "fuse3w"):
            if name in detector_set:
                members = [z[m] for m in _FUSION_INPUTS[name]]
                try:
                    wgt = learn_weights(members, truth, cfg.calib_fraction,
                                        seed=[_seed_int(params.seed), 17])
                except InsufficientDataError:
                    wgt = FusionWeights(tuple(m.detector for m in members),
                                        np.ones(len(members)))
                z[name] = fuse(members, wgt, name=name)

        reports = {name: evaluate_map(z[name], truth, cfg.pfa, cfg.morph_radius)
                   for name in detector_set if name in z}

        ccd_scores = raw["ccd"].scores
        bg_std = ccd_scores[~truth].std()
        visibility = float(
            (ccd_scores[truth].mean() - ccd_scores[~truth].mean())
            / (bg_std if bg_std > 0 else 1.0))
    except Exception as exc:
        raise TrialError(f"trial {params.trial_index} failed: {exc}") from exc

    record = TrialRecord(params=params, reports=reports, visibility=visibility,
                         wall_time=time.perf_counter() - t0)
    if keep_artifacts:
        record.stack = stack
        record.score_maps = z
        record.truth = truth
    return record


def _seed_int(seed):
    """Collapse a (campaign, trial) key into a single Philox-safe integer."""
    if np.iterable(seed):
        out = 0
        for s in seed:
            out = (out * 0x9E3779B97F4A7C15 + int(s) + 1) % (1 << 63)
        return out
    return int(seed)


@dataclass
class CampaignSummary:
    stats: dict      # detector -> metric -> (mean, ci_lo, ci_hi)
    n_trials: int
    n_failed: int


def aggregate(records, n_boot=10_000, seed=0) -> CampaignSummary:
    """Per-detector mean and percentile-bootstrap 95% CI for each metric."""
    if len(records) < 2:
        raise InsufficientDataError("need at least 2 trial records")
    rng = np.random.Generator(np.random.Philox(key=seed))
    detectors = sorted({name for r in records for name in r.reports})
    stats = {}
    for det in detectors:
        vals = {m: np.array([getattr(r.reports[det], m) for r in records
                             if det in r.reports])
                for m in ("roc_auc", "ap", "f1")}
        stats[det] = {}
        for metric, v in vals.items():
            idx = rng.integers(0, v.size, size=(n_boot, v.size))
            means = v[idx].mean(axis=1)
            lo, hi = np.percentile(means, [2.5, 97.5])
            stats[det][metric] = (float(v.mean()), float(lo), float(hi))
    return CampaignSummary(stats=stats, n_trials=len(records), n_failed=0)


def _trial_worker(args):
    campaign_seed, index, width, height, ranges, scenarios, detector_set, cfg = args
    params = sample_trial_params(campaign_seed, index, width, height,
                                 ranges, scenarios)
    try:
        return index, run_trial(params, detector_set, cfg), None
    except TrialError as exc:
        return index, None, str(exc)


def run_campaign(campaign_seed, n_trials, detector_set=DEFAULT_DETECTORS,
                 cfg: PipelineConfig = None, ranges: TrialRanges = TrialRanges(),
                 scenarios=DEFAULT_SCENARIOS, workers=1, log=None):
    """Run n_trials independent trials; results are identical for any worker
    count because every trial owns a counter-based RNG stream.

    Returns (records sorted by trial index, failure messages).
    """
    cfg = cfg or PipelineConfig()
    tasks = [(campaign_seed, i, cfg.width, cfg.height, ranges, scenarios,
              tuple(detector_set), cfg) for i in range(n_trials)]
    results = []
    if workers <= 1:
        for task in tasks:
            results.append(_trial_worker(task))
            if log:
                log(f"trial {task[1] + 1}/{n_trials} done")
    else:
        with get_context("spawn").Pool(workers) as pool:
            for res in pool.imap_unordered(_trial_worker, tasks):
                results.append(res)
                if log:
                    log(f"trial {res[0] + 1}/{n_trials} done")
    results.sort(key=lambda r: r[0])
    records = [rec for _, rec, err in results if rec is not None]
    failures = [err for _, rec, err in results if err is not None]
    return records, failures


def sweep_campaign(campaign_seed, factor, levels, trials_per_level,
                   detector_set=("ccd",), cfg: PipelineConfig = None,
                   ranges: TrialRanges = TrialRanges(),
                   scenarios=DEFAULT_SCENARIOS, workers=1, log=None):
    """One-factor sweep: every nuisance pinned at its midpoint except the
    swept factor. Returns {level: (records, failures)}."""
    out = {}
    for li, level in enumerate(levels):
        pinned = ranges.at_midpoints(**{factor: (level, level)})
        level_seed = _seed_int([_seed_int(campaign_seed), li])
        out[level] = run_campaign(level_seed, trials_per_level,
                                  detector_set, cfg, pinned, scenarios,
                                  workers, log)
    return out
