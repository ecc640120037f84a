"""Experiment configuration, raster serialization and CSV schemas."""

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .ae import AeConfig
from .detectors import LocalRxGeometry
from .em import RadarConfig
from .montecarlo import (DEFAULT_DETECTORS, DEFAULT_SCENARIOS, PipelineConfig,
                         TrialRanges, _seed_int)

SCHEMA_VERSION = 1

RASTER_MAGIC = "ccdbench-raster v1"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    campaign_seed: int = 0
    n_trials: int = 50
    scene_size: tuple = (128, 128)
    detectors: tuple = DEFAULT_DETECTORS
    workers: int = 1
    output_dir: str = "out"
    ranges: TrialRanges = field(default_factory=TrialRanges)
    scenarios: tuple = DEFAULT_SCENARIOS
    pipeline: PipelineConfig = None
    pfa: float = 1e-3
    sweep: dict = None      # {"factor", "levels", "trials_per_level"}

    def __post_init__(self):
        if self.pipeline is None:
            h, w = self.scene_size
            self.pipeline = PipelineConfig(width=w, height=h, pfa=self.pfa)


_RANGE_FIELDS = set(TrialRanges.__dataclass_fields__)


def load_config(path) -> ExperimentConfig:
    """Parse and validate a JSON experiment config; raises ConfigError with
    a line/field diagnostic on any problem."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"{path}: field 'schema_version' must be {SCHEMA_VERSION}")

    def bad(fieldname, msg):
        return ConfigError(f"{path}: field '{fieldname}': {msg}")

    cfg = ExperimentConfig()
    if "campaign_seed" in doc:
        cfg.campaign_seed = int(doc["campaign_seed"])
    if "n_trials" in doc:
        cfg.n_trials = int(doc["n_trials"])
        if cfg.n_trials < 1:
            raise bad("n_trials", "must be >= 1")
    if "scene_size" in doc:
        size = doc["scene_size"]
        if not (isinstance(size, list) and len(size) == 2):
            raise bad("scene_size", "must be [height, width]")
        cfg.scene_size = (int(size[0]), int(size[1]))
    if "detectors" in doc:
        dets = tuple(doc["detectors"])
        unknown = set(dets) - set(DEFAULT_DETECTORS)
        if unknown:
            raise bad("detectors", f"unknown names {sorted(unknown)}")
        cfg.detectors = dets
    if "workers" in doc:
        cfg.workers = int(doc["workers"])
    if "output_dir" in doc:
        cfg.output_dir = str(doc["output_dir"])
    if "pfa" in doc:
        cfg.pfa = float(doc["pfa"])
        if not 0 < cfg.pfa <= 1:
            raise bad("pfa", "must lie in (0, 1]")

    if "ranges" in doc:
        overrides = {}
        for key, bounds in doc["ranges"].items():
            if key not in _RANGE_FIELDS:
                raise bad(f"ranges.{key}", "unknown parameter")
            if not (isinstance(bounds, list) and len(bounds) == 2
                    and bounds[0] <= bounds[1]):
                raise bad(f"ranges.{key}", "must be [lo, hi] with lo <= hi")
            overrides[key] = tuple(bounds)
        cfg.ranges = replace(TrialRanges(), **overrides)

    if "scenarios" in doc:
        cfg.scenarios = tuple(tuple(s) for s in doc["scenarios"])

    if "sweep" in doc:
        sw = doc["sweep"]
        for key in ("factor", "levels", "trials_per_level"):
            if key not in sw:
                raise bad(f"sweep.{key}", "missing")
        if sw["factor"] not in _RANGE_FIELDS:
            raise bad("sweep.factor", f"unknown parameter {sw['factor']!r}")
        cfg.sweep = {"factor": sw["factor"], "levels": list(sw["levels"]),
                     "trials_per_level": int(sw["trials_per_level"])}

    h, w = cfg.scene_size
    pipeline = PipelineConfig(width=w, height=h, pfa=cfg.pfa)
    if "radar" in doc:
        rd = doc["radar"]
        pipeline.radar = RadarConfig(
            frequency=float(rd.get("frequency", 5.4e9)),
            polarization=str(rd.get("polarization", "VV")),
            lc_ref=float(rd.get("lc_ref", 0.10)))
    if "lrx" in doc:
        pipeline.lrx_geometry = LocalRxGeometry(
            outer=int(doc["lrx"].get("outer", 21)),
            guard=int(doc["lrx"].get("guard", 9)))
    if "ae" in doc:
        known = set(AeConfig.__dataclass_fields__)
        unknown = set(doc["ae"]) - known
        if unknown:
            raise bad("ae", f"unknown fields {sorted(unknown)}")
        ae_kwargs = dict(doc["ae"])
        if ae_kwargs.get("planes") is not None:
            ae_kwargs["planes"] = tuple(ae_kwargs["planes"])
        pipeline.ae = AeConfig(**ae_kwargs)
    if "shrinkage" in doc:
        pipeline.shrinkage = float(doc["shrinkage"])
    cfg.pipeline = pipeline
    return cfg


def write_raster(path, planes: dict):
    """Plain-text header followed by plane-major float64 LE payload."""
    names = list(planes)
    arrs = [np.asarray(planes[n], dtype="<f8") for n in names]
    h, w = arrs[0].shape
    if any(a.shape != (h, w) for a in arrs):
        raise ValueError("raster planes must share dimensions")
    with open(path, "wb") as fh:
        header = (f"{RASTER_MAGIC}\n"
                  f"width {w}\nheight {h}\nplanes {len(names)}\n"
                  f"names {' '.join(names)}\nend\n")
        fh.write(header.encode("ascii"))
        for a in arrs:
            fh.write(a.tobytes())


def read_raster(path):
    """Inverse of write_raster: returns {name: (H, W) float64 raster}."""
    with open(path, "rb") as fh:
        data = fh.read()
    head, _, payload = data.partition(b"end\n")
    lines = head.decode("ascii").splitlines()
    if lines[0] != RASTER_MAGIC:
        raise ValueError(f"{path}: not a ccdbench raster")
    meta = dict(line.split(maxsplit=1) for line in lines[1:])
    w, h, p = int(meta["width"]), int(meta["height"]), int(meta["planes"])
    names = meta["names"].split()
    expected = w * h * p * 8
    if len(payload) != expected:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, "
                         f"expected {expected}")
    cube = np.frombuffer(payload, dtype="<f8").reshape(p, h, w)
    return {name: cube[i].copy() for i, name in enumerate(names)}


def trials_csv_columns(detectors):
    cols = ["trial_index", "seed", "snr_db", "nu", "sigma_xy", "sigma_phi",
            "veg_fraction", "gamma_bg", "gamma_chg", "looks", "bg_decorr",
            "base_material", "change_shape", "visibility"]
    for det in detectors:
        cols += [f"{det}_roc_auc", f"{det}_ap", f"{det}_f1"]
    return cols


def write_trials_csv(path, records, detectors):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(trials_csv_columns(detectors))
        for rec in records:
            row = rec.params.row()
            out = [rec.params.trial_index, _seed_int(rec.params.seed)]
            out += [repr(row[k]) if isinstance(row[k], float) else row[k]
                    for k in ("snr_db", "nu", "sigma_xy", "sigma_phi",
                              "veg_fraction", "gamma_bg", "gamma_chg",
                              "looks", "bg_decorr", "base_material",
                              "change_shape")]
            out.append(repr(rec.visibility))
            for det in detectors:
                rep = rec.reports.get(det)
                if rep is None:
                    out += ["", "", ""]
                else:
                    out += [repr(rep.roc_auc), repr(rep.ap), repr(rep.f1)]
            writer.writerow(out)


def write_summary_csv(path, summary):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["detector",
                         "roc_auc_mean", "roc_auc_lo", "roc_auc_hi",
                         "ap_mean", "ap_lo", "ap_hi",
                         "f1_mean", "f1_lo", "f1_hi",
                         "n_trials", "n_failed"])
        for det, metrics in summary.stats.items():
            row = [det]
            for metric in ("roc_auc", "ap", "f1"):
                row += [repr(v) for v in metrics[metric]]
            row += [summary.n_trials, summary.n_failed]
            writer.writerow(row)


def write_rows_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_curve_csv(path, header, points):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for pt in points:
            writer.writerow([repr(float(v)) for v in pt])
