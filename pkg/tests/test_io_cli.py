import csv
import json

import numpy as np
import pytest

from ccdbench import cli
from ccdbench import fusion as fu
from ccdbench import io as io_mod
from ccdbench import render as render_mod


def write_config(path, **overrides):
    doc = {
        "schema_version": 1,
        "campaign_seed": 101,
        "n_trials": 2,
        "scene_size": [64, 64],
        "detectors": ["rx", "ccd"],
        "pfa": 0.01,
        "ae": {"patch": 8, "epochs": 3, "n_tiles": 64},
    }
    doc.update(overrides)
    path.write_text(json.dumps(doc))
    return str(path)


class TestConfig:
    def test_minimal_round_trip(self, tmp_path):
        cfg = io_mod.load_config(write_config(tmp_path / "c.json"))
        assert cfg.campaign_seed == 101
        assert cfg.n_trials == 2
        assert cfg.scene_size == (64, 64)
        assert cfg.detectors == ("rx", "ccd")
        assert cfg.pipeline.width == 64 and cfg.pipeline.pfa == 0.01
        assert cfg.pipeline.ae.patch == 8

    def test_missing_schema_version(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"n_trials": 3}))
        with pytest.raises(io_mod.ConfigError, match="schema_version"):
            io_mod.load_config(str(path))

    def test_json_error_reports_line(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{\n  "schema_version": 1,\n  oops\n}')
        with pytest.raises(io_mod.ConfigError, match="line 3"):
            io_mod.load_config(str(path))

    def test_unknown_detector(self, tmp_path):
        path = write_config(tmp_path / "c.json", detectors=["rx", "sonar"])
        with pytest.raises(io_mod.ConfigError, match="sonar"):
            io_mod.load_config(path)

    def test_bad_range(self, tmp_path):
        path = write_config(tmp_path / "c.json", ranges={"nu": [1.0, 0.5]})
        with pytest.raises(io_mod.ConfigError, match="ranges.nu"):
            io_mod.load_config(path)

    def test_ranges_override(self, tmp_path):
        path = write_config(tmp_path / "c.json", ranges={"looks": [4, 4]})
        cfg = io_mod.load_config(path)
        assert cfg.ranges.looks == (4, 4)
        assert cfg.ranges.nu == (0.3, 1.2)

    def test_sweep_requires_known_factor(self, tmp_path):
        path = write_config(tmp_path / "c.json",
                            sweep={"factor": "bogus", "levels": [1],
                                   "trials_per_level": 2})
        with pytest.raises(io_mod.ConfigError, match="sweep.factor"):
            io_mod.load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(io_mod.ConfigError):
            io_mod.load_config(str(tmp_path / "absent.json"))


class TestRaster:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.Generator(np.random.Philox(key=1))
        planes = {"a": rng.normal(size=(17, 23)),
                  "b": rng.normal(size=(17, 23))}
        path = tmp_path / "x.rst"
        io_mod.write_raster(path, planes)
        out = io_mod.read_raster(path)
        assert list(out) == ["a", "b"]
        for name in planes:
            np.testing.assert_array_equal(out[name], planes[name])

    def test_header_is_text(self, tmp_path):
        path = tmp_path / "x.rst"
        io_mod.write_raster(path, {"p": np.zeros((2, 3))})
        head = path.read_bytes().split(b"end\n")[0].decode("ascii")
        assert head.startswith(io_mod.RASTER_MAGIC)
        assert "width 3" in head and "height 2" in head

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "x.rst"
        io_mod.write_raster(path, {"p": np.zeros((4, 4))})
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(ValueError, match="bytes"):
            io_mod.read_raster(path)

    def test_mismatched_planes_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            io_mod.write_raster(tmp_path / "x.rst",
                                {"a": np.zeros((2, 2)), "b": np.zeros((3, 3))})


class TestCurves:
    def case(self, seed=2, n=500):
        rng = np.random.Generator(np.random.Philox(key=seed))
        truth = rng.random(n) < 0.3
        scores = rng.normal(size=n) + truth
        return scores, truth

    def test_roc_endpoints(self):
        scores, truth = self.case()
        pts = render_mod.roc_points(scores, truth)
        assert tuple(pts[0]) == (0.0, 0.0)
        assert tuple(pts[-1]) == (1.0, 1.0)
        assert np.all(np.diff(pts[:, 0]) >= 0)
        assert np.all(np.diff(pts[:, 1]) >= 0)

    def test_roc_trapezoid_equals_auc(self):
        scores, truth = self.case(3)
        pts = render_mod.roc_points(np.round(scores, 1), truth)
        area = np.trapezoid(pts[:, 1], pts[:, 0])
        assert area == pytest.approx(fu.roc_auc(np.round(scores, 1), truth),
                                     abs=1e-12)

    def test_pr_endpoints(self):
        scores, truth = self.case(4)
        pts = render_mod.pr_points(scores, truth)
        assert tuple(pts[0]) == (0.0, 1.0)
        assert pts[-1, 0] == 1.0
        assert pts[-1, 1] == pytest.approx(truth.mean())

    def test_greyscale_constant_plane(self, tmp_path):
        render_mod.export_greyscale(np.full((8, 8), 3.0),
                                    tmp_path / "m.png", tmp_path / "m.txt")
        text = (tmp_path / "m.txt").read_text()
        assert "min 3.0" in text and "max 3.0" in text
        assert (tmp_path / "m.png").exists()


class TestCliSimulate:
    def run_sim(self, tmp_path, name, **overrides):
        cfg_path = write_config(tmp_path / f"{name}.json", **overrides)
        out = tmp_path / name
        rc = cli.main(["simulate", "--config", cfg_path, "--out", str(out)])
        return rc, out

    def test_end_to_end_outputs(self, tmp_path):
        rc, out = self.run_sim(tmp_path, "run")
        assert rc == 0
        with open(out / "trials.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == io_mod.trials_csv_columns(("rx", "ccd"))
        assert len(rows) == 3
        with open(out / "summary.csv") as fh:
            srows = list(csv.reader(fh))
        assert {r[0] for r in srows[1:]} == {"rx", "ccd"}
        for fname in ("features.rst", "scores.rst", "truth.rst",
                      "roc_ccd.csv", "pr_rx.csv"):
            assert (out / "top_trial" / fname).exists()

    def test_reruns_are_byte_identical(self, tmp_path):
        _, out_a = self.run_sim(tmp_path, "a")
        _, out_b = self.run_sim(tmp_path, "b")
        assert (out_a / "trials.csv").read_bytes() == \
               (out_b / "trials.csv").read_bytes()

    def test_worker_override_keeps_bytes(self, tmp_path):
        _, out_a = self.run_sim(tmp_path, "w1", workers=1)
        _, out_b = self.run_sim(tmp_path, "w3", workers=3)
        assert (out_a / "trials.csv").read_bytes() == \
               (out_b / "trials.csv").read_bytes()

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{ not json")
        rc = cli.main(["simulate", "--config", str(path)])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_detector_override(self, tmp_path):
        cfg_path = write_config(tmp_path / "c.json")
        out = tmp_path / "ccd_only"
        rc = cli.main(["simulate", "--config", cfg_path, "--out", str(out),
                       "--detectors", "ccd"])
        assert rc == 0
        with open(out / "trials.csv") as fh:
            header = next(csv.reader(fh))
        assert "ccd_roc_auc" in header and "rx_roc_auc" not in header


class TestCliRenderAndSweep:
    def test_render_after_simulate(self, tmp_path):
        cfg_path = write_config(tmp_path / "c.json")
        out = tmp_path / "run"
        assert cli.main(["simulate", "--config", cfg_path,
                         "--out", str(out)]) == 0
        fig_dir = tmp_path / "figs"
        assert cli.main(["render", str(out / "top_trial"),
                         "--out", str(fig_dir)]) == 0
        for fname in ("maps.png", "curves.png", "mask_truth.png",
                      "map_ccd.png", "map_ccd.scale.txt", "map_log_I1.png",
                      "roc_ccd.csv", "pr_rx.csv"):
            assert (fig_dir / fname).exists()

    def test_render_missing_artifacts(self, tmp_path, capsys):
        assert cli.main(["render", str(tmp_path)]) == 2
        assert "missing trial artifact" in capsys.readouterr().err

    def test_sweep_outputs(self, tmp_path):
        cfg_path = write_config(
            tmp_path / "c.json", detectors=["ccd"],
            sweep={"factor": "looks", "levels": [2, 6],
                   "trials_per_level": 2})
        out = tmp_path / "sweep"
        assert cli.main(["sweep", "--config", cfg_path,
                         "--out", str(out)]) == 0
        with open(out / "sweep_looks.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0] == "level"
        assert {r[0] for r in rows[1:]} == {"2", "6"}
        assert (out / "sweep_looks_roc_auc.png").exists()
        assert (out / "sweep_looks_ap.png").exists()

    def test_sweep_without_section(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path / "c.json")
        assert cli.main(["sweep", "--config", cfg_path]) == 2
        assert "no sweep section" in capsys.readouterr().err
