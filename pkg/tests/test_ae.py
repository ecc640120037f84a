import numpy as np
import pytest

from ccdbench import ae as aem
from ccdbench.detectors import InsufficientDataError
from ccdbench.features import FeatureStack


def stack_from_array(arr):
    arr = np.asarray(arr, float)
    planes = {f"p{i}": arr[..., i] for i in range(arr.shape[-1])}
    return FeatureStack(planes=planes, epsilon=1e-6, window=7, coh_window=7)


def small_cfg(**kw):
    defaults = dict(patch=8, epochs=10, n_tiles=128, seed=0, planes=None)
    defaults.update(kw)
    return aem.AeConfig(**defaults)


class TestConfig:
    def test_patch_must_be_multiple_of_four(self):
        with pytest.raises(ValueError):
            aem.AeConfig(patch=10)

    def test_epochs_positive(self):
        with pytest.raises(ValueError):
            aem.AeConfig(epochs=0)

    def test_default_planes_exclude_coherence(self):
        assert "coherence_mag" not in aem.AeConfig().planes


class TestGradients:
    def test_analytic_matches_finite_differences(self):
        rng = np.random.Generator(np.random.Philox(key=9))
        cfg = small_cfg()
        model = aem.AeModel(layers=aem._build_layers(3, cfg, rng), channels=3,
                            cfg=cfg, norm_mean=np.zeros(3), norm_std=np.ones(3))
        tiles = np.random.Generator(np.random.Philox(key=5)).normal(size=(2, 3, 8, 8))
        _, grads = model.loss_and_grads(tiles)
        eps = 1e-6
        probe_rng = np.random.Generator(np.random.Philox(key=6))
        worst = 0.0
        for p, g in zip(model.parameters, grads):
            flat_p, flat_g = p.ravel(), g.ravel()
            for idx in probe_rng.choice(flat_p.size, size=min(6, flat_p.size),
                                        replace=False):
                orig = flat_p[idx]
                flat_p[idx] = orig + eps
                lo_hi = model.loss_and_grads(tiles)[0]
                flat_p[idx] = orig - eps
                lo_lo = model.loss_and_grads(tiles)[0]
                flat_p[idx] = orig
                fd = (lo_hi - lo_lo) / (2 * eps)
                denom = max(abs(fd), abs(flat_g[idx]), 1e-8)
                worst = max(worst, abs(fd - flat_g[idx]) / denom)
        assert worst < 1e-4


class TestStableTiles:
    def test_counts_fully_inside_tiles(self):
        mask = np.zeros((20, 20), bool)
        mask[2:14, 3:19] = True  # 12 x 16 stable block
        pos = aem.stable_tile_positions(mask, 8)
        assert pos.shape[0] == (12 - 8 + 1) * (16 - 8 + 1)
        for y, x in pos:
            assert mask[y:y + 8, x:x + 8].all()

    def test_insufficient_tiles_raise(self):
        arr = np.random.default_rng(0).normal(size=(24, 24, 2))
        mask = np.zeros((24, 24), bool)
        mask[:10, :10] = True
        with pytest.raises(InsufficientDataError):
            aem.train_ae(stack_from_array(arr), mask, small_cfg())


class TestTraining:
    def train_on_noise(self, seed=1, size=48, d=3, epochs=10):
        rng = np.random.Generator(np.random.Philox(key=seed))
        arr = rng.normal(size=(size, size, d))
        stack = stack_from_array(arr)
        cfg = small_cfg(seed=seed, epochs=epochs)
        return stack, aem.train_ae(stack, np.ones((size, size), bool), cfg)

    def test_constant_stack_trains_to_zero_loss(self):
        stack = stack_from_array(np.full((48, 48, 3), 7.0))
        model = aem.train_ae(stack, np.ones((48, 48), bool), small_cfg(epochs=2))
        assert model.epoch_losses[-1] < 1e-12

    def test_loss_decreases(self):
        _, model = self.train_on_noise(epochs=15)
        assert model.epoch_losses[-1] < model.epoch_losses[0]
        assert len(model.epoch_losses) == 15

    def test_deterministic(self):
        _, a = self.train_on_noise(seed=2)
        _, b = self.train_on_noise(seed=2)
        for pa, pb in zip(a.parameters, b.parameters):
            np.testing.assert_array_equal(pa, pb)

    def test_offset_block_scores_above_training_texture(self):
        stack, model = self.train_on_noise(seed=3, size=64, epochs=20)
        arr = stack.as_array().copy()
        arr[20:36, 20:36] += 5.0
        scores = aem.ae_score_map(stack_from_array(arr), model).scores
        block = np.zeros((64, 64), bool)
        block[20:36, 20:36] = True
        assert np.quantile(scores[~block], 0.90) < scores[block].mean()

    def test_score_map_shape_and_validity(self):
        stack, model = self.train_on_noise(seed=4)
        sm = aem.ae_score_map(stack, model)
        assert sm.scores.shape == (48, 48)
        assert sm.detector == "ae"
        assert np.all(np.isfinite(sm.scores)) and np.all(sm.scores >= 0)

    def test_non_multiple_scene_covered(self):
        rng = np.random.Generator(np.random.Philox(key=7))
        arr = rng.normal(size=(50, 53, 2))
        stack = stack_from_array(arr)
        model = aem.train_ae(stack, np.ones((50, 53), bool), small_cfg(epochs=2))
        sm = aem.ae_score_map(stack, model)
        assert sm.scores.shape == (50, 53)
        assert np.all(np.isfinite(sm.scores))

    def test_channel_mismatch_rejected(self):
        stack, model = self.train_on_noise(seed=8)
        wrong = stack_from_array(np.zeros((48, 48, 5)))
        with pytest.raises(ValueError):
            aem.ae_score_map(wrong, model)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        rng = np.random.Generator(np.random.Philox(key=11))
        arr = rng.normal(size=(48, 48, 3))
        stack = stack_from_array(arr)
        model = aem.train_ae(stack, np.ones((48, 48), bool), small_cfg(epochs=2))
        wpath, mpath = tmp_path / "w.bin", tmp_path / "w.txt"
        aem.save_model(model, wpath, mpath)
        loaded = aem.load_model(wpath, mpath)
        assert loaded.cfg.planes is None
        np.testing.assert_array_equal(loaded.norm_mean, model.norm_mean)
        for pa, pb in zip(model.parameters, loaded.parameters):
            np.testing.assert_array_equal(pa, pb)
        np.testing.assert_array_equal(
            aem.ae_score_map(stack, loaded).scores,
            aem.ae_score_map(stack, model).scores)

    def test_manifest_is_text_and_weights_float64(self, tmp_path):
        rng = np.random.Generator(np.random.Philox(key=12))
        arr = rng.normal(size=(40, 40, 2))
        stack = stack_from_array(arr)
        model = aem.train_ae(stack, np.ones((40, 40), bool), small_cfg(epochs=1))
        wpath, mpath = tmp_path / "w.bin", tmp_path / "w.txt"
        aem.save_model(model, wpath, mpath)
        text = mpath.read_text()
        assert text.startswith("ccdbench-ae v1 float64 little-endian")
        n_params = sum(p.size for p in model.parameters) + 2 * model.channels
        assert wpath.stat().st_size == 8 * n_params

    def test_bad_manifest_rejected(self, tmp_path):
        (tmp_path / "w.txt").write_text("something else\n")
        with pytest.raises(ValueError):
            aem.load_model(tmp_path / "w.bin", tmp_path / "w.txt")
