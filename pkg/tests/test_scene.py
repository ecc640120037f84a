import numpy as np
import pytest

from ccdbench import scene as sc


def make_change(**kw):
    defaults = dict(shape="square", center=(64, 64), extent=(10, 10))
    defaults.update(kw)
    return sc.ChangeSpec(**defaults)


class TestIncidenceField:
    def test_zero_ripple_is_constant(self):
        theta = sc.make_incidence_field(32, 16, 0.6, 0.0, seed=1)
        assert theta.shape == (16, 32)
        assert np.all(theta == 0.6)

    def test_ripple_bounds(self):
        center = np.deg2rad(35.0)
        amp = np.deg2rad(3.0)
        theta = sc.make_incidence_field(256, 256, center, amp, seed=7)
        assert theta.min() >= np.deg2rad(32.0) - 1e-12
        assert theta.max() <= np.deg2rad(38.0) + 1e-12

    def test_deterministic(self):
        a = sc.make_incidence_field(64, 64, 0.6, 0.05, seed=3)
        b = sc.make_incidence_field(64, 64, 0.6, 0.05, seed=3)
        np.testing.assert_array_equal(a, b)

    def test_bad_dimensions(self):
        with pytest.raises(ValueError):
            sc.make_incidence_field(0, 16, 0.6, 0.0, seed=1)

    def test_ripple_must_stay_positive(self):
        with pytest.raises(ValueError):
            sc.make_incidence_field(16, 16, 0.3, 0.4, seed=1)


class TestChangeSpec:
    def test_region_must_fit(self):
        spec = make_change(center=(5, 64), extent=(10, 10))
        with pytest.raises(ValueError):
            spec.mask(128, 128)

    def test_area_bounds(self):
        with pytest.raises(ValueError, match="0.5%"):
            make_change(extent=(2, 2)).mask(512, 512)
        with pytest.raises(ValueError, match="0.5%"):
            make_change(extent=(60, 60)).mask(128, 128)

    def test_mask_area_matches_analytic_shape(self):
        square = make_change(extent=(10, 10)).mask(128, 128)
        assert square.sum() == 21 * 21
        ellipse = make_change(shape="ellipse", extent=(12, 8)).mask(128, 128)
        analytic = np.pi * 12 * 8
        boundary_ring = np.pi * (12 + 8 + 2)  # one-pixel ring allowance
        assert abs(ellipse.sum() - analytic) <= boundary_ring

    def test_square_needs_equal_extents(self):
        with pytest.raises(ValueError):
            make_change(extent=(3, 4))


class TestBuildScene:
    def build(self, **kw):
        args = dict(base_class=sc.MATERIALS["dry_soil"],
                    change=make_change(eps_delta=14 + 3j),
                    veg_fraction=0.10, gamma_bg=0.92, gamma_chg=0.55,
                    bg_decorr=0.82, seed=5, width=128, height=128)
        args.update(kw)
        return sc.build_scene(**args)

    def test_epochs_equal_outside_mask(self):
        s1, s2 = self.build()
        out = ~s1.change_mask
        np.testing.assert_array_equal(s1.eps_r[out], s2.eps_r[out])
        np.testing.assert_array_equal(s1.sigma_s[out], s2.sigma_s[out])
        np.testing.assert_array_equal(s1.l_c[out], s2.l_c[out])

    def test_null_change_keeps_epochs_identical(self):
        s1, s2 = self.build(change=make_change())
        np.testing.assert_array_equal(s1.eps_r, s2.eps_r)
        np.testing.assert_array_equal(s1.sigma_s, s2.sigma_s)
        assert s1.change_mask.any()

    def test_dry_to_wet_soil_delta(self):
        s1, s2 = self.build(veg_fraction=0.0)
        inside = s1.change_mask
        assert np.all(s1.eps_r[inside] == 6 + 1j)
        assert np.all(s2.eps_r[inside] == 20 + 4j)

    def test_veg_fraction_within_one_point(self):
        s1, _ = self.build(width=256, height=256)
        count = s1.veg_mask.sum()
        assert 5898 <= count <= 7209  # 9%..11% of 256*256

    def test_out_of_range_delta_raises(self):
        with pytest.raises(ValueError):
            self.build(change=make_change(eps_delta=-10))

    def test_deterministic(self):
        a1, a2 = self.build()
        b1, b2 = self.build()
        np.testing.assert_array_equal(a1.theta, b1.theta)
        np.testing.assert_array_equal(a1.veg_mask, b1.veg_mask)
        np.testing.assert_array_equal(a2.eps_r, b2.eps_r)


class TestTrueCoherence:
    def test_field_contract(self):
        s1, s2 = TestBuildScene().build()
        gamma = sc.true_coherence_field(s1)
        assert np.all((gamma >= 0) & (gamma <= 1))
        assert np.all(gamma[s1.change_mask] == 0.55)
        bg = ~s1.change_mask & ~s1.veg_mask
        lo, hi = sc.BG_DECORR_RANGE
        assert np.all(gamma[bg] >= 0.92 * lo - 1e-12)
        assert np.all(gamma[bg] <= 0.92 * hi + 1e-12)

    def test_vegetation_penalty(self):
        s1, _ = TestBuildScene().build()
        gamma = sc.true_coherence_field(s1)
        veg = s1.veg_mask & ~s1.change_mask
        bg = ~s1.veg_mask & ~s1.change_mask
        assert gamma[veg].mean() < gamma[bg].mean()

    def test_product_example(self):
        # gamma_bg = 0.92 with decorr factor 0.80 -> 0.736 on a background pixel
        assert 0.92 * 0.80 == pytest.approx(0.736)
