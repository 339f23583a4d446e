"""Whittle-Matern covariance, the SPDE sampler, and the interface GP."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from pyeki.fields import (
    GridSpec,
    MaternHyper,
    matern_covariance,
    sample_interface_gp,
    sample_wm_field,
    wm_factorised_sampler,
    wm_operator,
)


def bessel_k_quadrature(nu: float, x: float) -> float:
    """Independent oracle: K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt."""
    value, _ = quad(lambda t: math.exp(-x * math.cosh(t)) * math.cosh(nu * t), 0.0, 30.0,
                    limit=200)
    return value


class TestMaternCovariance:
    def test_zero_distance_is_variance(self):
        hyper = MaternHyper(sigma=1.7, ell=(2.0, 3.0))
        assert matern_covariance([1.0, 1.0], [1.0, 1.0], hyper) == 1.7**2

    @pytest.mark.parametrize("r", [0.1, 0.5, 1.0, 2.0, 5.0])
    def test_half_regularity_reduces_to_exponential(self, r):
        # nu = 1/2 arises for d = 3 lengthscales; closed form exp(-r)
        hyper = MaternHyper(sigma=1.0, ell=(1.0, 1.0, 1.0))
        assert hyper.nu == 0.5
        value = matern_covariance([0.0, 0.0, 0.0], [r, 0.0, 0.0], hyper)
        assert value == pytest.approx(math.exp(-r), abs=1e-12)

    def test_unit_regularity_matches_bessel_oracle(self):
        hyper = MaternHyper(sigma=1.0, ell=(1.0, 1.0))
        assert hyper.nu == 1.0
        value = matern_covariance([0.0, 0.0], [1.0, 0.0], hyper)
        assert value == pytest.approx(bessel_k_quadrature(1.0, 1.0), abs=1e-9)
        assert value == pytest.approx(0.601907, abs=1e-6)

    def test_lengthscale_weighted_distance(self):
        hyper = MaternHyper(sigma=2.0, ell=(10.0, 1.0))
        a = matern_covariance([0.0, 0.0], [10.0, 0.0], hyper)
        b = matern_covariance([0.0, 0.0], [0.0, 1.0], hyper)
        assert a == pytest.approx(b, rel=1e-12)

    def test_monotone_decay(self):
        hyper = MaternHyper(sigma=1.0, ell=(1.0, 1.0))
        values = [matern_covariance([0.0, 0.0], [r, 0.0], hyper) for r in np.linspace(0, 4, 30)]
        assert all(x > y for x, y in zip(values, values[1:]))


class TestHyper:
    def test_regularity_follows_dimension(self):
        assert MaternHyper(1.0, (1.0, 1.0)).nu == 1.0
        assert MaternHyper(1.0, (1.0, 1.0, 1.0)).nu == 0.5

    def test_robin_defaults_scale_with_lengthscale(self):
        hyper = MaternHyper(1.0, (100.0, 10.0))
        assert hyper.lambda_robin == (142.0, 14.2)

    def test_noise_amplitude_two_dimensional(self):
        hyper = MaternHyper(sigma=2.0, ell=(1.0, 1.0))
        assert hyper.alpha_coef == pytest.approx(4.0 * 4.0 * math.pi)

    def test_invalid_hyper_rejected(self):
        with pytest.raises(ValueError):
            MaternHyper(0.0, (1.0, 1.0))
        with pytest.raises(ValueError):
            MaternHyper(1.0, (1.0, -1.0))


class TestWmSampler:
    grid = GridSpec(24, 24, 1.0 / 24, 1.0 / 24)
    hyper = MaternHyper(sigma=1.0, ell=(0.25, 0.25))

    def test_zero_noise_gives_zero_field(self):
        field = sample_wm_field(np.zeros(self.grid.n_cells), self.hyper, self.grid)
        np.testing.assert_array_equal(field, 0.0)

    def test_linearity_in_the_noise(self):
        rng = np.random.default_rng(0)
        noise = rng.standard_normal(self.grid.n_cells)
        one = sample_wm_field(noise, self.hyper, self.grid)
        two = sample_wm_field(2.0 * noise, self.hyper, self.grid)
        np.testing.assert_allclose(two, 2.0 * one, rtol=1e-10, atol=1e-12)

    def test_operator_is_symmetric(self):
        op = wm_operator(self.hyper, self.grid)
        dense = op.toarray()
        np.testing.assert_allclose(dense, dense.T, rtol=0, atol=1e-12)

    def test_exact_covariance_matches_closed_form(self):
        # the discrete sampler's covariance (via the factored operator) agrees
        # with the continuum covariance at interior points
        grid = GridSpec(32, 32, 1.0 / 32, 1.0 / 32)
        op = wm_operator(self.hyper, grid).toarray()
        inv = np.linalg.inv(op)
        scale2 = self.hyper.alpha_coef * 0.25 * 0.25 / grid.cell_area
        cov = scale2 * inv @ inv.T
        centre = (16, 16)
        c_idx = centre[0] * grid.nz + centre[1]
        worst = 0.0
        for i, k in [(16, 20), (20, 16), (12, 12), (16, 24), (8, 16)]:
            exact = matern_covariance(
                [grid.x_centres[centre[0]], grid.z_centres[centre[1]]],
                [grid.x_centres[i], grid.z_centres[k]],
                self.hyper,
            )
            worst = max(worst, abs(cov[c_idx, i * grid.nz + k] - exact))
        assert worst < 0.05

    def test_anisotropic_lengthscales_shape_the_covariance(self):
        grid = GridSpec(32, 32, 1.0 / 32, 1.0 / 32)
        hyper = MaternHyper(sigma=1.0, ell=(0.5, 0.125))
        draw = wm_factorised_sampler(hyper, grid)
        rng = np.random.default_rng(1)
        fields = np.array([draw(rng.standard_normal(grid.n_cells)) for _ in range(3000)])
        fields = fields.reshape(-1, grid.nx, grid.nz)
        # correlation four cells away along x exceeds that along z
        corr_x = np.corrcoef(fields[:, 16, 16], fields[:, 20, 16])[0, 1]
        corr_z = np.corrcoef(fields[:, 16, 16], fields[:, 16, 20])[0, 1]
        assert corr_x > corr_z + 0.2

    def test_wrong_noise_length_rejected(self):
        with pytest.raises(ValueError):
            sample_wm_field(np.zeros(5), self.hyper, self.grid)


class TestInterfaceGp:
    def test_zero_noise_returns_mean(self):
        out = sample_interface_gp(np.zeros(25), -350.0, 80.0, 500.0, np.linspace(30, 1470, 25))
        np.testing.assert_array_equal(out, -350.0)

    def test_single_point_scales_by_sigma(self):
        out = sample_interface_gp(np.ones(1), -350.0, 80.0, 500.0, np.array([750.0]))
        assert out[0] == pytest.approx(-270.0, abs=1e-4)

    def test_marginal_variance_matches_kernel(self):
        x = np.linspace(30.0, 1470.0, 25)
        rng = np.random.default_rng(6)
        draws = np.array(
            [sample_interface_gp(rng.standard_normal(25), 0.0, 80.0, 500.0, x) for _ in range(10_000)]
        )
        var = draws.var(axis=0, ddof=1)
        np.testing.assert_allclose(var, 80.0**2, rtol=0.1)

    def test_unsorted_coordinates_rejected(self):
        with pytest.raises(ValueError):
            sample_interface_gp(np.zeros(2), 0.0, 1.0, 1.0, np.array([2.0, 1.0]))

    def test_smoothness_grows_with_lengthscale(self):
        x = np.linspace(0.0, 1500.0, 40)
        rng_a = np.random.default_rng(9)
        noise = rng_a.standard_normal(40)
        rough = sample_interface_gp(noise, 0.0, 1.0, 50.0, x)
        smooth = sample_interface_gp(noise, 0.0, 1.0, 2000.0, x)
        assert np.abs(np.diff(smooth)).mean() < np.abs(np.diff(rough)).mean()
