"""Gain localisation and adaptive inflation."""

import numpy as np
import pytest

from pyeki.ensemble import LocalisationConfig, ObservationModel, eki_update, estimate_stats
from pyeki.robustness import (
    apply_inflation,
    augment_with_variates,
    bootstrap_localisation,
    inflation_factor,
    localisation_weights,
)


class TestLocalisationWeights:
    def test_zero_bootstrap_spread_gives_full_trust(self):
        psi = localisation_weights(np.array([[2.0]]), np.array([[0.0]]), beta=0.6)
        assert psi[0, 0] == 1.0

    def test_scripted_value_at_unit_ratio(self):
        # V = 1, beta = 0.6: 1 / (1 + 1 * (1 + 1/0.36)) = 0.209302...
        psi = localisation_weights(np.array([[1.5]]), np.array([[1.5]]), beta=0.6)
        assert psi[0, 0] == pytest.approx(0.209302, abs=1e-6)

    def test_zero_gain_is_fully_suppressed(self):
        psi = localisation_weights(np.array([[0.0]]), np.array([[0.3]]), beta=0.6)
        assert psi[0, 0] == 0.0

    def test_bounded_and_monotone_in_spread(self):
        gain = np.ones((1, 50))
        spreads = np.linspace(0.0, 10.0, 50)[None, :]
        psi = localisation_weights(gain, spreads, beta=0.6)
        assert np.all(psi >= 0.0) and np.all(psi <= 1.0)
        assert np.all(np.diff(psi[0]) <= 0.0)


class TestBootstrapLocalisation:
    def _setup(self, seed=0, m=40):
        rng = np.random.default_rng(seed)
        params = rng.standard_normal((5, m))
        preds = rng.standard_normal((3, m)) + 0.5 * params[:3]
        obs = ObservationModel(np.zeros(3), np.ones(3))
        return params, preds, obs

    def test_entries_in_unit_interval(self):
        params, preds, obs = self._setup()
        psi = bootstrap_localisation(
            params, preds, obs, 1.0, LocalisationConfig(), np.random.default_rng(1)
        )
        assert psi.shape == (5, 3)
        assert np.all(psi >= 0.0) and np.all(psi <= 1.0)

    def test_matches_manual_bootstrap_oracle(self):
        # recompute with the identical resample indices drawn from a copied rng
        params, preds, obs = self._setup(seed=3)
        config = LocalisationConfig(n_bootstrap=20, beta=0.6)
        psi = bootstrap_localisation(
            params, preds, obs, 2.0, config, np.random.default_rng(5)
        )
        from pyeki.ensemble import compute_kalman_gain

        rng = np.random.default_rng(5)
        gain = compute_kalman_gain(estimate_stats(params, preds), obs, 2.0)
        boots = []
        for _ in range(config.n_bootstrap):
            idx = rng.integers(0, params.shape[1], size=params.shape[1])
            boots.append(
                compute_kalman_gain(estimate_stats(params[:, idx], preds[:, idx]), obs, 2.0)
            )
        sigma = np.std(np.array(boots), axis=0, ddof=1)
        expected = 1.0 / (1.0 + (sigma / gain) ** 2 * (1.0 + 1.0 / 0.36))
        np.testing.assert_allclose(psi, expected, rtol=1e-12)

    def test_default_config_values(self):
        config = LocalisationConfig()
        assert config.n_bootstrap == 50
        assert config.beta == 0.6

    def test_strong_signal_entries_trusted_more_than_noise(self):
        # a strongly informative coordinate should be damped less than an
        # uncorrelated one
        rng = np.random.default_rng(11)
        m = 60
        signal = rng.standard_normal((1, m))
        junk = rng.standard_normal((1, m))
        params = np.vstack([signal, junk])
        preds = signal + 0.05 * rng.standard_normal((1, m))
        obs = ObservationModel(np.zeros(1), np.ones(1))
        psi = bootstrap_localisation(
            params, preds, obs, 1.0, LocalisationConfig(), np.random.default_rng(2)
        )
        assert psi[0, 0] > psi[1, 0]


class TestVariateAugmentation:
    def test_rows_standardised_exactly(self):
        rng = np.random.default_rng(0)
        params = rng.standard_normal((4, 30))
        augmented, rows = augment_with_variates(params, 10, rng)
        assert augmented.shape == (14, 30)
        np.testing.assert_array_equal(rows, np.arange(4, 14))
        block = augmented[rows]
        np.testing.assert_allclose(block.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(block.std(axis=1), 1.0, atol=1e-12)

    def test_parameter_rows_untouched(self):
        rng = np.random.default_rng(1)
        params = rng.standard_normal((3, 10))
        augmented, _ = augment_with_variates(params, 5, rng)
        np.testing.assert_array_equal(augmented[:3], params)

    def test_two_point_standardisation_is_plus_minus_one(self):
        augmented, rows = augment_with_variates(
            np.zeros((1, 2)), 2, np.random.default_rng(4)
        )
        block = np.sort(augmented[rows], axis=1)
        np.testing.assert_allclose(block, np.tile([-1.0, 1.0], (2, 1)), atol=1e-12)

    def test_variates_uncorrelated_with_parameters(self):
        rng = np.random.default_rng(7)
        j = 10_000
        params = rng.standard_normal((2, j))
        augmented, rows = augment_with_variates(params, 3, rng)
        for r in rows:
            for p in range(2):
                corr = np.corrcoef(augmented[r], augmented[p])[0, 1]
                assert abs(corr) < 4.0 / np.sqrt(j)

    def test_variate_rows_do_not_alter_parameter_updates(self):
        # the parameter block of the gain is unchanged by the extra rows
        rng = np.random.default_rng(9)
        params = rng.standard_normal((4, 25))
        preds = rng.standard_normal((2, 25))
        obs = ObservationModel(np.zeros(2), np.ones(2))
        augmented, _ = augment_with_variates(params, 6, np.random.default_rng(10))
        plain = eki_update(params, preds, obs, 1.0, rng=None)
        combined = eki_update(augmented, preds, obs, 1.0, rng=None)
        np.testing.assert_allclose(combined[:4], plain, rtol=0, atol=1e-13)


class TestInflation:
    def test_hand_evaluated_factor(self):
        # stds {0.9, 1.0} -> rho = 1/0.95
        block = np.vstack(
            [
                0.9 * np.array([-1.0, 1.0]),
                np.array([-1.0, 1.0]),
            ]
        )
        assert inflation_factor(block) == pytest.approx(1.0 / 0.95, rel=1e-12)
        assert inflation_factor(block) == pytest.approx(1.052632, abs=1e-6)

    def test_identity_when_no_contraction(self):
        block = np.vstack([np.array([-1.0, 1.0]), np.array([1.0, -1.0])])
        assert inflation_factor(block) == pytest.approx(1.0, rel=1e-15)

    def test_degenerate_block_raises(self):
        with pytest.raises(ValueError):
            inflation_factor(np.zeros((3, 4)))

    def test_apply_identity(self):
        rng = np.random.default_rng(3)
        params = rng.standard_normal((3, 9))
        np.testing.assert_array_equal(apply_inflation(params, 1.0), params)

    def test_mean_invariant_and_variance_scaled(self):
        rng = np.random.default_rng(4)
        params = rng.standard_normal((5, 40)) * 3.0 + 1.0
        rho = 1.07
        inflated = apply_inflation(params, rho)
        np.testing.assert_allclose(inflated.mean(axis=1), params.mean(axis=1), atol=1e-12)
        np.testing.assert_allclose(
            inflated.var(axis=1, ddof=1),
            rho**2 * params.var(axis=1, ddof=1),
            rtol=1e-10,
        )

    def test_hand_evaluated_scalar_inflation(self):
        out = apply_inflation(np.array([[0.0, 2.0]]), 1.05)
        np.testing.assert_allclose(out, [[-0.05, 2.05]], atol=1e-12)
