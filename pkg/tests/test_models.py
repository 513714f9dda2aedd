"""Model layer: phase states, certificates, auxiliary sampling, moments."""

import numpy as np
import pytest

from adhmc import (
    ModelValidationError,
    PhaseState,
    PotentialModel,
    SmoothnessCertificate,
    estimate_moments,
    make_kinetic,
    make_potential,
    sample_auxiliary,
    verify_certificate,
)
from adhmc.models import check_component_sum, finite_difference_gradient_check
from adhmc.zoo import _logcosh, numeric_coordinate_cdf

from conftest import BUILTIN_PAIRS


class TestPhaseState:
    def test_valid(self):
        st = PhaseState(q=[1.0, 2.0], p=[0.5, -0.5])
        assert st.dim == 2

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ModelValidationError):
            PhaseState(q=[1.0, 2.0], p=[0.5])

    def test_nonfinite_rejected(self):
        with pytest.raises(ModelValidationError):
            PhaseState(q=[np.nan], p=[0.0])


class TestSmoothnessCertificate:
    def test_ordering_enforced(self):
        with pytest.raises(ModelValidationError):
            SmoothnessCertificate(ell=2.0, lip=1.0)

    def test_negative_third_rejected(self):
        with pytest.raises(ModelValidationError):
            SmoothnessCertificate(ell=1.0, lip=1.0, third=-0.1)


class TestVerifyCertificate:
    def test_isotropic_gaussian_ratios_exact(self, rng):
        """For U = ||q||^2/2 both probe ratios are identically 1."""
        pot = make_potential("gauss-iso", 3)
        rep = verify_certificate(pot, 500, rng)
        assert rep.violations == 0
        np.testing.assert_allclose(rep.min_convexity_ratio, 1.0, atol=1e-12)
        np.testing.assert_allclose(rep.max_lipschitz_ratio, 1.0, atol=1e-12)

    def test_logcosh_second_derivative_range(self):
        """Dense grid scan: V''(x) = 1 + eps*sech^2(x - b) lies in [1, 1 + eps]."""
        x = np.linspace(-40.0, 40.0, 400_001)
        v2 = 1.0 + 0.5 / np.cosh(x - 1.0) ** 2
        assert v2.min() >= 1.0
        assert v2.max() <= 1.5 + 1e-12

    def test_logcosh_certificate_holds(self, rng):
        kin = make_kinetic("kin-logcosh", 2)
        assert kin.certificate.ell == 1.0
        assert kin.certificate.lip == 1.5
        rep = verify_certificate(kin, 2000, rng)
        assert rep.violations == 0

    def test_wrong_certificate_detected(self, rng):
        pot = make_potential("gauss-iso", 2)
        bad = PotentialModel(
            name="gauss-bad", dim=2, energy=pot.energy, gradient=pot.gradient,
            certificate=SmoothnessCertificate(ell=2.0, lip=2.0),
        )
        rep = verify_certificate(bad, 200, rng)
        assert rep.convexity_violations > 0

    def test_nonfinite_gradient_reported(self, rng):
        def bad_grad(q):
            q = np.asarray(q, dtype=float)
            out = q.copy()
            out[np.abs(q) > 1.0] = np.nan
            return out

        model = PotentialModel(
            name="nanny", dim=1, energy=lambda q: 0.5 * np.sum(q ** 2, axis=-1),
            gradient=bad_grad, certificate=SmoothnessCertificate(1.0, 1.0),
        )
        rep = verify_certificate(model, 300, rng)
        assert len(rep.nonfinite_points) > 0
        assert not rep.passed


class TestCertificateTightness:
    def test_isotropic_lipschitz_ratio_equals_lip(self, rng):
        pot = make_potential("gauss-iso", 4)
        rep = verify_certificate(pot, 300, rng)
        assert abs(rep.max_lipschitz_ratio - pot.certificate.lip) <= 1e-10

    def test_anisotropic_ratio_attained_on_stiff_axis(self):
        """A probe pair along the stiffest coordinate realizes L exactly."""
        pot = make_potential("gauss-aniso", 3, kappa=10.0)
        e = np.zeros(3)
        e[-1] = 1.0
        dg = pot.gradient(2.0 * e) - pot.gradient(0.5 * e)
        ratio = np.linalg.norm(dg) / 1.5
        assert abs(ratio - pot.certificate.lip) <= 1e-10


class TestAuxiliarySampling:
    def test_gaussian_moments(self, rng):
        kin = make_kinetic("kin-gauss", 2)
        draws = sample_auxiliary(kin, rng, 100_000)
        assert np.all(np.abs(draws.mean(axis=0)) < 4.0 / np.sqrt(100_000))
        cov = draws.T @ draws / draws.shape[0]
        assert np.all(np.abs(cov - np.eye(2)) < 0.02)

    def test_logcosh_matches_quadrature_cdf(self, rng):
        """Empirical CDF against the numerically integrated density."""
        kin = make_kinetic("kin-logcosh", 1)
        draws = sample_auxiliary(kin, rng, 100_000)[:, 0]
        cdf = numeric_coordinate_cdf(
            lambda x: 0.5 * x ** 2 + 0.5 * _logcosh(x - 1.0), -12.0, 12.0)
        xs = np.sort(draws)
        ks = np.max(np.abs(cdf(xs) - np.arange(1, xs.size + 1) / xs.size))
        assert ks < 0.01

    @pytest.mark.parametrize("kinetic_id", ["kin-gauss", "kin-logcosh"])
    def test_identical_streams_identical_draws(self, kinetic_id):
        kin = make_kinetic(kinetic_id, 3)
        a = sample_auxiliary(kin, np.random.default_rng(123), 64)
        b = sample_auxiliary(kin, np.random.default_rng(123), 64)
        np.testing.assert_array_equal(a, b)


class TestMoments:
    def test_gaussian_mu_sigma_identity_matrix(self, rng):
        kin = make_kinetic("kin-gauss", 2)
        est = estimate_moments(kin, 100_000, rng)
        se = est.standard_errors
        assert np.all(np.abs(est.mu - np.eye(2)) <= 3.0 * se["mu"] + 1e-12)
        assert np.all(np.abs(est.sigma - np.eye(2)) <= 1e-12)

    def test_gaussian_fourth_moment(self, rng):
        kin = make_kinetic("kin-gauss", 2)
        est = estimate_moments(kin, 100_000, rng)
        assert abs(est.sigma4 - 3.0) < 0.1

    def test_logcosh_mu_equals_sigma(self, rng):
        """Integration by parts: E[(V')^2] = E[V''] coordinatewise."""
        kin = make_kinetic("kin-logcosh", 1)
        est = estimate_moments(kin, 100_000, rng)
        se = est.standard_errors
        gap = abs(est.mu[0, 0] - est.sigma[0, 0])
        assert gap <= 4.0 * (se["mu"][0, 0] + se["sigma"][0, 0])
        # quadrature values coincide to quadrature accuracy
        assert abs(kin.moments.mu[0, 0] - kin.moments.sigma[0, 0]) < 1e-10

    @pytest.mark.parametrize("kinetic_id", ["kin-gauss", "kin-logcosh"])
    def test_integration_by_parts_identity(self, kinetic_id, rng):
        """mu_ij == sigma_ij within 4 combined standard errors at 1e5 draws."""
        kin = make_kinetic(kinetic_id, 2)
        est = estimate_moments(kin, 100_000, rng)
        se = est.standard_errors
        allow = 4.0 * (se["mu"] + se["sigma"]) + 1e-12
        assert np.all(np.abs(est.mu - est.sigma) <= allow)

    def test_centered_logcosh_zero_mean(self):
        kin = make_kinetic("kin-logcosh", 2, centered=True)
        assert np.all(np.abs(kin.moments.mean) < 1e-10)

    def test_trials_floor(self, rng):
        with pytest.raises(ValueError):
            estimate_moments(make_kinetic("kin-gauss", 1), 10, rng)


class TestGradientEnergyConsistency:
    @pytest.mark.parametrize("potential_id,kinetic_id", BUILTIN_PAIRS)
    def test_central_differences_match(self, potential_id, kinetic_id, rng):
        pot = make_potential(potential_id, 2)
        kin = make_kinetic(kinetic_id, 2)
        assert finite_difference_gradient_check(pot, 100, rng) <= 1e-5
        assert finite_difference_gradient_check(kin, 100, rng) <= 1e-5

    def test_component_sum_matches_gradient(self, rng):
        pot = make_potential("logistic-ridge", 3)
        assert check_component_sum(pot, 50, rng) <= 1e-10

    def test_component_energies_sum_to_energy(self, rng):
        pot = make_potential("logistic-ridge", 2)
        q = rng.standard_normal(2)
        total = sum(float(c.energy(q)) for c in pot.components)
        np.testing.assert_allclose(total, float(pot.energy(q)), rtol=1e-12)
