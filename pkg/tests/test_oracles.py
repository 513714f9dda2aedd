"""Gradient oracles: unbiasedness, certificates, frozen realizations."""

import math

import numpy as np
import pytest

from adhmc import (
    Component,
    GradientOracle,
    OracleConfigurationError,
    PotentialModel,
    SmoothnessCertificate,
    check_unbiasedness,
    exact_oracle,
    make_potential,
    minibatch_oracle,
    verify_certificate,
)


def _toy_two_component() -> PotentialModel:
    """1-d potential with grad U1 = q and grad U2 = 2q, so grad U = 3q."""
    c1 = Component(
        energy=lambda q: 0.5 * np.sum(np.asarray(q) ** 2, axis=-1),
        gradient=lambda q: np.asarray(q, dtype=float),
        certificate=SmoothnessCertificate(1.0, 1.0),
    )
    c2 = Component(
        energy=lambda q: np.sum(np.asarray(q) ** 2, axis=-1),
        gradient=lambda q: 2.0 * np.asarray(q, dtype=float),
        certificate=SmoothnessCertificate(2.0, 2.0),
    )
    return PotentialModel(
        name="toy-two", dim=1,
        energy=lambda q: 1.5 * np.sum(np.asarray(q) ** 2, axis=-1),
        gradient=lambda q: 3.0 * np.asarray(q, dtype=float),
        certificate=SmoothnessCertificate(3.0, 3.0),
        components=(c1, c2),
    )


def _toy_identical_components() -> PotentialModel:
    """U1 = U2 = q^2/4: every size-1 batch draw reproduces grad U exactly."""
    comp = Component(
        energy=lambda q: 0.25 * np.sum(np.asarray(q) ** 2, axis=-1),
        gradient=lambda q: 0.5 * np.asarray(q, dtype=float),
        certificate=SmoothnessCertificate(0.5, 0.5),
    )
    return PotentialModel(
        name="toy-same", dim=1,
        energy=lambda q: 0.5 * np.sum(np.asarray(q) ** 2, axis=-1),
        gradient=lambda q: np.asarray(q, dtype=float),
        certificate=SmoothnessCertificate(1.0, 1.0),
        components=(comp, comp),
    )


class TestExactOracle:
    def test_draw_is_gradient(self, rng):
        pot = make_potential("gauss-iso", 3)
        oracle = exact_oracle(pot)
        q = rng.standard_normal(3)
        np.testing.assert_array_equal(oracle.draw(q, rng), q)

    def test_moments_collapse_to_powers(self):
        pot = make_potential("gauss-aniso", 2, kappa=4.0)
        m = exact_oracle(pot).mean_lip_moments
        lip = pot.certificate.lip
        assert (m.one, m.two) == (lip, lip ** 2)
        assert m.three_half == pytest.approx(lip ** 1.5, rel=1e-15)

    def test_draws_independent_of_stream(self, rng):
        pot = make_potential("gauss-iso", 2)
        oracle = exact_oracle(pot)
        q = rng.standard_normal(2)
        a = oracle.draw(q, np.random.default_rng(1))
        b = oracle.draw(q, np.random.default_rng(2))
        np.testing.assert_array_equal(a, b)


class TestMinibatchOracle:
    def test_identical_components_deterministic(self, rng):
        oracle = minibatch_oracle(_toy_identical_components(), 1, rng)
        q = np.array([0.7])
        for _ in range(10):
            np.testing.assert_allclose(oracle.draw(q, rng), q, rtol=1e-15)

    def test_two_point_distribution(self, rng):
        """Draws take values 2q and 4q; their average converges to 3q."""
        oracle = minibatch_oracle(_toy_two_component(), 1, rng)
        q = np.array([1.0])
        draws = np.array([oracle.draw(q, rng)[0] for _ in range(2000)])
        values = set(np.round(draws, 12))
        assert values == {2.0, 4.0}
        assert abs(draws.mean() - 3.0) < 4.0 * draws.std(ddof=1) / math.sqrt(draws.size)

    def test_lip_moments_exhaustive_enumeration(self, rng):
        # n=2, B=1: L^w takes values 2*1 and 2*2 with equal probability.
        m = minibatch_oracle(_toy_two_component(), 1, rng).mean_lip_moments
        assert m.one == pytest.approx(3.0, rel=1e-15)
        assert m.two == pytest.approx((4.0 + 16.0) / 2.0, rel=1e-15)
        assert m.three_half == pytest.approx((2.0 ** 1.5 + 4.0 ** 1.5) / 2.0, rel=1e-15)

    def test_lip_moment_first_matches_component_sum(self, rng):
        """E[L^w] = sum of component Lipschitz constants, up to MC error."""
        pot = make_potential("logistic-ridge", 2)
        oracle = minibatch_oracle(pot, 10, rng)
        exact = sum(c.certificate.lip for c in pot.components)
        assert oracle.mean_lip_moments.one == pytest.approx(exact, rel=0.02)

    def test_certificate_bounds_extremes(self, rng):
        oracle = minibatch_oracle(_toy_two_component(), 1, rng)
        assert oracle.certificate_bounds.ell == pytest.approx(2.0)
        assert oracle.certificate_bounds.lip == pytest.approx(4.0)

    def test_configuration_errors(self, rng):
        pot = make_potential("gauss-iso", 1)
        with pytest.raises(OracleConfigurationError):
            minibatch_oracle(pot, 1, rng)  # no components
        with pytest.raises(OracleConfigurationError):
            minibatch_oracle(_toy_two_component(), 3, rng)  # B > n


class TestFrozenRealizations:
    def test_frozen_draw_passes_realized_certificate(self, rng):
        pot = make_potential("logistic-ridge", 2)
        oracle = minibatch_oracle(pot, 10, rng)
        frozen = oracle.freeze(rng)
        rep = verify_certificate(frozen, 300, rng)
        assert rep.violations == 0
        assert frozen.certificate.ell >= oracle.certificate_bounds.ell - 1e-12
        assert frozen.certificate.lip <= oracle.certificate_bounds.lip + 1e-12

    def test_replay_is_bit_identical(self):
        pot = make_potential("logistic-ridge", 2)
        oracle = minibatch_oracle(pot, 5, np.random.default_rng(0))
        q = np.linspace(-1.0, 1.0, 8).reshape(4, 2)
        a = oracle.draw_batch(q, np.random.default_rng(99))
        b = oracle.draw_batch(q, np.random.default_rng(99))
        np.testing.assert_array_equal(a, b)

    def test_freeze_batch_matches_freeze_semantics(self, rng):
        pot = make_potential("logistic-ridge", 2)
        oracle = minibatch_oracle(pot, 10, rng)
        fb = oracle.freeze_batch(16, rng)
        Q = rng.standard_normal((16, 2))
        g = fb.gradient(Q)
        assert g.shape == (16, 2)
        assert np.all(np.isfinite(fb.energy(Q)))
        assert np.all(fb.lipschitz >= oracle.certificate_bounds.ell)


class TestUnbiasedness:
    def test_exact_oracle_zero_deviation(self, rng):
        pot = make_potential("gauss-iso", 2)
        rep = check_unbiasedness(exact_oracle(pot), pot, 5, 100, rng)
        assert rep.max_standardized_deviation == 0.0
        assert rep.passed

    def test_two_point_minibatch_under_threshold(self, rng):
        pot = _toy_two_component()
        oracle = minibatch_oracle(pot, 1, rng)
        rep = check_unbiasedness(oracle, pot, 10, 10_000, rng)
        assert rep.passed

    def test_logistic_minibatch_under_threshold(self, rng):
        pot = make_potential("logistic-ridge", 2)
        oracle = minibatch_oracle(pot, 10, rng)
        rep = check_unbiasedness(oracle, pot, 20, 10_000, rng)
        assert rep.passed

    def test_biased_oracle_caught(self, rng):
        """A constant shift has zero spread, so the deviation diverges."""
        pot = make_potential("gauss-iso", 1)

        class Biased(GradientOracle):
            name = "biased"

            def draw_batch(self, Q, rng0):
                return np.asarray(pot.gradient(Q), dtype=float) + 0.1

        rep = check_unbiasedness(Biased(), pot, 5, 10_000, rng)
        assert rep.max_standardized_deviation > 4.0
        assert not rep.passed
