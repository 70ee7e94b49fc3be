import numpy as np
import pytest

from imf_bridge import (
    DimensionMismatch,
    GaussianCoupling,
    GaussianDist,
    NoConvergence,
    SingularBlock,
    condition,
    coupling_marginal_error,
    kl_gaussian,
    make_reference,
    sinkhorn_bridge,
)


def closed_form_cross_cov(s_mu: float, s_nu: float, T: float) -> float:
    """Independent oracle for the d=1 Brownian static bridge.

    Writing the coupling precision as [[phi + a, -a], [-a, psi + a]] with
    a = 1/(2T) and imposing both marginal variances leads to a quadratic in
    the precision determinant whose positive root gives the cross-covariance

        c = (sqrt(1 + 4 a^2 s_mu s_nu) - 1) / (2 a).
    """
    a = 1.0 / (2.0 * T)
    return (np.sqrt(1.0 + 4.0 * a * a * s_mu * s_nu) - 1.0) / (2.0 * a)


def random_spd(rng, d):
    M = rng.standard_normal((d, d))
    return M @ M.T + (0.1 + rng.random()) * np.eye(d)


class TestCondition:
    def test_independent_blocks(self):
        joint = GaussianDist([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])
        out = condition(joint, [1], [5.0])
        np.testing.assert_allclose(out.mean, [0.0])
        np.testing.assert_allclose(out.cov, [[1.0]])

    def test_correlated(self):
        joint = GaussianDist([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]])
        out = condition(joint, [1], [2.0])
        np.testing.assert_allclose(out.mean, [1.0])
        np.testing.assert_allclose(out.cov, [[0.75]])

    def test_rank_deficient_joint(self):
        with pytest.raises(SingularBlock):
            condition((np.zeros(2), np.array([[1.0, 1.0], [1.0, 1.0]])), [1], [0.0])

    def test_remarginalization(self):
        """Conditioning at the observed mean returns the unconditional mean,
        and the conditional mean is affine (so it averages back exactly)."""
        rng = np.random.default_rng(2)
        for _ in range(20):
            d = rng.integers(2, 5)
            joint = GaussianDist(rng.standard_normal(d), random_spd(rng, d))
            obs = [int(d - 1)]
            m_obs = joint.mean[d - 1]
            at_mean = condition(joint, obs, [m_obs])
            np.testing.assert_allclose(at_mean.mean, joint.mean[: d - 1], atol=1e-10)
            delta = 0.7
            up = condition(joint, obs, [m_obs + delta]).mean
            down = condition(joint, obs, [m_obs - delta]).mean
            np.testing.assert_allclose(0.5 * (up + down), joint.mean[: d - 1], atol=1e-10)


class TestKlGaussian:
    def test_identical(self):
        p = GaussianDist([0.0], [[1.0]])
        assert kl_gaussian(p, p) == 0.0

    def test_mean_shift(self):
        # 0.5 * m^2 for unit variances
        assert kl_gaussian(GaussianDist([1.0], [[1.0]]), GaussianDist([0.0], [[1.0]])) == pytest.approx(0.5, abs=1e-14)

    def test_variance_ratio(self):
        expected = 0.5 * (2.0 - 1.0 - np.log(2.0))
        got = kl_gaussian(GaussianDist([0.0], [[2.0]]), GaussianDist([0.0], [[1.0]]))
        assert got == pytest.approx(expected, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            kl_gaussian(GaussianDist([0.0], [[1.0]]), GaussianDist([0.0, 0.0], np.eye(2)))

    def test_nonnegative_zero_iff_equal(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            d = int(rng.integers(1, 4))
            p = GaussianDist(rng.standard_normal(d), random_spd(rng, d))
            q = GaussianDist(rng.standard_normal(d), random_spd(rng, d))
            assert kl_gaussian(p, q) >= 0.0
            assert kl_gaussian(p, p) <= 1e-12
            if np.abs(p.mean - q.mean).max() > 1e-6:
                assert kl_gaussian(p, q) > 1e-12


class TestCouplingMarginalError:
    def test_product_is_exact(self):
        mu = GaussianDist([0.0], [[1.0]])
        nu = GaussianDist([1.0], [[2.0]])
        assert coupling_marginal_error(GaussianCoupling.product(mu, nu), mu, nu) == 0.0

    def test_shifted_block(self):
        mu = GaussianDist([0.0], [[1.0]])
        nu = GaussianDist([1.0], [[2.0]])
        pi = GaussianCoupling.from_blocks([0.0], [1.0], [[1.1]], [[0.0]], [[2.0]])
        assert coupling_marginal_error(pi, mu, nu) == pytest.approx(0.1)


class TestSinkhornBridge:
    def test_matches_algebraic_solution(self):
        mu = nu = GaussianDist([0.0], [[1.0]])
        ref = make_reference("brownian", d=1)
        rep = sinkhorn_bridge(mu, nu, ref, 4.0, tol=1e-12)
        assert rep.converged and rep.marginal_error <= 1e-12
        c = rep.coupling.cov0T[0, 0]
        assert 0.0 < c < 1.0
        np.testing.assert_allclose(c, closed_form_cross_cov(1.0, 1.0, 4.0), atol=1e-11)

    def test_unequal_variances_match_oracle(self):
        mu = GaussianDist([-0.3], [[0.6]])
        nu = GaussianDist([2.0], [[1.7]])
        ref = make_reference("brownian", d=1)
        rep = sinkhorn_bridge(mu, nu, ref, 3.0, tol=1e-12)
        np.testing.assert_allclose(
            rep.coupling.cov0T[0, 0], closed_form_cross_cov(0.6, 1.7, 3.0), atol=1e-10
        )
        np.testing.assert_allclose(rep.coupling.mean, [-0.3, 2.0], atol=1e-11)

    def test_huge_horizon_decouples(self):
        mu = nu = GaussianDist([0.0], [[1.0]])
        rep = sinkhorn_bridge(mu, nu, make_reference("brownian", d=1), 1e6, tol=1e-12)
        assert abs(rep.coupling.cov0T[0, 0]) <= 1e-3

    def test_one_sweep_cannot_converge(self):
        mu = nu = GaussianDist([0.0], [[1.0]])
        with pytest.raises(NoConvergence):
            sinkhorn_bridge(mu, nu, make_reference("brownian", d=1), 4.0, tol=1e-12, max_iter=1)

    def test_report_error_below_tolerance(self):
        mu = GaussianDist([0.0], [[1.0]])
        nu = GaussianDist([1.0], [[1.0]])
        rep = sinkhorn_bridge(mu, nu, make_reference("brownian", d=1), 4.0, tol=1e-12)
        assert coupling_marginal_error(rep.coupling, mu, nu) <= 1e-12

    def test_translation_equivariance(self):
        """Shifting both marginals by v shifts the coupling mean by (v, v)
        and leaves its covariance unchanged (Brownian reference)."""
        rng = np.random.default_rng(3)
        mu = GaussianDist([0.2, -0.4], random_spd(rng, 2))
        nu = GaussianDist([1.0, 0.5], random_spd(rng, 2))
        ref = make_reference("brownian", d=2)
        base = sinkhorn_bridge(mu, nu, ref, 5.0, tol=1e-12)
        v = np.array([3.0, -2.0])
        mu_s = GaussianDist(mu.mean + v, mu.cov)
        nu_s = GaussianDist(nu.mean + v, nu.cov)
        shifted = sinkhorn_bridge(mu_s, nu_s, ref, 5.0, tol=1e-12)
        assert shifted.marginal_error <= 1e-12
        np.testing.assert_allclose(shifted.coupling.cov, base.coupling.cov, atol=1e-10)
        np.testing.assert_allclose(
            shifted.coupling.mean, base.coupling.mean + np.concatenate([v, v]), atol=1e-10
        )

    @pytest.mark.parametrize("kind", ["brownian", "ou"])
    def test_equal_marginals_give_symmetric_cross_block(self, kind):
        A = np.array([[0.5, 0.1], [0.1, 0.8]]) if kind == "ou" else None
        ref = make_reference(kind, A=A, d=2)
        marg = GaussianDist([0.0, 0.0], [[1.5, 0.4], [0.4, 0.7]])
        rep = sinkhorn_bridge(marg, marg, ref, 3.0, tol=1e-12)
        np.testing.assert_allclose(rep.coupling.cov0T, rep.coupling.cov0T.T, atol=1e-9)

    def test_ou_reference_converges(self):
        mu = GaussianDist([0.0], [[1.0]])
        nu = GaussianDist([1.0], [[1.0]])
        ref = make_reference("ou", A=[[0.5]], d=1)
        rep = sinkhorn_bridge(mu, nu, ref, 4.0, tol=1e-12)
        assert rep.marginal_error <= 1e-12
