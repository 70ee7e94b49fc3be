import numpy as np
import pytest

from imf_bridge import (
    InvalidTimeOrder,
    NonSPDMatrix,
    bridge_conditional,
    make_reference,
    score_fields,
    structural_constants,
    transition,
)

LN2 = np.log(2.0)


class TestMakeReference:
    def test_brownian(self):
        ref = make_reference("brownian", d=1)
        assert ref.d == 1 and ref.A is None

    def test_ou_scalar(self):
        ref = make_reference("ou", A=[[0.5]], d=1)
        np.testing.assert_allclose(ref.A, [[0.5]])

    def test_indefinite_matrix_rejected(self):
        with pytest.raises(NonSPDMatrix):
            make_reference("ou", A=[[0.0, 1.0], [1.0, 0.0]], d=2)

    def test_asymmetric_rejected(self):
        with pytest.raises(NonSPDMatrix):
            make_reference("ou", A=[[1.0, 0.5], [0.0, 1.0]], d=2)


class TestTransition:
    def test_brownian_unit_interval(self):
        tr = transition(make_reference("brownian", d=1), 0.0, 1.0)
        np.testing.assert_allclose(tr.M, [[1.0]])
        np.testing.assert_allclose(tr.S, [[2.0]])

    def test_ou_log2(self):
        # with rate 0.5 the decay over ln 2 is exactly one halving and the
        # accumulated variance integral evaluates to 1 - 1/4
        tr = transition(make_reference("ou", A=[[0.5]], d=1), 0.0, LN2)
        np.testing.assert_allclose(tr.M, [[0.5]], rtol=1e-14)
        np.testing.assert_allclose(tr.S, [[0.75]], rtol=1e-14)

    def test_degenerate_interval(self):
        with pytest.raises(InvalidTimeOrder):
            transition(make_reference("brownian", d=1), 0.0, 0.0)

    @pytest.mark.parametrize("kind", ["brownian", "ou"])
    def test_chapman_kolmogorov(self, kind):
        """Composing s->u with u->t reproduces s->t in both M and S."""
        A = np.array([[0.7, 0.2], [0.2, 0.4]]) if kind == "ou" else None
        ref = make_reference(kind, A=A, d=2)
        rng = np.random.default_rng(11)
        for _ in range(10):
            s, u, t = np.sort(rng.uniform(0.01, 3.0, size=3))
            if t - u < 1e-3 or u - s < 1e-3:
                continue
            g_su, g_ut, g_st = transition(ref, s, u), transition(ref, u, t), transition(ref, s, t)
            np.testing.assert_allclose(g_ut.M @ g_su.M, g_st.M, rtol=1e-10)
            np.testing.assert_allclose(g_ut.M @ g_su.S @ g_ut.M.T + g_ut.S, g_st.S, rtol=1e-10)


class TestScoreFields:
    def test_brownian_forward_is_mean_reverting_line(self):
        # (y_T - y_t) / (T - t), here at t=0.5, T=1, (y_t, y_T) = (0, 2) -> 4
        sf = score_fields(make_reference("brownian", d=1), 0.5, 1.0)
        np.testing.assert_allclose(sf.forward(np.array([0.0]), np.array([2.0])), [4.0])
        np.testing.assert_allclose(sf.forward.C_first, [[-2.0]])
        np.testing.assert_allclose(sf.forward.C_second, [[2.0]])

    def test_ou_forward_value(self):
        # 2 M S^-1 (y_T - M y_0) with M=1/2, S=3/4 at (0, 1) gives 4/3
        sf = score_fields(make_reference("ou", A=[[0.5]], d=1), 0.0, LN2)
        np.testing.assert_allclose(sf.forward(np.array([0.0]), np.array([1.0])), [4.0 / 3.0], rtol=1e-13)

    def test_time_order(self):
        with pytest.raises(InvalidTimeOrder):
            score_fields(make_reference("brownian", d=1), 1.0, 1.0)

    @pytest.mark.parametrize("kind", ["brownian", "ou"])
    def test_forward_matches_finite_difference_gradient(self, kind):
        """The forward field is exactly twice the gradient in the conditioning
        state of the log transition density."""
        A = np.array([[0.8, -0.1], [-0.1, 0.5]]) if kind == "ou" else None
        ref = make_reference(kind, A=A, d=2)
        t, T = 0.4, 1.7
        tr = transition(ref, t, T)
        sf = score_fields(ref, t, T)
        Sinv = np.linalg.inv(tr.S)

        def log_density(y_t, y_T):
            diff = y_T - tr.M @ y_t
            return -0.5 * diff @ Sinv @ diff

        rng = np.random.default_rng(5)
        h = 1e-6
        for _ in range(10):
            y_t, y_T = rng.standard_normal(2), rng.standard_normal(2)
            grad = np.array(
                [
                    (log_density(y_t + h * e, y_T) - log_density(y_t - h * e, y_T)) / (2 * h)
                    for e in np.eye(2)
                ]
            )
            np.testing.assert_allclose(sf.forward(y_t, y_T), 2.0 * grad, atol=1e-6)

    def test_backward_matches_finite_difference_gradient(self):
        ref = make_reference("ou", A=[[0.6]], d=1)
        t, T = 0.3, 1.2
        tr = transition(ref, 0.0, T - t)
        sf = score_fields(ref, t, T)
        h = 1e-6
        y0, y = np.array([0.7]), np.array([-0.4])

        def log_density(y):
            diff = y - tr.M @ y0
            return -0.5 * float(diff @ np.linalg.solve(tr.S, diff))

        fd = (log_density(y + h) - log_density(y - h)) / (2 * h)
        np.testing.assert_allclose(sf.backward(y0, y), [2.0 * fd], atol=1e-6)


class TestBridgeConditional:
    def test_brownian_midpoint(self):
        bc = bridge_conditional(make_reference("brownian", d=1), 0.5, 1.0)
        np.testing.assert_allclose(bc.M0, [[0.5]])
        np.testing.assert_allclose(bc.MT, [[0.5]])
        np.testing.assert_allclose(bc.S, [[0.5]])

    def test_endpoint_pinning(self):
        bc = bridge_conditional(make_reference("brownian", d=1), 1e-9, 1.0)
        np.testing.assert_allclose(bc.M0, [[1.0]], atol=1e-8)
        np.testing.assert_allclose(bc.MT, [[0.0]], atol=1e-8)
        assert bc.S[0, 0] < 1e-8

    def test_ou_zero_endpoints_give_zero_mean(self):
        bc = bridge_conditional(make_reference("ou", A=[[0.5]], d=1), LN2, 2 * LN2)
        np.testing.assert_allclose(bc.mean(np.zeros(1), np.zeros(1)), [0.0], atol=1e-15)

    def test_brownian_variance_symmetric_and_maximal_at_midpoint(self):
        ref = make_reference("brownian", d=1)
        T = 1.0
        ts = np.linspace(0.05, 0.95, 19)
        variances = np.array([bridge_conditional(ref, t, T).S[0, 0] for t in ts])
        np.testing.assert_allclose(variances, 2.0 * ts * (T - ts) / T, rtol=1e-12)
        np.testing.assert_allclose(variances, variances[::-1], rtol=1e-12)
        assert variances.argmax() == 9  # t = T/2

    def test_time_order(self):
        with pytest.raises(InvalidTimeOrder):
            bridge_conditional(make_reference("brownian", d=1), 1.0, 1.0)


class TestStructuralConstants:
    def test_brownian_exact(self):
        consts = structural_constants(make_reference("brownian", d=1), T=1.0)
        assert consts.L_U == 1.0 and consts.alpha == 0.0

    def test_ou_dominates_short_time_limit(self):
        consts = structural_constants(make_reference("ou", A=[[0.5]], d=1), T=1.0)
        assert consts.L_U >= 1.0

    def test_ou_alpha_positive(self):
        consts = structural_constants(make_reference("ou", A=[[0.5]], d=1), T=1.0)
        assert consts.alpha > 0.0
        assert consts.t_grid is not None and consts.t_grid.size == 64

    def test_ou_anisotropic_exceeds_one(self):
        # widely separated rates make the grid maximum exceed the limit value
        A = np.diag([0.05, 4.0])
        consts = structural_constants(make_reference("ou", A=A, d=2), T=2.0)
        assert consts.L_U > 1.0


class TestStationaryLaw:
    def test_long_horizon_covariance_solves_lyapunov(self):
        """transition(0, t) covariance converges to the stationary solution of
        2A Sig + Sig 2A^T = 2 Id (so d=1 with rate 1/2 gives Sig = 1)."""
        A = np.array([[0.7, 0.2], [0.2, 0.9]])
        ref = make_reference("ou", A=A, d=2)
        S_inf = transition(ref, 0.0, 60.0).S
        np.testing.assert_allclose(2 * A @ S_inf + S_inf @ (2 * A).T, 2 * np.eye(2), atol=1e-8)

    def test_scalar_half_rate_unit_variance(self):
        ref = make_reference("ou", A=[[0.5]], d=1)
        S_inf = transition(ref, 0.0, 40.0).S
        np.testing.assert_allclose(S_inf, [[1.0]], atol=1e-10)
        np.testing.assert_allclose(ref.stationary_covariance(), [[1.0]], rtol=1e-14)
