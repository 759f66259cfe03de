import math

import numpy as np
import pytest

from bbgp.dist import beta_binomial_log_pmf, gamma_poisson_log_pmf, log_binom_coef, log_factorial
from bbgp.lik import (
    BetaBinomialComponent,
    GammaPoissonComponent,
    bb_hessian,
    bb_loglik,
    bb_score,
    gp_hessian,
    gp_loglik,
    gp_score,
    gp_workspace,
)
from bbgp.model import ConfigurationError, DesignSet, ParamVector, RepeatedCountData, evaluate_links

from conftest import random_problem, richardson


def close(a, f, rtol, atol):
    a, f = np.asarray(a), np.asarray(f)
    return np.all(np.abs(a - f) <= np.maximum(rtol * np.abs(f), atol))


def gp_scalar_hessian(n, lam, alpha, delta):
    """Second derivatives for one unit with one condition, written out term by term."""
    b = delta * lam + 1.0
    a = delta * n + alpha
    t = [alpha + u * delta for u in range(n)]
    c = sum(1 / v for v in t)
    e = sum(u / v for u, v in enumerate(t))
    f = sum(1 / v ** 2 for v in t)
    j = sum(u / v ** 2 for u, v in enumerate(t))
    q = sum((u / v) ** 2 for u, v in enumerate(t))
    lb = math.log(b)
    h_ll = -lam * a / b ** 2
    h_la = -lam * alpha / b
    h_ld = -lam * delta * (n - alpha * lam) / b ** 2
    h_aa = alpha * c - alpha ** 2 * f - alpha * lb / delta
    h_ad = -alpha * delta * j + alpha * lb / delta - alpha * lam / b
    h_dd = (delta * e - delta ** 2 * q - alpha * lb / delta + alpha * lam / b
            - delta * lam * (n - alpha * lam) / b ** 2)
    return np.array([[h_ll, h_la, h_ld], [h_la, h_aa, h_ad], [h_ld, h_ad, h_dd]])


class TestBetaBinomialKernel:
    def test_empty_data(self):
        d = DesignSet.intercepts(2, 2)
        data = RepeatedCountData(np.zeros((2, 2)), np.zeros((2, 2)))
        pv = ParamVector([0.3], [0.1], [0.0], [0.0], [0.0])
        assert bb_loglik(pv, data, d) == 0.0
        np.testing.assert_array_equal(bb_score(pv, data, d), 0.0)

    def test_single_success(self):
        d = DesignSet.intercepts(1, 1)
        pv = ParamVector([0.0], [0.0], [0.0], [0.0], [0.0])
        assert bb_loglik(pv, RepeatedCountData([[1]], [[1]]), d) == pytest.approx(math.log(0.5))

    def test_kernel_plus_coefficients_is_pmf(self, rng):
        params, data, designs = random_problem(rng, M=3, p=2, max_n=5)
        nat = evaluate_links(params, designs)
        logp = beta_binomial_log_pmf(data.x.ravel(), data.n.ravel(), nat.mu, nat.theta)
        ref = np.sum(logp) - np.sum(log_binom_coef(data.n, data.x))
        assert bb_loglik(params, data, designs) == pytest.approx(ref, abs=1e-12)

    def test_all_successes_push_mu_up(self, rng):
        n = rng.integers(1, 6, size=(4, 2))
        pv = ParamVector([0.4], [-0.5], [0.0], [0.0], [0.0])
        g = bb_score(pv, RepeatedCountData(n, n), DesignSet.intercepts(4, 2))
        assert g[0] > 0

    def test_bernoulli_reduction(self):
        # with n = 1 the kernel is log mu and carries no theta information
        d = DesignSet.intercepts(1, 1)
        b0 = 0.7
        mu = 1 / (1 + math.exp(-b0))
        H = bb_hessian(ParamVector([b0], [0.2], [0.0], [0.0], [0.0]), RepeatedCountData([[1]], [[1]]), d)
        np.testing.assert_allclose(H, [[-mu * (1 - mu), 0.0], [0.0, 0.0]], atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        params, data, designs = random_problem(rng, M=5, p=2, max_n=10)
        beta = params.bb
        comp = BetaBinomialComponent(data, designs, params)
        np.testing.assert_allclose(comp.score(beta), richardson(comp.loglik, beta), rtol=1e-6, atol=1e-8)
        H = comp.hessian(beta)
        assert close(H, richardson(comp.score, beta), 1e-5, 1e-7)
        np.testing.assert_array_equal(H, H.T)

    def test_ignores_gamma_poisson_coefficients(self, rng):
        params, data, designs = random_problem(rng)
        other = params.replace(lam=params.lam + 1.0, alpha=params.alpha - 2.0, delta=params.delta * 3)
        assert bb_loglik(params, data, designs) == bb_loglik(other, data, designs)
        np.testing.assert_array_equal(bb_hessian(params, data, designs), bb_hessian(other, data, designs))

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            bb_loglik(ParamVector.zeros(DesignSet.intercepts(2, 2)),
                      RepeatedCountData([[1]], [[1]]), DesignSet.intercepts(2, 2))


class TestGammaPoissonKernel:
    def test_zero_counts(self, rng):
        params, data, designs = random_problem(rng, M=3, p=2)
        data = data.with_trials(np.zeros((3, 2), dtype=int))
        nat = evaluate_links(params, designs)
        lam = nat.lam.reshape(3, 2)
        ref = -np.sum(nat.alpha / nat.delta * np.log(nat.delta * lam.sum(axis=1) + 1))
        assert gp_loglik(params, data, designs) == pytest.approx(ref, rel=1e-14)

    def test_zero_counts_score(self):
        designs = DesignSet.intercepts(2, 3)
        params = ParamVector([0.0], [0.0], [0.4], [0.9], [-0.6])
        data = RepeatedCountData(np.zeros((2, 3)), np.zeros((2, 3)))
        lam, alpha, delta = math.exp(0.4), math.exp(0.9), math.exp(-0.6)
        b = delta * 3 * lam + 1
        # only the -(lam a / b) term survives, with a = alpha
        assert gp_score(params, data, designs)[0] == pytest.approx(-2 * 3 * lam * alpha / b)
        comp = GammaPoissonComponent(data, designs, params)
        np.testing.assert_allclose(comp.score(params.gp), richardson(comp.loglik, params.gp), rtol=1e-6)

    def test_kernel_plus_factorials_is_pmf(self, rng):
        params, data, designs = random_problem(rng, M=3, p=2, max_n=5)
        nat = evaluate_links(params, designs)
        logp = gamma_poisson_log_pmf(data.n, nat.lam.reshape(3, 2), nat.alpha, nat.delta)
        ref = np.sum(logp) + np.sum(log_factorial(data.n))
        assert gp_loglik(params, data, designs) == pytest.approx(ref, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        params, data, designs = random_problem(rng, M=5, p=3, max_n=10)
        beta = params.gp
        comp = GammaPoissonComponent(data, designs, params)
        np.testing.assert_allclose(comp.score(beta), richardson(comp.loglik, beta), rtol=1e-6, atol=1e-8)
        H = comp.hessian(beta)
        assert close(H, richardson(comp.score, beta), 1e-5, 1e-7)
        np.testing.assert_array_equal(H, H.T)

    @pytest.mark.parametrize("n,lam,alpha,delta", [(0, 2.0, 1.0, 1.0), (7, 5.4, 3.67, 0.27),
                                                   (3, 0.2, 0.3, 4.0)])
    def test_single_unit_single_condition(self, n, lam, alpha, delta):
        designs = DesignSet.intercepts(1, 1)
        params = ParamVector([0.0], [0.0], [math.log(lam)], [math.log(alpha)], [math.log(delta)])
        H = gp_hessian(params, RepeatedCountData([[0]], [[n]]), designs)
        np.testing.assert_allclose(H, gp_scalar_hessian(n, lam, alpha, delta), rtol=1e-12, atol=1e-14)

    def test_literal_lambda_block_misses_cross_terms(self, rng):
        """The diagonal-only form -Z'L(A/B)[I - L D/B]Z is exact only when p = 1."""

        def literal(params, data, designs):
            ws = gp_workspace(params, data, designs)
            lam = ws.lam.ravel()
            a = np.repeat(ws.a, data.p)
            b = np.repeat(ws.b, data.p)
            d = np.repeat(ws.delta, data.p)
            w = lam * (a / b) * (lam * d / b - 1.0)
            return designs.lam.T @ (w[:, None] * designs.lam)

        for p, agrees in ((1, True), (3, False)):
            params, data, designs = random_problem(rng, M=6, p=p, max_n=12)
            k = designs.lam.shape[1]
            comp = GammaPoissonComponent(data, designs, params)
            fd = richardson(comp.score, params.gp)[:k, :k]
            lit = literal(params, data, designs)
            np.testing.assert_allclose(gp_hessian(params, data, designs)[:k, :k], fd, rtol=1e-6, atol=1e-7)
            assert close(lit, fd, 1e-5, 1e-7) == agrees

    def test_ignores_beta_binomial_coefficients(self, rng):
        params, data, designs = random_problem(rng)
        other = params.replace(mu=params.mu + 3.0, theta=params.theta - 1.0)
        assert gp_loglik(params, data, designs) == gp_loglik(other, data, designs)
        np.testing.assert_array_equal(gp_score(params, data, designs), gp_score(other, data, designs))

    def test_condition_permutation(self, rng):
        params, data, designs = random_problem(rng, M=4, p=3)
        perm = np.array([2, 0, 1])
        rows = (np.arange(4)[:, None] * 3 + perm[None, :]).ravel()
        d2 = DesignSet(designs.mu[rows], designs.theta[rows], designs.lam[rows], designs.alpha, designs.delta)
        data2 = RepeatedCountData(data.x[:, perm], data.n[:, perm])
        assert gp_loglik(params, data2, d2) == pytest.approx(gp_loglik(params, data, designs), rel=1e-14)

    def test_workspace_invariants(self, rng):
        params, data, designs = random_problem(rng, M=6, p=2, max_n=4)
        n = data.n.copy()
        n[0] = 0
        ws = gp_workspace(params, data.with_trials(n), designs)
        assert np.all(ws.b >= 1.0)
        for v in (ws.a, ws.c, ws.e, ws.f, ws.j, ws.q):
            assert np.all(v >= 0)
        assert ws.c[0] == ws.e[0] == ws.f[0] == ws.j[0] == ws.q[0] == 0.0
        np.testing.assert_array_equal(ws.Ns, n.sum(axis=1))


class TestComponentCache:
    def test_cached_and_fresh_evaluations_agree(self, rng):
        params, data, designs = random_problem(rng)
        comp = GammaPoissonComponent(data, designs, params)
        beta = params.gp
        f = comp.loglik(beta)
        g = comp.score(beta)
        H = comp.hessian(beta)
        assert f == gp_loglik(params, data, designs)
        np.testing.assert_array_equal(g, gp_score(params, data, designs))
        np.testing.assert_array_equal(H, gp_hessian(params, data, designs))
        # moving away and back recomputes
        comp.loglik(beta + 0.1)
        assert comp.loglik(beta) == f
