import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bbgp.model import (
    ConfigurationError,
    DesignSet,
    DomainError,
    NaturalParams,
    NonFiniteParameterError,
    ParamVector,
    RepeatedCountData,
    classical_parametrization,
    evaluate_links,
    logistic,
    to_classical,
    to_natural,
)


def one_point(mu=0.5, theta=1.0, lam=2.0, alpha=3.67, delta=0.27):
    return NaturalParams(np.array([mu]), np.array([theta]), np.array([lam]),
                         np.array([alpha]), np.array([delta]))


class TestClassicalParametrization:
    def test_symmetric_case(self):
        a, b, _, _ = classical_parametrization(one_point(mu=0.5, theta=1.0), (0, 0))
        assert a == pytest.approx(0.5)
        assert b == pytest.approx(0.5)

    def test_gamma_shape_and_rate(self):
        _, _, c, d = classical_parametrization(one_point(alpha=3.67, delta=0.27), (0, 0))
        assert c == pytest.approx(13.59, abs=0.005)
        assert d == pytest.approx(3.70, abs=0.005)
        # the gamma(c, rate d) mean is alpha
        assert c / d == pytest.approx(3.67)

    def test_table_values(self):
        a, b, _, _ = classical_parametrization(one_point(mu=0.87, theta=0.34), (0, 0))
        assert a == pytest.approx(2.559, abs=5e-4)
        assert b == pytest.approx(0.382, abs=5e-4)
        assert a / (a + b) == pytest.approx(0.87)

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            classical_parametrization(one_point(), (1, 0))

    @given(st.floats(1e-6, 1 - 1e-6), st.floats(1e-6, 1e6), st.floats(1e-6, 1e6),
           st.floats(1e-6, 1e6))
    @settings(max_examples=200, deadline=None)
    def test_round_trip(self, mu, theta, alpha, delta):
        back = to_natural(*to_classical(mu, theta, alpha, delta))
        np.testing.assert_allclose(back, (mu, theta, alpha, delta), rtol=1e-12)


class TestLinks:
    def test_logistic_is_stable_far_out(self):
        p, q = logistic(np.array([-800.0, 0.0, 800.0]))
        np.testing.assert_array_equal(p, [0.0, 0.5, 1.0])
        np.testing.assert_array_equal(q, [1.0, 0.5, 0.0])
        assert np.all(np.isfinite(p))

    def test_logistic_complement_keeps_precision(self):
        # 1 - expit(40) is 4.2e-18, which 1 - p would round to 0
        _, q = logistic(40.0)
        assert q == pytest.approx(np.exp(-40.0) / (1 + np.exp(-40.0)), rel=1e-14)

    def test_intercepts(self):
        d = DesignSet.intercepts(2, 3)
        nat = evaluate_links(ParamVector([0.0], [0.0], [np.log(5.0)], [1.0], [-1.0]), d)
        np.testing.assert_allclose(nat.mu, 0.5)
        np.testing.assert_allclose(nat.lam, 5.0)
        np.testing.assert_allclose(nat.alpha, np.e)
        assert nat.mu.shape == (6,) and nat.alpha.shape == (2,)

    @given(st.lists(st.floats(-30, 30), min_size=5, max_size=5))
    @settings(max_examples=100, deadline=None)
    def test_domain_invariants(self, coefs):
        rng = np.random.default_rng(0)
        d = DesignSet(*(rng.normal(size=(r, 1)) for r in (6, 6, 6, 2, 2)))
        nat = evaluate_links(ParamVector(*([c] for c in coefs)), d)
        assert np.all((nat.mu >= 0) & (nat.mu <= 1))
        np.testing.assert_allclose(nat.mu + nat.one_minus_mu, 1.0)
        for v in (nat.theta, nat.lam, nat.alpha, nat.delta):
            assert np.all(v > 0) and np.all(np.isfinite(v))

    def test_row_local(self, rng):
        Z = [rng.normal(size=(6, 2)) for _ in range(3)] + [rng.normal(size=(2, 2)) for _ in range(2)]
        params = ParamVector(*(rng.normal(size=2) for _ in range(5)))
        base = evaluate_links(params, DesignSet(*Z))
        Z2 = [z.copy() for z in Z]
        for z in Z2[:3]:
            z[4] += 1.0
        moved = evaluate_links(params, DesignSet(*Z2))
        keep = np.arange(6) != 4
        for comp in ("mu", "theta", "lam"):
            np.testing.assert_array_equal(getattr(moved, comp)[keep], getattr(base, comp)[keep])
            assert getattr(moved, comp)[4] != getattr(base, comp)[4]

    def test_overflow_reports_component_and_row(self):
        d = DesignSet.intercepts(3, 1)
        Zl = np.ones((3, 1))
        Zl[2] = 1000.0
        d = DesignSet(d.mu, d.theta, Zl, d.alpha, d.delta)
        with pytest.raises(NonFiniteParameterError) as info:
            evaluate_links(ParamVector([0.0], [0.0], [1.0], [0.0], [0.0]), d)
        assert info.value.component == "lam"
        assert info.value.row == 2

    def test_dimension_mismatch(self):
        d = DesignSet.intercepts(2, 2)
        with pytest.raises(ConfigurationError):
            evaluate_links(ParamVector([0.0, 1.0], [0.0], [0.0], [0.0], [0.0]), d)


class TestContainers:
    def test_successes_exceed_trials(self):
        with pytest.raises(DomainError):
            RepeatedCountData([[2, 1]], [[1, 1]])

    def test_non_integer_counts(self):
        with pytest.raises(DomainError):
            RepeatedCountData([[0.5]], [[1]])

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            RepeatedCountData([[1, 1]], [[1, 1, 1]])

    def test_units_view(self):
        data = RepeatedCountData([[1, 2], [0, 3]], [[2, 2], [1, 5]], ("a", "b"), ("B", "F"))
        assert data.M == 2 and data.p == 2
        unit = data.units[1]
        assert unit.unit_id == "b"
        assert [(o.x, o.n, o.condition_id) for o in unit.observations] == [(0, 1, "B"), (3, 5, "F")]

    def test_arrays_are_read_only(self):
        data = RepeatedCountData([[1]], [[2]])
        with pytest.raises(ValueError):
            data.x[0, 0] = 2

    def test_design_row_counts(self):
        with pytest.raises(ConfigurationError):
            DesignSet(np.ones((6, 1)), np.ones((6, 1)), np.ones((5, 1)), np.ones((2, 1)), np.ones((2, 1)))
        with pytest.raises(ConfigurationError):
            DesignSet(np.ones((7, 1)), np.ones((7, 1)), np.ones((7, 1)), np.ones((2, 1)), np.ones((2, 1)))

    def test_design_check_data(self):
        with pytest.raises(ConfigurationError):
            DesignSet.intercepts(2, 2).check_data(RepeatedCountData([[1, 1]], [[1, 1]]))

    def test_param_vector_non_finite(self):
        with pytest.raises(NonFiniteParameterError):
            ParamVector([np.nan], [0.0], [0.0], [0.0], [0.0])

    def test_param_vector_blocks(self):
        pv = ParamVector([1.0, 2.0], [3.0], [4.0], [5.0], [6.0, 7.0])
        np.testing.assert_array_equal(pv.bb, [1, 2, 3])
        np.testing.assert_array_equal(pv.gp, [4, 5, 6, 7])
        np.testing.assert_array_equal(pv.with_gp([0, 0, 0, 0]).gp, 0.0)
        assert pv.with_bb([9, 9, 9]).mu.tolist() == [9.0, 9.0]
