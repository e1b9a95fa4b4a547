import itertools
import warnings

import numpy as np
import pytest
from fractions import Fraction
from hypothesis import given, settings, strategies as st
from scipy.stats import special_ortho_group

from ancova_ssr.design import (
    CompoundSymmetrySpec,
    DesignSpec,
    JointCovariance,
    RSquaredWarning,
    check_feasibility,
    cs_eigenvalues,
    partial_correlation,
    r_squared_chained,
    r_squared_from_covariance,
    r_squared_iterative,
)
from ancova_ssr.errors import DegeneracyError, DomainError

PITFALL = JointCovariance(1.0, [0.7, 0.7], [[1.0, -0.3], [-0.3, 1.0]])
PITFALL_OK = JointCovariance(1.0, [0.5, 0.5], [[1.0, -0.3], [-0.3, 1.0]])


def random_psd(rng, d, rank=None):
    q = special_ortho_group.rvs(d, random_state=rng) if d > 1 else np.eye(1)
    spec = rng.uniform(0.05, 3.0, size=d)
    if rank is not None:
        spec[rank:] = 0.0
    m = (q * spec) @ q.T
    return (m + m.T) / 2


class TestJointCovariance:
    def test_blocks_round_trip(self):
        m = random_psd(np.random.default_rng(0), 4)
        jc = JointCovariance.from_matrix(m)
        np.testing.assert_array_equal(jc.matrix[0, 0], jc.sigma_y_sq)
        np.testing.assert_array_equal(jc.matrix[1:, 0], jc.sigma_yz)
        np.testing.assert_array_equal(jc.matrix[1:, 1:], jc.sigma_z)
        np.testing.assert_array_equal(jc.matrix, m)

    def test_rejects_asymmetric(self):
        with pytest.raises(DomainError):
            JointCovariance(1.0, [0.1, 0.2], [[1.0, 0.3], [0.2, 1.0]])

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(DomainError):
            JointCovariance(0.0, [0.1], [[1.0]])

    def test_exchangeable(self):
        jc = JointCovariance.exchangeable([0.5, 0.25, 0.1], 0.4)
        np.testing.assert_allclose(jc.sigma_z, [[1, .4, .4], [.4, 1, .4], [.4, .4, 1]])


class TestRSquared:
    def test_pitfall_exceeds_one(self):
        with pytest.warns(RSquaredWarning):
            assert r_squared_from_covariance(PITFALL) == pytest.approx(1.4, abs=1e-12)

    def test_pitfall_variant_below_one(self):
        assert r_squared_from_covariance(PITFALL_OK) == pytest.approx(0.714, abs=5e-4)
        assert r_squared_from_covariance(PITFALL_OK) == pytest.approx(5 / 7, abs=1e-12)

    def test_uncorrelated(self):
        assert r_squared_from_covariance(JointCovariance(2.0, [0, 0], np.eye(2))) == 0.0

    def test_simulation_grid_value(self):
        jc = JointCovariance.exchangeable([0.25, 0.25], 0.25)
        assert round(r_squared_from_covariance(jc), 3) == 0.100

    def test_no_covariates(self):
        assert r_squared_from_covariance(JointCovariance(1.0, [], np.zeros((0, 0)))) == 0.0

    def test_singular_sigma_z_names_eigenvector(self):
        jc = JointCovariance(1.0, [0.3, 0.3], [[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(DegeneracyError, match="eigenvector"):
            r_squared_from_covariance(jc)

    def test_iterative_base_cases(self):
        assert r_squared_iterative(0.0, 0.6) == pytest.approx(0.36)
        assert r_squared_iterative(1.0, -0.4) == 1.0

    @pytest.mark.parametrize("args", [(-0.1, 0.2), (1.1, 0.2), (0.5, 1.2)])
    def test_iterative_domain(self, args):
        with pytest.raises(DomainError):
            r_squared_iterative(*args)

    def test_two_covariate_chain_by_hand(self):
        # R^2 = rho_{YZ1}^2 + (1 - rho_{YZ1}^2) rho_{(YZ2)|Z1}^2
        m = random_psd(np.random.default_rng(5), 3)
        jc = JointCovariance.from_matrix(m)
        rho1 = m[0, 1] / np.sqrt(m[0, 0] * m[1, 1])
        cond = m[np.ix_([0, 2], [0, 2])] - np.outer(m[[0, 2], 1], m[[0, 2], 1]) / m[1, 1]
        rho21 = cond[0, 1] / np.sqrt(cond[0, 0] * cond[1, 1])
        chained = r_squared_iterative(r_squared_iterative(0.0, rho1), rho21)
        assert chained == pytest.approx(r_squared_from_covariance(jc), abs=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 6))
    def test_chain_matches_quadratic_form(self, seed, c):
        m = random_psd(np.random.default_rng(seed), c + 1)
        jc = JointCovariance.from_matrix(m)
        assert r_squared_chained(jc) == pytest.approx(r_squared_from_covariance(jc), abs=1e-10)

    def test_partial_correlation_without_conditioning(self):
        m = np.array([[4.0, 1.0], [1.0, 1.0]])
        assert partial_correlation(m, 0, 1) == pytest.approx(0.5)


class TestFeasibility:
    def test_pitfall_flagged(self):
        report = check_feasibility(PITFALL)
        assert not report.is_psd
        assert report.r_squared == pytest.approx(1.4)
        assert not report.feasible
        assert any("R² = 1.4" in m for m in report.messages)

    def test_identity(self):
        report = check_feasibility(JointCovariance(1.0, [0, 0, 0], np.eye(3)))
        assert report.is_psd and report.feasible
        np.testing.assert_allclose(report.eigenvalues, 1.0)
        assert report.r_squared == 0.0

    def test_cs_boundary(self):
        for c in (1, 2, 3, 7):
            report = check_feasibility(CompoundSymmetrySpec(1.0, -1.0 / c, c).joint())
            assert report.is_psd
            assert abs(report.eigenvalues[0]) < 1e-12

    def test_cs_below_boundary_cites_rule(self):
        report = check_feasibility(CompoundSymmetrySpec(1.0, -0.6, 2))
        assert not report.is_psd
        assert any("-1/c" in m for m in report.messages)

    def test_eigenvalues_sorted(self):
        report = check_feasibility(JointCovariance.from_matrix(random_psd(np.random.default_rng(2), 5)))
        assert np.all(np.diff(report.eigenvalues) >= 0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.booleans())
    def test_random_psd_is_feasible(self, seed, c, singular):
        rng = np.random.default_rng(seed)
        m = random_psd(rng, c + 1, rank=c if singular else None)
        # keep sigma_z itself invertible by zeroing the direction only if possible
        jc = JointCovariance.from_matrix(m)
        report = check_feasibility(jc)
        assert report.is_psd
        if report.r_squared is not None:
            assert -1e-10 <= report.r_squared <= 1.0 + 1e-9

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.floats(1e-6, 2.0))
    def test_negative_eigenvalue_detected(self, seed, c, depth):
        rng = np.random.default_rng(seed)
        d = c + 1
        q = special_ortho_group.rvs(d, random_state=rng) if d > 1 else np.eye(1)
        spec = rng.uniform(0.1, 3.0, size=d)
        spec[0] = -depth
        m = (q * spec) @ q.T
        m = (m + m.T) / 2
        if m[0, 0] <= 0:
            return
        assert not check_feasibility(JointCovariance.from_matrix(m)).is_psd


class TestCompoundSymmetry:
    def test_example(self):
        lam1, lam2, mult = cs_eigenvalues(CompoundSymmetrySpec(1.0, 0.5, 2))
        assert (lam1, lam2, mult) == (pytest.approx(2.0), pytest.approx(0.5), (1, 2))
        np.testing.assert_allclose(np.linalg.eigvalsh(CompoundSymmetrySpec(1.0, 0.5, 2).matrix()),
                                   [0.5, 0.5, 2.0], atol=1e-12)

    def test_zero_rho(self):
        lam1, lam2, _ = cs_eigenvalues(CompoundSymmetrySpec(2.5, 0.0, 4))
        assert lam1 == lam2 == 2.5

    def test_boundary(self):
        assert cs_eigenvalues(CompoundSymmetrySpec(1.0, -1 / 3, 3))[0] == pytest.approx(0.0, abs=1e-15)

    def test_expansion(self):
        cs = CompoundSymmetrySpec(2.0, 0.3, 3)
        jc = cs.joint()
        np.testing.assert_allclose(np.diag(jc.matrix), 2.0)
        np.testing.assert_allclose(jc.sigma_z[0, 1], 0.6)
        np.testing.assert_allclose(jc.sigma_yz, 0.6)

    def test_closed_form_matches_numeric(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            c = int(rng.integers(1, 11))
            spec = CompoundSymmetrySpec(float(rng.uniform(0.1, 5)), float(rng.uniform(-1, 1)), c)
            lam1, lam2, (m1, m2) = cs_eigenvalues(spec)
            expected = np.sort(np.r_[np.full(m1, lam1), np.full(m2, lam2)])
            np.testing.assert_allclose(np.linalg.eigvalsh(spec.matrix()), expected, atol=1e-10)


class TestDesignSpec:
    def test_ratio_lowest_terms(self):
        spec = DesignSpec(0.5, gamma="4:2")
        assert spec.gamma == Fraction(2) and (spec.r2, spec.r1) == (2, 1)

    def test_numeric_gamma(self):
        assert DesignSpec(0.5, gamma=1.5).gamma == Fraction(3, 2)

    @pytest.mark.parametrize("kwargs", [
        dict(delta=0.0), dict(delta=1.0, alpha=0.0), dict(delta=1.0, beta=1.0),
        dict(delta=1.0, alpha=0.6, beta=0.5), dict(delta=1.0, gamma="0:1"), dict(delta=1.0, c=-1),
        dict(delta=1.0, gamma="a:b"),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(DomainError):
            DesignSpec(**kwargs)
