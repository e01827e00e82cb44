"""
Tests for the smooth James-Stein thresholding kernels
"""

import numpy as np
import pytest

from sbite.core.thresholding import (
    canonical_divergence, canonical_partial, canonical_threshold,
    canonical_threshold_blocks, robust_threshold, shrink_factor,
)
from sbite.errors import DomainError
from sbite.models.params import Hyperparameters


def finite_difference(y, q, hp, step=1e-6):
    up = np.array(y, dtype=float)
    down = np.array(y, dtype=float)
    up[q] += step
    down[q] -= step
    return (canonical_threshold(up, hp)[q] - canonical_threshold(down, hp)[q]) / (2 * step)


class TestShrinkFactor:
    """Test shrink_factor"""

    def test_soft_threshold_factor(self):
        """Test nu = s = 1 reduces to 1 - lam / norm"""
        assert shrink_factor(2.0, 1.0, Hyperparameters(lam=1.0)) == pytest.approx(0.5)

    def test_below_threshold(self):
        """Test the positive part"""
        assert shrink_factor(0.5, 1.0, Hyperparameters(lam=1.0)) == 0.0

    def test_pilot_weighted(self):
        """Test 1 - 6.25 / 25"""
        hp = Hyperparameters(lam=2.5, nu=2.0, s=1.0)
        assert shrink_factor(5.0, 5.0, hp) == pytest.approx(0.75)

    def test_zero_exactly_at_threshold(self):
        """Test pilot_norm^(nu-1) * norm == lam^nu gives 0"""
        hp = Hyperparameters(lam=2.0, nu=2.0, s=3.0)
        assert shrink_factor(2.0, 2.0, hp) == 0.0

    def test_lambda_zero_is_identity(self):
        """Test lam = 0 gives factor 1"""
        assert shrink_factor(1e-8, 1.0, Hyperparameters(lam=0.0, nu=3.0)) == 1.0

    def test_monotone_in_lambda(self):
        """Test the factor is nonincreasing in lambda"""
        lams = np.linspace(0.0, 4.0, 41)
        values = [shrink_factor(3.0, 1.5, Hyperparameters(lam=lam, nu=2.0, s=2.0)) for lam in lams]
        assert np.all(np.diff(values) <= 0)

    def test_invalid_inputs(self):
        """Test nonpositive and non-finite inputs"""
        hp = Hyperparameters(lam=1.0)
        with pytest.raises(DomainError):
            shrink_factor(0.0, 1.0, hp)
        with pytest.raises(DomainError):
            shrink_factor(1.0, -1.0, hp)
        with pytest.raises(ValueError):
            shrink_factor(float("inf"), 1.0, hp)


class TestCanonicalThreshold:
    """Test canonical_threshold"""

    def test_closed_form(self):
        """Test (3, 4) with factor 0.75"""
        out = canonical_threshold([3.0, 4.0], Hyperparameters(lam=2.5, nu=2.0, s=1.0))
        np.testing.assert_allclose(out, [2.25, 3.0])

    def test_below_threshold(self):
        """Test a block under the threshold is zeroed for any nu, s"""
        for nu, s in [(1.0, 1.0), (2.0, None), (8.0, 5.0)]:
            out = canonical_threshold([0.3], Hyperparameters(lam=1.0, nu=nu, s=s))
            np.testing.assert_array_equal(out, [0.0])

    def test_soft_thresholding(self):
        """Test Q = 1, nu = s = 1 is sign(y)(|y| - lam)_+"""
        hp = Hyperparameters(lam=1.0)
        for y in (-3.0, -0.2, 0.7, 2.0):
            expected = np.sign(y) * max(abs(y) - 1.0, 0.0)
            assert canonical_threshold([y], hp)[0] == pytest.approx(expected)

    def test_boundary_is_zero(self):
        """Test ||y|| == lam gives the zero block"""
        np.testing.assert_array_equal(canonical_threshold([3.0, 4.0], Hyperparameters(lam=5.0)), [0.0, 0.0])

    def test_shrinkage(self):
        """Test the output norm never exceeds the input norm"""
        rng = np.random.default_rng(0)
        for _ in range(50):
            y = rng.standard_normal(3) * 3
            hp = Hyperparameters(lam=rng.uniform(0, 3), nu=rng.uniform(1, 6), s=rng.uniform(1, 4))
            assert np.linalg.norm(canonical_threshold(y, hp)) <= np.linalg.norm(y) + 1e-12

    def test_lambda_zero_is_identity(self):
        """Test lam = 0"""
        y = np.array([0.1, -2.0, 5.0])
        np.testing.assert_array_equal(canonical_threshold(y, Hyperparameters(lam=0.0, nu=3.0, s=2.0)), y)

    def test_blocks_match_scalar(self):
        """Test the row-wise form agrees with the scalar form"""
        rng = np.random.default_rng(1)
        Y = rng.standard_normal((20, 3)) * 2
        hp = Hyperparameters(lam=1.5, nu=2.0, s=None)
        expected = np.array([canonical_threshold(row, hp) for row in Y])
        np.testing.assert_allclose(canonical_threshold_blocks(Y, hp), expected)


class TestCanonicalPartial:
    """Test canonical_partial"""

    def test_soft_slope(self):
        """Test slope 1 above the threshold for soft thresholding"""
        result = canonical_partial([2.0], 0, Hyperparameters(lam=1.0))
        assert result.value == pytest.approx(1.0)
        assert not result.at_jump

    def test_below_threshold(self):
        """Test slope 0 below the threshold"""
        assert canonical_partial([0.3], 0, Hyperparameters(lam=1.0)).value == 0.0

    def test_finite_difference(self):
        """Test against central differences at (3, 4), lam = 2.5, nu = 2, s = 2"""
        hp = Hyperparameters(lam=2.5, nu=2.0, s=2.0)
        for q in (0, 1):
            assert canonical_partial([3.0, 4.0], q, hp).value == pytest.approx(
                finite_difference([3.0, 4.0], q, hp), abs=1e-6
            )

    def test_finite_difference_random(self):
        """Test derivative consistency away from the threshold"""
        rng = np.random.default_rng(2)
        checked = 0
        while checked < 40:
            y = rng.standard_normal(3) * 2
            hp = Hyperparameters(lam=rng.uniform(0.2, 2.5), nu=rng.uniform(1, 5), s=rng.choice([1.0, 1.7, 3.0]))
            if abs(np.linalg.norm(y) - hp.lam) < 1e-3:
                continue
            q = int(rng.integers(3))
            assert canonical_partial(y, q, hp).value == pytest.approx(
                finite_difference(y, q, hp, step=1e-7), abs=1e-5
            )
            checked += 1

    def test_jump_flag(self):
        """Test the s = 1 jump point returns the right limit with the flag set"""
        hp = Hyperparameters(lam=5.0, nu=2.0, s=1.0)
        result = canonical_partial([3.0, 4.0], 1, hp)
        assert result.at_jump
        # right limit: nu * s * (y_q / ||y||)^2
        assert result.value == pytest.approx(2.0 * 16.0 / 25.0)

    def test_continuous_for_smooth_s(self):
        """Test s > 1 is continuous across the threshold (limit 0)"""
        hp = Hyperparameters(lam=5.0, nu=2.0, s=2.0)
        result = canonical_partial([3.0, 4.0], 0, hp)
        assert result.value == 0.0
        assert not result.at_jump

    def test_index_validation(self):
        """Test out-of-range coordinate"""
        with pytest.raises(DomainError):
            canonical_partial([1.0, 2.0], 2, Hyperparameters(lam=1.0))

    def test_divergence_sums_partials(self):
        """Test canonical_divergence is the sum of the partials"""
        rng = np.random.default_rng(4)
        Y = rng.standard_normal((15, 3)) * 2
        hp = Hyperparameters(lam=1.2, nu=3.0, s=None)
        expected = [sum(canonical_partial(row, q, hp).value for q in range(3)) for row in Y]
        np.testing.assert_allclose(canonical_divergence(Y, hp), expected, rtol=1e-12)


class TestRobustThreshold:
    """Test robust_threshold"""

    def test_min_entry_kills(self):
        """Test a small entry zeroes the block"""
        np.testing.assert_array_equal(robust_threshold([3.0, 0.5], Hyperparameters(lam=1.0)), [0.0, 0.0])

    def test_closed_form(self):
        """Test factor 1 - 1/2"""
        np.testing.assert_allclose(robust_threshold([2.0, 3.0], Hyperparameters(lam=1.0)), [1.0, 1.5])

    def test_scalar_matches_canonical(self):
        """Test Q = 1 coincides with canonical_threshold"""
        hp = Hyperparameters(lam=1.0, nu=2.0, s=2.0)
        for y in (-3.0, 0.5, 2.0):
            np.testing.assert_allclose(robust_threshold([y], hp), canonical_threshold([y], hp))
