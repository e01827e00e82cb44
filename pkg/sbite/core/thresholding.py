"""
Smooth James-Stein thresholding kernels.

Scalar-block functions take one block (a length-Q vector); the ``*_blocks``
variants operate row-wise on an N x Q array and are what the canonical and
wavelet paths use. All functions are pure.
"""

import math
from typing import NamedTuple

import numpy as np

from sbite.errors import DomainError
from sbite.models.params import Hyperparameters, as_block


class PartialDerivative(NamedTuple):
    """Value of a partial derivative and whether it sits on the s=1 jump point."""
    value: float
    at_jump: bool


def shrink_factor(norm: float, pilot_norm: float, hp: Hyperparameters) -> float:
    """
    Smooth James-Stein factor (1 - lam^nu / (pilot_norm^(nu-1) * norm))_+^s.

    Args:
        norm: Block gradient norm, > 0
        pilot_norm: Pilot block norm, > 0
        hp: Hyperparameters

    Returns:
        Factor in [0, 1]; 0 exactly when pilot_norm^(nu-1) * norm <= lam^nu

    Example:
        >>> shrink_factor(5.0, 5.0, Hyperparameters(lam=2.5, nu=2.0, s=1.0))
        0.75
    """
    norm = float(norm)
    pilot_norm = float(pilot_norm)
    if not (math.isfinite(norm) and norm > 0):
        raise DomainError(f"norm must be finite and positive, got {norm}")
    if not (math.isfinite(pilot_norm) and pilot_norm > 0):
        raise DomainError(f"pilot_norm must be finite and positive, got {pilot_norm}")

    if hp.lam == 0:
        return 1.0
    weighted = pilot_norm ** (hp.nu - 1) * norm
    if weighted <= hp.lam_nu:
        return 0.0
    return (1.0 - hp.lam_nu / weighted) ** hp.s


def canonical_threshold(y, hp: Hyperparameters) -> np.ndarray:
    """
    Closed-form SBITE for one block of the canonical model.

    Returns (1 - lam^nu / ||y||^nu)_+^s * y, the zero block when ||y|| <= lam.

    Example:
        >>> canonical_threshold([3.0, 4.0], Hyperparameters(lam=2.5, nu=2.0, s=1.0))
        array([2.25, 3.  ])
    """
    y = as_block(y)
    if hp.lam == 0:
        return y.copy()
    norm = float(np.linalg.norm(y))
    if norm <= hp.lam:
        return np.zeros_like(y)
    return shrink_factor(norm, norm, hp) * y


def canonical_partial(y, q: int, hp: Hyperparameters) -> PartialDerivative:
    """
    Partial derivative of the q-th estimate entry with respect to y_q.

    At ||y|| = lam with s = 1 the derivative jumps; the right limit is returned
    with ``at_jump=True``.

    Args:
        y: Block of length Q
        q: Coordinate index, 0 <= q < Q
        hp: Hyperparameters
    """
    y = as_block(y)
    if not 0 <= q < y.size:
        raise DomainError(f"coordinate {q} out of range [0, {y.size})")
    if hp.lam == 0:
        return PartialDerivative(1.0, False)

    norm = float(np.linalg.norm(y))
    if norm < hp.lam:
        return PartialDerivative(0.0, False)

    ratio = hp.lam_nu / norm ** hp.nu
    base = 1.0 - ratio
    value = base ** (hp.s - 1) * (hp.nu * hp.s * ratio * y[q] ** 2 / norm ** 2 + base)
    return PartialDerivative(float(value), bool(norm == hp.lam and hp.s == 1))


def robust_threshold(y, hp: Hyperparameters) -> np.ndarray:
    """
    Robust variant: the block norm is replaced by min_q |y_q|.

    The block is killed unless every entry exceeds the threshold.

    Example:
        >>> robust_threshold([2.0, 3.0], Hyperparameters(lam=1.0))
        array([1. , 1.5])
    """
    y = as_block(y)
    if hp.lam == 0:
        return y.copy()
    smallest = float(np.min(np.abs(y)))
    if smallest <= hp.lam:
        return np.zeros_like(y)
    return (1.0 - hp.lam_nu / smallest ** hp.nu) ** hp.s * y


def _as_blocks(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.ndim != 2 or Y.shape[1] < 1:
        raise DomainError("blocks must be an N x Q array")
    if not np.all(np.isfinite(Y)):
        raise DomainError("block entries must be finite")
    return Y


def canonical_factors(Y, hp: Hyperparameters) -> np.ndarray:
    """Per-block factors (1 - lam^nu / ||Y_n||^nu)_+^s for an N x Q array"""
    Y = _as_blocks(Y)
    if hp.lam == 0:
        return np.ones(Y.shape[0])
    norms = np.linalg.norm(Y, axis=1)
    factors = np.zeros_like(norms)
    keep = norms > hp.lam
    factors[keep] = (1.0 - hp.lam_nu / norms[keep] ** hp.nu) ** hp.s
    return factors


def canonical_threshold_blocks(Y, hp: Hyperparameters) -> np.ndarray:
    """Row-wise canonical_threshold for an N x Q array"""
    Y = _as_blocks(Y)
    return canonical_factors(Y, hp)[:, None] * Y


def divergence_from_norms(norms: np.ndarray, Q: int, hp: Hyperparameters) -> np.ndarray:
    """
    Per-block divergence of the canonical estimate, a function of the block norms.

    Uses the right limit on the s=1 jump (||Y_n|| = lam).
    """
    norms = np.asarray(norms, dtype=float)
    if hp.lam == 0:
        return np.full(norms.shape, float(Q))
    out = np.zeros(norms.shape)
    on = norms >= hp.lam
    ratio = hp.lam_nu / norms[on] ** hp.nu
    base = 1.0 - ratio
    # sum_q (y_q / ||y||)^2 = 1
    out[on] = base ** (hp.s - 1) * (hp.nu * hp.s * ratio + Q * base)
    return out


def canonical_divergence(Y, hp: Hyperparameters) -> np.ndarray:
    """Per-block divergence sum_q d(alpha_n)_q / dY_n^(q) for an N x Q array"""
    Y = _as_blocks(Y)
    return divergence_from_norms(np.linalg.norm(Y, axis=1), Y.shape[1], hp)
