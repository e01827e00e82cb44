"""
Block-canonical estimation: closed-form SBITE, SURE and its total variation,
universal thresholds, the sparsity weighted l2 information criterion and
oracle risk benchmarks.

Risk quantities assume unit noise variance.
"""

import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import optimize
from scipy.special import gammaln
from scipy.stats import gumbel_r

from sbite.core.risk import (
    DEFAULT_LAMBDA_MIN, SearchGrid, stage_one_search, two_stage_search,
)
from sbite.core.thresholding import canonical_divergence, canonical_threshold_blocks, divergence_from_norms
from sbite.errors import DomainError, NumericalError
from sbite.models.params import Hyperparameters
from sbite.models.report import UniversalThreshold
from sbite.models.sequence import BlockSequence

logger = logging.getLogger(__name__)

CANONICAL_RULES = ("sure", "sure_s1", "sl2wic", "universal")
ROOT_XTOL = 1e-12


def _as_sequence(data) -> BlockSequence:
    return data if isinstance(data, BlockSequence) else BlockSequence(data)


def denoise_canonical(data: BlockSequence, hp: Hyperparameters) -> BlockSequence:
    """
    Closed-form SBITE of every block, (1 - lam^nu / ||Y_n||^nu)_+^s Y_n.

    Example:
        >>> out = denoise_canonical(BlockSequence([[3.0, 4.0, 12.0]]), Hyperparameters(lam=6.5))
        >>> out.blocks
        array([[1.5, 2. , 6. ]])
    """
    data = _as_sequence(data)
    return data.with_blocks(canonical_threshold_blocks(data.blocks, hp))


def _risk_terms(norms: np.ndarray, Q: int, hp: Hyperparameters,
                divergence: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-block SURE terms, a function of the block norms only"""
    if divergence is None:
        divergence = divergence_from_norms(norms, Q, hp)
    factors = np.zeros(norms.shape)
    if hp.lam == 0:
        factors[:] = 1.0
    else:
        on = norms > hp.lam
        factors[on] = (1.0 - hp.lam_nu / norms[on] ** hp.nu) ** hp.s
    return (1.0 - factors) ** 2 * norms ** 2 - Q + 2.0 * divergence


def sure_canonical_terms(data: BlockSequence, hp: Hyperparameters) -> np.ndarray:
    """
    Per-block risk estimates {1 - factor}^2 ||Y_n||^2 - Q + 2 divergence_n.

    A block exactly at ||Y_n|| = lam is thresholded; its divergence is the right
    limit, nu for s = 1.
    """
    data = _as_sequence(data)
    return _risk_terms(data.norms(), data.Q, hp, canonical_divergence(data.blocks, hp))


def sure_canonical(data: BlockSequence, hp: Hyperparameters) -> float:
    """
    Stein unbiased risk estimate of the canonical SBITE at (lam, nu, s).

    Example:
        >>> sure_canonical(data, Hyperparameters(lam=0.0))   # identity: N Q
    """
    return float(np.sum(sure_canonical_terms(data, hp)))


def _check_grid(lambda_grid) -> np.ndarray:
    grid = np.asarray(lambda_grid, dtype=float).ravel()
    if grid.size < 2:
        raise DomainError("a lambda grid needs at least two points")
    if np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise DomainError("lambda grid must be nonnegative and strictly increasing")
    return grid


def _terms_on_grid(norms: np.ndarray, Q: int, nu: float, s: float, grid: np.ndarray) -> np.ndarray:
    """len(grid) x N matrix of per-block SURE terms, with the s = 1 jumps removed"""
    out = np.empty((grid.size, norms.size))
    for i, lam in enumerate(grid):
        out[i] = _risk_terms(norms, Q, Hyperparameters(lam=float(lam), nu=nu, s=s))
        if s == 1:
            # continuous part: each block drops by 2 nu just after lam passes ||Y_n||
            out[i] -= 2.0 * nu * (lam <= norms)
    return out


def _jump_count(norms: np.ndarray, grid: np.ndarray) -> int:
    return int(np.sum((norms >= grid[0]) & (norms < grid[-1])))


def sure_total_variation(data: BlockSequence, nu: float, s: float, lambda_grid) -> float:
    """
    Total variation of lam -> SURE(lam; nu, s) over a dense increasing grid.

    For s = 1 the jumps of size 2 nu at every ||Y_n|| inside the grid range are
    added exactly rather than sampled.
    """
    data = _as_sequence(data)
    hp = Hyperparameters(lam=0.0, nu=nu, s=s)
    grid = _check_grid(lambda_grid)
    norms = data.norms()
    curve = _terms_on_grid(norms, data.Q, hp.nu, hp.s, grid).sum(axis=1)
    tv = float(np.sum(np.abs(np.diff(curve))))
    if hp.s == 1:
        tv += 2.0 * hp.nu * _jump_count(norms, grid)
    return tv


def per_block_total_variation(data: BlockSequence, nu: float, s: float, lambda_grid) -> float:
    """Sum over blocks of the total variation of each block's SURE term"""
    data = _as_sequence(data)
    hp = Hyperparameters(lam=0.0, nu=nu, s=s)
    grid = _check_grid(lambda_grid)
    norms = data.norms()
    terms = _terms_on_grid(norms, data.Q, hp.nu, hp.s, grid)
    tv = float(np.sum(np.abs(np.diff(terms, axis=0))))
    if hp.s == 1:
        tv += 2.0 * hp.nu * _jump_count(norms, grid)
    return tv


def total_variation_closed_form(data: BlockSequence, nu: float) -> float:
    """sum_n (Y_n^2 + 4 nu - 2): exact TV of the s = 1 SURE over lam in [0, inf) for Q = 1"""
    data = _as_sequence(data)
    if data.Q != 1:
        raise DomainError(f"the closed form holds for Q = 1 only, got Q = {data.Q}")
    return float(np.sum(data.blocks[:, 0] ** 2 + 4.0 * nu - 2.0))


def _check_size(N: int, Q: int):
    if int(N) != N or N < 2:
        raise DomainError(f"N must be an integer >= 2, got {N}")
    if int(Q) != Q or Q < 1:
        raise DomainError(f"Q must be an integer >= 1, got {Q}")


def root_equation(xi: float, N: int, Q: int) -> float:
    """(1 - Q/2) ln(xi/2) + xi/2 - (ln N - ln Gamma(Q/2)); d_N is its root"""
    return (1.0 - Q / 2.0) * math.log(xi / 2.0) + xi / 2.0 - (math.log(N) - gammaln(Q / 2.0))


def _solve_root(N: int, Q: int) -> float:
    if Q == 2:
        return 2.0 * math.log(N)

    lower = max(Q - 2.0, 0.0) + 1e-10
    upper = 10.0 * (math.log(N) + Q)
    f_lower = root_equation(lower, N, Q)
    f_upper = root_equation(upper, N, Q)
    if not f_lower < 0 < f_upper:
        raise NumericalError(
            f"cannot bracket d_N for N={N}, Q={Q}: "
            f"f({lower:.6g})={f_lower:.3g}, f({upper:.6g})={f_upper:.3g}"
        )
    xi = optimize.brentq(root_equation, lower, upper, args=(N, Q), xtol=ROOT_XTOL)

    # Newton polish; the equation is increasing to the right of Q - 2
    for _ in range(3):
        slope = (1.0 - Q / 2.0) / xi + 0.5
        step = root_equation(xi, N, Q) / slope
        if not math.isfinite(step) or xi - step <= lower:
            break
        xi -= step
        if abs(step) < ROOT_XTOL:
            break
    return xi


def universal_threshold(N: int, Q: int) -> UniversalThreshold:
    """
    Finite-sample and asymptotic universal thresholds for N null blocks of size Q.

    Example:
        >>> ut = universal_threshold(1000, 2)
        >>> ut.d_N == 2 * math.log(1000)
        True
    """
    _check_size(N, Q)
    N, Q = int(N), int(Q)
    d_N = _solve_root(N, Q)
    log_log = math.log(math.log(N))
    asymptotic = 2.0 * (math.log(N) + (Q / 2.0) * log_log - gammaln(Q / 2.0))
    return UniversalThreshold(
        Q=Q,
        N=N,
        d_N=d_N,
        lambda_finite=math.sqrt(max(d_N + 2.0 * log_log, 0.0)),
        lambda_asymptotic=math.sqrt(max(asymptotic, 0.0)),
        root_residual=abs(root_equation(d_N, N, Q)),
    )


def robust_universal_threshold(N: int, Q: int) -> float:
    """sqrt((2 / Q) ln N), the universal threshold of the robust (min-entry) variant"""
    _check_size(N, Q)
    return math.sqrt(2.0 / Q * math.log(N))


def prior_scale(N: int, Q: int, nu: float) -> Tuple[float, float]:
    """(tau^2, d_N) with tau^2 = lambda_finite^2 / (Q N nu + 1)"""
    ut = universal_threshold(N, Q)
    return ut.lambda_finite ** 2 / (Q * N * nu + 1.0), ut.d_N


def lambda_prior_cdf(lam, N: int, Q: int, nu: float):
    """F(lam) = G0((lam^2 / tau^2 - d_N) / 2), G0 the standard Gumbel cdf"""
    tau2, d_N = prior_scale(N, Q, nu)
    lam = np.asarray(lam, dtype=float)
    return gumbel_r.cdf((lam ** 2 / tau2 - d_N) / 2.0)


def lambda_prior_logpdf(lam, N: int, Q: int, nu: float):
    tau2, d_N = prior_scale(N, Q, nu)
    lam = np.asarray(lam, dtype=float)
    return gumbel_r.logpdf((lam ** 2 / tau2 - d_N) / 2.0) + np.log(lam / tau2)


def lambda_prior_density(lam, N: int, Q: int, nu: float):
    """Density of the threshold prior, dF/dlam"""
    return np.exp(lambda_prior_logpdf(lam, N, Q, nu))


def sl2wic(data: BlockSequence, alpha: BlockSequence, hp: Hyperparameters) -> float:
    """
    Sparsity weighted l2 information criterion of (alpha, lam, nu), defined at s = 1.

    The improper uniform prior on nu contributes a constant and is dropped.

    Raises:
        DomainError: if s != 1, lam <= 0, shapes differ or a block of the data is zero
    """
    data = _as_sequence(data)
    alpha = _as_sequence(alpha)
    if hp.s != 1:
        raise DomainError(f"the criterion is defined for s = 1, got s = {hp.s}")
    if hp.lam <= 0:
        raise DomainError("the criterion needs lambda > 0")
    if alpha.blocks.shape != data.blocks.shape:
        raise DomainError(f"alpha has shape {alpha.blocks.shape}, data has {data.blocks.shape}")
    norms = data.norms()
    if np.any(norms == 0):
        raise DomainError("the criterion is undefined when a data block is zero")

    N, Q, nu, lam = data.N, data.Q, hp.nu, hp.lam
    fit = 0.5 * float(np.sum((data.blocks - alpha.blocks) ** 2))
    penalty = hp.lam_nu * float(np.sum(alpha.norms() / norms ** (nu - 1)))
    normalizer = -N * (gammaln(Q / 2.0) - math.log(2.0) - (Q / 2.0) * math.log(math.pi) - gammaln(Q))
    scale_terms = Q * (nu - 1) * float(np.sum(np.log(norms))) - Q * N * nu * math.log(lam)
    prior = -float(lambda_prior_logpdf(lam, N, Q, nu))
    return fit + penalty + normalizer + scale_terms + prior


def _default_lambdas(data: BlockSequence, n_lambda: int = 50) -> np.ndarray:
    upper = max(float(data.norms().max()), DEFAULT_LAMBDA_MIN * 10)
    return np.geomspace(DEFAULT_LAMBDA_MIN, upper, n_lambda)


def minimize_sl2wic(data: BlockSequence, lambda_grid: Optional[Sequence[float]] = None,
                    nu_grid: Optional[Sequence[float]] = None) -> Tuple[Hyperparameters, float]:
    """
    Minimize the criterion over alpha and a (lam, nu) grid.

    Given (lam, nu) the exact alpha minimizer is the s = 1 closed form, so the
    search is over the grid only. Ties go to the larger lambda.

    Returns:
        (Hyperparameters with s = 1, criterion value)
    """
    data = _as_sequence(data)
    lambdas = _default_lambdas(data) if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    nus = SearchGrid().nus if nu_grid is None else tuple(nu_grid)

    best = None
    for nu in nus:
        for lam in lambdas:
            hp = Hyperparameters(lam=float(lam), nu=float(nu), s=1.0)
            alpha = denoise_canonical(data, hp)
            value = sl2wic(data, alpha, hp)
            key = (value, -hp.lam, hp.nu)
            if best is None or key < best[0]:
                best = (key, hp, value)
    if best is None:
        raise DomainError("empty grid")
    return best[1], best[2]


def canonical_path(data: BlockSequence):
    """Path evaluator of the canonical SURE for the two-stage search"""
    data = _as_sequence(data)
    norms = data.norms()

    def evaluate(nu: float, s: Optional[float], lambdas: np.ndarray):
        out = []
        for lam in lambdas:
            hp = Hyperparameters(lam=float(lam), nu=nu, s=s)
            out.append((float(np.sum(_risk_terms(norms, data.Q, hp))), None))
        return out

    return evaluate


def select_canonical(data: BlockSequence, rule: str = "sure", grid: Optional[SearchGrid] = None,
                     nu: float = 2.0, max_workers: Optional[int] = 1) -> Hyperparameters:
    """
    Choose hyperparameters for a block sequence.

    Args:
        data: Unit-variance block sequence
        rule: 'sure' (two-stage, s = 2 ln nu + 1), 'sure_s1' (s = 1),
            'sl2wic' (s = 1) or 'universal' (finite-sample threshold, given nu,
            s = 2 ln nu + 1)
        grid: Search grids of the SURE rules
        nu: nu of the universal rule
        max_workers: Thread cap of the SURE searches

    Example:
        >>> hp = select_canonical(data, "universal")
    """
    data = _as_sequence(data)
    if rule == "universal":
        if data.N < 2:
            raise DomainError("the universal threshold needs N >= 2 blocks")
        return Hyperparameters.smooth(universal_threshold(data.N, data.Q).lambda_finite, nu)
    if rule == "sl2wic":
        nus = grid.nus if grid is not None else None
        return minimize_sl2wic(data, nu_grid=nus)[0]
    if rule in ("sure", "sure_s1"):
        upper = max(float(data.norms().max()), DEFAULT_LAMBDA_MIN * 10)
        search = two_stage_search if rule == "sure" else stage_one_search
        return search(canonical_path(data), lambda nu_: upper, grid, max_workers).hp
    raise DomainError(f"unknown rule '{rule}' (use one of {CANONICAL_RULES})")


def oracle_risk(alpha: BlockSequence) -> float:
    """Keep-or-kill oracle risk sum_n min(||alpha_n||^2, Q)"""
    alpha = _as_sequence(alpha)
    return float(np.sum(np.minimum(alpha.norms() ** 2, alpha.Q)))


def oracle_bound(N: int, Q: int, nu: float, s: float, alpha) -> float:
    """
    Upper bound (Q + 1 + 2 nu s + c lam^2)(Q + R*) on the risk at the finite-sample threshold.

    c = max(1 + nu s / Q, s^2) and lam is the asymptotic universal threshold.
    ``alpha`` is a BlockSequence or the oracle risk R* itself.
    """
    _check_size(N, Q)
    hp = Hyperparameters(lam=0.0, nu=nu, s=s)
    if isinstance(alpha, (int, float)):
        r_star = float(alpha)
    else:
        alpha = _as_sequence(alpha)
        if alpha.N != N or alpha.Q != Q:
            raise DomainError(f"alpha is {alpha.N} x {alpha.Q}, expected {N} x {Q}")
        r_star = oracle_risk(alpha)
    lam2 = universal_threshold(N, Q).lambda_asymptotic ** 2
    c = max(1.0 + hp.nu * hp.s / Q, hp.s ** 2)
    return (Q + 1.0 + 2.0 * hp.nu * hp.s + c * lam2) * (Q + r_star)


def null_pivot_samples(N: int, Q: int, replicates: int, rng: np.random.Generator) -> np.ndarray:
    """(max_n ||Y_n||^2 - d_N) / 2 for null data, one value per replicate"""
    _check_size(N, Q)
    if replicates < 1:
        raise DomainError("replicates must be >= 1")
    d_N = universal_threshold(N, Q).d_N
    maxima = np.array([
        np.max(np.sum(rng.standard_normal((N, Q)) ** 2, axis=1)) for _ in range(replicates)
    ])
    return (maxima - d_N) / 2.0
