"""
Exact SURE for SBITE fits and the two-stage hyperparameter search.

The fitted mean is mu = mean(Y) 1 + X beta(Y). Its divergence is obtained by
differentiating the fixed-point equations of the active blocks: for block j
with t_j = lam^nu / (b_j ||r_j||), phi_j = (1 - t_j)^s and
g_j = s (1 - t_j)^(s-1) t_j,

    d beta_j = K_j d r_j + c_j,
    K_j = phi_j C_jj^{-1} + g_j m_j r_j' / ||r_j||^2,   m_j = C_jj^{-1} r_j,
    c_j = g_j (nu - 1) (pilot_j' d pilot_j) / ||pilot_j||^2 m_j,

with d r_j = X_j' e_n - sum_{k != j} C_jk d beta_k and d pilot = A e_n. Stacking
the active blocks gives one dense linear system for all N observations.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from sbite.config import get_thread_count
from sbite.core.fixed_point import (
    DEFAULT_MAX_ITER, DEFAULT_TOL, orthonormalize_blocks, partial_correlation,
    solve_group_sbite, solve_sbite, transform_blocks,
)
from sbite.errors import DomainError, NumericalError
from sbite.models.params import Hyperparameters
from sbite.models.problem import FixedPointSolution, ProblemInstance, block_norms
from sbite.models.report import RiskReport

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12
DEFAULT_NUS = (1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0)
DEFAULT_N_LAMBDA = 50
DEFAULT_LAMBDA_MIN = 1e-3
DEFAULT_STAGE2_POINTS = 30
CRITERIA = ("sure", "gsure")


@dataclass
class GradientSystem:
    """
    Linear system (I + K G_off) H = K X_a' + C for the active coordinates.

    Attributes:
        coords: Active coefficient indices (in the working basis)
        matrix: System matrix, |active| x |active|
        rhs: Right-hand sides, one column per observation
        weights: Diagonal weights 1 / (phi_j + g_j) per active coordinate;
            equal to 1 at s = 1 and >= 1 for s > 1
    """
    coords: np.ndarray
    matrix: np.ndarray
    rhs: np.ndarray
    weights: np.ndarray


def _working_problem(instance: ProblemInstance, solution: FixedPointSolution):
    """Instance and coefficients the fixed-point equations hold in (gamma basis for grouped fits)"""
    if not solution.grouped:
        return instance, solution.beta, None
    ortho, Rs = orthonormalize_blocks(instance)
    gamma = transform_blocks(solution.beta, Rs, instance.partition, inverse=False)
    return ortho, gamma, Rs


def _active_blocks(solution: FixedPointSolution, hp: Hyperparameters) -> List[int]:
    if hp.lam == 0:
        return list(range(solution.partition.J))
    return sorted(solution.active_blocks)


def _resolve_hp(solution: FixedPointSolution, hp: Optional[Hyperparameters]) -> Hyperparameters:
    hp = hp if hp is not None else solution.hp
    if hp is None:
        raise DomainError("hyperparameters are required when the solution does not carry them")
    return hp


def gradient_system(instance: ProblemInstance, solution: FixedPointSolution,
                    hp: Optional[Hyperparameters] = None) -> GradientSystem:
    """Assemble the derivative system of a converged fit (working basis)"""
    hp = _resolve_hp(solution, hp)
    work, beta, _ = _working_problem(instance, solution)
    part = work.partition
    active = _active_blocks(solution, hp)
    coords = part.coordinates(active)
    n_active = coords.size
    N = work.N

    K = np.zeros((n_active, n_active))
    extra = np.zeros((n_active, N))
    weights = np.ones(n_active)
    b = work.pilot_weights(hp.nu)

    pos = 0
    for j in active:
        sl = part.block_slice(j)
        p = part.sizes[j]
        loc = slice(pos, pos + p)
        r = partial_correlation(work, beta, j)
        r_norm = float(np.linalg.norm(r))
        C_inv = linalg.cho_solve(work.block_factors[j], np.eye(p))
        m = C_inv @ r

        if hp.lam == 0:
            phi, g = 1.0, 0.0
        else:
            t = hp.lam_nu / (b[j] * r_norm)
            phi = (1.0 - t) ** hp.s
            g = hp.s * (1.0 - t) ** (hp.s - 1) * t

        K[loc, loc] = phi * C_inv
        if g != 0.0:
            K[loc, loc] += g * np.outer(m, r) / r_norm ** 2
            if hp.nu != 1:
                pilot_j = work.pilot[sl]
                d_log_pilot = pilot_j @ work.pilot_map[sl] / (pilot_j @ pilot_j)
                extra[loc] = g * (hp.nu - 1) * np.outer(m, d_log_pilot)
        weights[loc] = 1.0 / (phi + g)
        pos += p

    Xa = work.X[:, coords]
    G_off = Xa.T @ Xa
    pos = 0
    for j in active:
        p = part.sizes[j]
        G_off[pos:pos + p, pos:pos + p] = 0.0
        pos += p

    return GradientSystem(
        coords=coords,
        matrix=np.eye(n_active) + K @ G_off,
        rhs=K @ Xa.T + extra,
        weights=weights,
    )


def _working_jacobian(instance, solution, hp):
    if not solution.converged:
        raise NumericalError("SURE needs a converged fixed point")
    work, _, Rs = _working_problem(instance, solution)
    system = gradient_system(instance, solution, hp)
    H = np.zeros((work.P, work.N))
    if system.coords.size:
        cond = np.linalg.cond(system.matrix)
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            raise NumericalError(
                f"gradient system is singular (condition number {cond:.3g}); "
                f"active columns are rank deficient at s = 1, use s > 1"
            )
        H[system.coords] = linalg.lu_solve(linalg.lu_factor(system.matrix), system.rhs)
    return work, H, Rs


def beta_jacobian(instance: ProblemInstance, solution: FixedPointSolution,
                  hp: Optional[Hyperparameters] = None) -> np.ndarray:
    """
    Derivatives of the fitted coefficients with respect to every observation.

    Returns:
        P x N matrix whose n-th column is d beta / d Y_n (zero rows off the
        active set)

    Raises:
        NumericalError: if the solution did not converge or the system is singular
    """
    hp = _resolve_hp(solution, hp)
    _, H, Rs = _working_jacobian(instance, solution, hp)
    if Rs is not None:
        H = transform_blocks(H, Rs, instance.partition, inverse=True)
    return H


def beta_gradient(instance: ProblemInstance, solution: FixedPointSolution,
                  hp: Optional[Hyperparameters] = None, n: int = 0) -> np.ndarray:
    """d beta / d Y_n, a vector of length P"""
    if not 0 <= n < instance.N:
        raise DomainError(f"observation index {n} out of range [0, {instance.N})")
    return beta_jacobian(instance, solution, hp)[:, n]


def gsure_value(rss: float, edf: float, N: int) -> float:
    """(rss / N) / (1 - edf / N)^2, +inf when edf >= N"""
    if edf >= N:
        return float("inf")
    return (rss / N) / (1.0 - edf / N) ** 2


def sure(instance: ProblemInstance, solution: FixedPointSolution,
         hp: Optional[Hyperparameters] = None) -> RiskReport:
    """
    Stein unbiased risk estimate of a converged fit under unit noise variance.

    Callers with sigma != 1 rescale the response first.

    Example:
        >>> sol = solve_sbite(instance, hp)
        >>> report = sure(instance, sol, hp)
        >>> report.sure == report.rss + instance.N + 2 * (report.edf - instance.N)
        True
    """
    hp = _resolve_hp(solution, hp)
    work, H, _ = _working_jacobian(instance, solution, hp)
    N = instance.N
    resid = instance.Y - instance.X @ solution.beta
    rss = float(resid @ resid)
    edf = 1.0 + float(np.sum(work.X * H.T))
    return RiskReport(
        hp=hp,
        sure=rss + N + 2.0 * (edf - N),
        gsure=gsure_value(rss, edf, N),
        edf=edf,
        rss=rss,
        active_count=solution.active_count,
        solution=solution,
    )


def gsure(instance: ProblemInstance, solution: FixedPointSolution,
          hp: Optional[Hyperparameters] = None) -> float:
    return sure(instance, solution, hp).gsure


def activation_margin(instance: ProblemInstance, solution: FixedPointSolution,
                      hp: Optional[Hyperparameters] = None) -> float:
    """min_j | b_j ||r_j|| - lam^nu | at the solution; small values mean a block is about to switch"""
    hp = _resolve_hp(solution, hp)
    work, beta, _ = _working_problem(instance, solution)
    b = work.pilot_weights(hp.nu)
    margins = [
        abs(b[j] * float(np.linalg.norm(partial_correlation(work, beta, j))) - hp.lam_nu)
        for j in range(work.partition.J)
    ]
    return float(min(margins))


def lambda_max(instance: ProblemInstance, nu: float, grouped: bool = False) -> float:
    """Smallest lambda for which beta = 0 solves the fixed-point equations"""
    work = orthonormalize_blocks(instance)[0] if grouped else instance
    b = work.pilot_weights(nu)
    top = float(np.max(b * block_norms(work.xty, work.partition)))
    return top ** (1.0 / nu)


@dataclass
class SearchGrid:
    """
    Grids of the two-stage search.

    Attributes:
        nus: nu values of both stages
        lambdas: Stage-1 lambda grid; None uses ``n_lambda`` log-spaced points
            on [lambda_min, lambda_max(nu)] separately for every nu
        n_lambda: Size of the default stage-1 grid
        lambda_min: Lower end of the default stage-1 grid
        stage2_points: Size of the stage-2 grid on [lam/10, 10 lam]; 1 keeps lam
    """
    nus: Sequence[float] = DEFAULT_NUS
    lambdas: Optional[Sequence[float]] = None
    n_lambda: int = DEFAULT_N_LAMBDA
    lambda_min: float = DEFAULT_LAMBDA_MIN
    stage2_points: int = DEFAULT_STAGE2_POINTS

    def __post_init__(self):
        """Validate grids"""
        self.nus = tuple(float(v) for v in self.nus)
        if not self.nus:
            raise DomainError("nu grid is empty")
        if any(v < 1 for v in self.nus):
            raise DomainError(f"nu values must be >= 1, got {self.nus}")
        if self.lambdas is not None:
            self.lambdas = tuple(float(v) for v in self.lambdas)
            if not self.lambdas:
                raise DomainError("lambda grid is empty")
            if any(v < 0 for v in self.lambdas):
                raise DomainError("lambda values must be >= 0")
        if self.n_lambda < 1 or self.stage2_points < 1:
            raise DomainError("grid sizes must be >= 1")
        if not self.lambda_min > 0:
            raise DomainError("lambda_min must be positive")

    def stage1_lambdas(self, upper: float) -> np.ndarray:
        if self.lambdas is not None:
            return np.array(self.lambdas)
        return np.unique(np.geomspace(self.lambda_min, max(upper, self.lambda_min), self.n_lambda))

    def stage2_lambdas(self, center: float) -> np.ndarray:
        if self.stage2_points == 1 or center == 0:
            return np.array([center])
        return np.geomspace(center / 10.0, center * 10.0, self.stage2_points)


@dataclass
class SearchResult:
    """Minimizer of a two-stage search with everything that was evaluated"""
    hp: Hyperparameters
    value: float
    payload: Any
    stage1_hp: Hyperparameters
    evaluated: List[Tuple[Hyperparameters, float]] = field(default_factory=list, repr=False)


# evaluate_path(nu, s, lambdas) -> one (criterion value, payload) or None per lambda
PathEvaluator = Callable[[float, Optional[float], np.ndarray], List[Optional[Tuple[float, Any]]]]


def _run_stage(evaluate_path: PathEvaluator, paths, max_workers: Optional[int]):
    workers = max_workers or get_thread_count()
    if workers <= 1 or len(paths) == 1:
        outputs = [evaluate_path(*p) for p in paths]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(lambda p: evaluate_path(*p), paths))

    best = None
    evaluated = []
    for (nu, s, lambdas), results in zip(paths, outputs):
        for lam, item in zip(lambdas, results):
            if item is None:
                continue
            value, payload = item
            hp = Hyperparameters(lam=float(lam), nu=nu, s=s)
            evaluated.append((hp, value))
            # ties go to the larger lambda, then the smaller nu
            key = (value, -hp.lam, hp.nu)
            if best is None or key < best[0]:
                best = (key, hp, value, payload)
    return best, evaluated


def stage_one_search(evaluate_path: PathEvaluator, upper_lambda: Callable[[float], float],
                     grid: Optional[SearchGrid] = None,
                     max_workers: Optional[int] = None) -> SearchResult:
    """Minimize a criterion over the (lambda, nu) grid at s = 1 only"""
    grid = grid or SearchGrid()
    paths = [(nu, 1.0, grid.stage1_lambdas(upper_lambda(nu))) for nu in grid.nus]
    best, evaluated = _run_stage(evaluate_path, paths, max_workers)
    if best is None:
        raise NumericalError("no stage-1 grid point converged")
    _, hp, value, payload = best
    logger.debug("stage 1 selected %s", hp)
    return SearchResult(hp=hp, value=value, payload=payload, stage1_hp=hp, evaluated=evaluated)


def two_stage_search(evaluate_path: PathEvaluator, upper_lambda: Callable[[float], float],
                     grid: Optional[SearchGrid] = None,
                     max_workers: Optional[int] = None) -> SearchResult:
    """
    Minimize a criterion over (lambda, nu): first at s = 1, then locally with s = 2 ln nu + 1.

    Each nu defines an independent lambda path, and paths run concurrently.
    Selection does not depend on the thread count.

    Args:
        evaluate_path: Criterion evaluator for one nu path
        upper_lambda: nu -> upper end of the default stage-1 lambda grid
        grid: Search grids (defaults: SearchGrid())
        max_workers: Thread cap (default: SBITE_THREADS or the CPU count)

    Raises:
        NumericalError: when no grid point could be evaluated
    """
    grid = grid or SearchGrid()
    first = stage_one_search(evaluate_path, upper_lambda, grid, max_workers)

    stage2_lambdas = grid.stage2_lambdas(first.hp.lam)
    stage2_paths = [(nu, None, stage2_lambdas) for nu in grid.nus]
    best, evaluated = _run_stage(evaluate_path, stage2_paths, max_workers)
    if best is None:
        raise NumericalError("no stage-2 grid point converged")

    _, hp, value, payload = best
    logger.debug("stage 2 selected %s (criterion %.6g)", hp, value)
    return SearchResult(hp=hp, value=value, payload=payload, stage1_hp=first.hp,
                        evaluated=first.evaluated + evaluated)


def regression_path(instance: ProblemInstance, criterion: str = "sure", grouped: bool = False,
                    tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> PathEvaluator:
    """
    Path evaluator fitting SBITE along decreasing lambda with warm starts.

    Points whose fit does not converge, or whose gradient system is singular,
    are skipped and logged.
    """
    if criterion not in CRITERIA:
        raise DomainError(f"unknown criterion '{criterion}' (use one of {CRITERIA})")
    solver = solve_group_sbite if grouped else solve_sbite

    def evaluate(nu: float, s: Optional[float], lambdas: np.ndarray):
        out: List[Optional[Tuple[float, RiskReport]]] = [None] * len(lambdas)
        init = None
        for i in np.argsort(lambdas, kind="stable")[::-1]:
            hp = Hyperparameters(lam=float(lambdas[i]), nu=nu, s=s)
            sol = solver(instance, hp, init=init, tol=tol, max_iter=max_iter)
            if not sol.converged:
                logger.warning("skipping %s: fit did not converge", hp)
                continue
            init = sol.beta
            try:
                report = sure(instance, sol, hp)
            except NumericalError as exc:
                logger.warning("skipping %s: %s", hp, exc)
                continue
            out[i] = (report.criterion(criterion), report)
        return out

    return evaluate


def search_hyperparameters(instance: ProblemInstance, criterion: str = "sure",
                           grids: Optional[SearchGrid] = None, grouped: bool = False,
                           tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                           max_workers: Optional[int] = None,
                           smooth: bool = True) -> Tuple[Hyperparameters, RiskReport]:
    """
    Select (lambda, nu, s) for a regression instance by SURE or GSURE.

    With ``smooth=False`` only the s = 1 stage runs (lasso with nus=(1,),
    adaptive lasso otherwise).

    Returns:
        (Hyperparameters, RiskReport) of the minimizer; the report carries the
        fitted solution

    Example:
        >>> hp, report = search_hyperparameters(instance, "sure")
        >>> report.solution.active_blocks
    """
    evaluate = regression_path(instance, criterion, grouped, tol, max_iter)
    search = two_stage_search if smooth else stage_one_search
    result = search(
        evaluate,
        lambda nu: lambda_max(instance, nu, grouped),
        grids,
        max_workers,
    )
    return result.hp, result.payload


def risk_surface(instance: ProblemInstance, lambdas: Sequence[float], nus: Sequence[float],
                 s: Optional[float] = 1.0, grouped: bool = False,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                 max_workers: Optional[int] = None) -> List[Tuple[Hyperparameters, Optional[RiskReport]]]:
    """
    Risk reports over a lambda x nu grid (s fixed, or None for s = 2 ln nu + 1).

    Skipped points are returned with a None report.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    evaluate = regression_path(instance, "sure", grouped, tol, max_iter)
    paths = [(float(nu), s, lambdas) for nu in nus]
    workers = max_workers or get_thread_count()
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outputs = list(pool.map(lambda p: evaluate(*p), paths))

    surface = []
    for (nu, _, _), results in zip(paths, outputs):
        for lam, item in zip(lambdas, results):
            surface.append((Hyperparameters(lam=float(lam), nu=nu, s=s), None if item is None else item[1]))
    return surface
