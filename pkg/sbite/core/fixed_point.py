"""
SBITE fixed point for the Gaussian linear model.

The solver cycles over blocks, computing for block j the partial residual
correlation r_j = X_j'Y - sum_{k != j} X_j'X_k beta_k (the likelihood gradient
with block j thresholded to zero), the block MLE (X_j'X_j)^{-1} r_j, and the
smooth James-Stein update of that MLE.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from sbite.errors import DomainError
from sbite.models.params import Hyperparameters
from sbite.models.problem import (
    BlockPartition, FixedPointSolution, ProblemInstance,
    active_from_beta, as_partition,
)

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000
PILOT_CONDITION_LIMIT = 1e8
PILOT_RIDGE_FRACTION = 1e-3


@dataclass
class DesignScaling:
    """Centered/rescaled design and response with the constants to undo it"""
    X: np.ndarray
    Y: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float


def rescale_design(raw_X, raw_Y) -> DesignScaling:
    """
    Mean-center every column and scale it to unit Euclidean norm; center the response.

    Args:
        raw_X: N x P design with N >= 2
        raw_Y: Response of length N

    Returns:
        DesignScaling with the transformed data and the scale factors

    Raises:
        DomainError: on shape problems or a zero-variance column (index reported)

    Example:
        >>> sc = rescale_design([[1.0], [2.0], [3.0]], [1.0, 2.0, 6.0])
        >>> sc.X[:, 0]
        array([-0.70710678,  0.        ,  0.70710678])
    """
    X = np.asarray(raw_X, dtype=float)
    Y = np.asarray(raw_Y, dtype=float).ravel()
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DomainError("design must be a 2-D array")
    N, P = X.shape
    if N < 2:
        raise DomainError(f"need at least 2 observations, got {N}")
    if Y.shape != (N,):
        raise DomainError(f"response has length {Y.size}, design has {N} rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise DomainError("design and response must be finite")

    x_mean = X.mean(axis=0)
    Xc = X - x_mean
    x_scale = np.linalg.norm(Xc, axis=0)
    for i in range(P):
        if x_scale[i] <= np.finfo(float).eps * max(1.0, np.abs(X[:, i]).max()) * N:
            raise DomainError(f"column {i} has zero variance")

    y_mean = float(Y.mean())
    return DesignScaling(X=Xc / x_scale, Y=Y - y_mean, x_mean=x_mean, x_scale=x_scale, y_mean=y_mean)


def compute_pilot(X: np.ndarray, Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Linear pilot estimate beta* = A Y.

    Least squares when N > P and X'X is well conditioned, ridge with penalty
    1e-3 * trace(X'X) / P otherwise.

    Returns:
        (pilot, A) with A of shape P x N
    """
    N, P = X.shape
    G = X.T @ X
    if N > P and np.linalg.cond(G) < PILOT_CONDITION_LIMIT:
        A = linalg.solve(G, X.T, assume_a="pos")
    else:
        ridge = PILOT_RIDGE_FRACTION * np.trace(G) / P
        logger.debug("ridge pilot with penalty %.3g (N=%d, P=%d)", ridge, N, P)
        A = linalg.solve(G + ridge * np.eye(P), X.T, assume_a="pos")
    return A @ Y, A


def make_instance(raw_X, raw_Y, partition=None) -> ProblemInstance:
    """Rescale the data, compute the pilot and build a validated ProblemInstance"""
    scaling = rescale_design(raw_X, raw_Y)
    pilot, A = compute_pilot(scaling.X, scaling.Y)
    return ProblemInstance(
        X=scaling.X,
        Y=scaling.Y,
        partition=as_partition(partition, scaling.X.shape[1]),
        pilot=pilot,
        pilot_map=A,
        y_mean=scaling.y_mean,
        x_mean=scaling.x_mean,
        x_scale=scaling.x_scale,
    )


def _check_block(instance: ProblemInstance, j: int):
    if not 0 <= j < instance.partition.J:
        raise DomainError(f"block index {j} out of range [0, {instance.partition.J})")


def _check_beta(instance: ProblemInstance, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.shape != (instance.P,):
        raise DomainError(f"beta has length {beta.size}, expected {instance.P}")
    return beta


def partial_correlation(instance: ProblemInstance, beta: np.ndarray, j: int) -> np.ndarray:
    """r_j = X_j'Y - sum_{k != j} X_j'X_k beta_k"""
    sl = instance.partition.block_slice(j)
    return instance.xty[sl] - instance.gram[sl] @ beta + instance.gram[sl, sl] @ beta[sl]


def block_mle_update(instance: ProblemInstance, beta, j: int) -> np.ndarray:
    """
    Exact minimizer of 1/2 ||Y - X beta||^2 over block j, other blocks fixed.

    Example:
        >>> block_mle_update(instance, np.zeros(instance.P), 0)
    """
    _check_block(instance, j)
    beta = _check_beta(instance, beta)
    return instance.block_solve(j, partial_correlation(instance, beta, j))


def _smooth_factor(weighted_norm: float, hp: Hyperparameters) -> float:
    # weighted_norm = b_j ||r_j||; a vanishing pilot block (b_j = 0) always thresholds
    if hp.lam == 0:
        return 1.0
    if weighted_norm <= hp.lam_nu:
        return 0.0
    return (1.0 - hp.lam_nu / weighted_norm) ** hp.s


def _updated_block(instance: ProblemInstance, j: int, r: np.ndarray, b_j: float,
                   hp: Hyperparameters) -> np.ndarray:
    factor = _smooth_factor(b_j * float(np.linalg.norm(r)), hp)
    if factor == 0.0:
        return np.zeros_like(r)
    return factor * instance.block_solve(j, r)


def fixed_point_residual(instance: ProblemInstance, beta, hp: Hyperparameters) -> float:
    """
    Sup-norm distance between beta and one simultaneous SBITE map of beta.

    Zero exactly at a fixed point of the SBITE equations.
    """
    beta = _check_beta(instance, beta)
    b = instance.pilot_weights(hp.nu)
    worst = 0.0
    for j, sl in enumerate(instance.partition.slices()):
        target = _updated_block(instance, j, partial_correlation(instance, beta, j), b[j], hp)
        worst = max(worst, float(np.max(np.abs(beta[sl] - target))))
    return worst


def penalized_objective(instance: ProblemInstance, beta, hp: Hyperparameters) -> float:
    """
    1/2 ||Y - X beta||^2 + lam^nu sum_j ||beta_j|| / ||pilot_j||^(nu-1).

    At s = 1 with unit blocks the SBITE fixed point minimizes this objective.
    """
    beta = _check_beta(instance, beta)
    resid = instance.Y - instance.X @ beta
    b = instance.pilot_weights(hp.nu)
    penalty = 0.0
    for j, sl in enumerate(instance.partition.slices()):
        size = float(np.linalg.norm(beta[sl]))
        if size == 0.0:
            continue
        if b[j] == 0.0:
            return float("inf")
        penalty += size / b[j]
    return 0.5 * float(resid @ resid) + hp.lam_nu * penalty


def _iterate(instance: ProblemInstance, hp: Hyperparameters, beta: np.ndarray,
             tol: float, max_iter: int, order: str, record_objective: bool):
    slices = instance.partition.slices()
    G = instance.gram
    b = instance.pilot_weights(hp.nu)

    if order == "cyclic":
        blocks = list(range(len(slices)))
    elif order == "reverse":
        blocks = list(range(len(slices)))[::-1]
    else:
        raise DomainError(f"unknown block order '{order}' (use 'cyclic' or 'reverse')")

    changes: List[float] = []
    objective = [penalized_objective(instance, beta, hp)] if record_objective else None
    residual = float("inf")
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        grad = instance.xty - G @ beta
        change = 0.0
        for j in blocks:
            sl = slices[j]
            old = beta[sl].copy()
            r = grad[sl] + G[sl, sl] @ old
            new = _updated_block(instance, j, r, b[j], hp)
            delta = new - old
            if np.any(delta):
                beta[sl] = new
                grad -= G[:, sl] @ delta
                change = max(change, float(np.max(np.abs(delta))))
        changes.append(change)
        if record_objective:
            objective.append(penalized_objective(instance, beta, hp))
        if change <= tol:
            residual = fixed_point_residual(instance, beta, hp)
            if residual <= tol:
                converged = True
                break

    if not converged:
        residual = fixed_point_residual(instance, beta, hp)
    return beta, iterations, residual, converged, changes, objective


def solve_sbite(instance: ProblemInstance, hp: Hyperparameters, init=None,
                tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                order: str = "cyclic", record_objective: bool = False) -> FixedPointSolution:
    """
    Solve the SBITE fixed-point equations by cyclic block updates.

    Args:
        instance: Problem instance
        hp: Hyperparameters (lambda, nu, s)
        init: Starting coefficients (default: the pilot)
        tol: Sup-norm tolerance on the change per full cycle and on the residual
        max_iter: Maximum number of full cycles
        order: 'cyclic' (blocks 1..J) or 'reverse'
        record_objective: Record the penalized objective after every cycle

    Returns:
        FixedPointSolution; ``converged`` is False when max_iter ran out

    Example:
        >>> inst = ProblemInstance.from_data(X, y)
        >>> sol = solve_sbite(inst, Hyperparameters(lam=0.5, nu=2.0, s=None))
        >>> sol.converged, sorted(sol.active_blocks)
    """
    if not tol > 0:
        raise DomainError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise DomainError(f"max_iter must be >= 1, got {max_iter}")
    beta = instance.pilot.copy() if init is None else _check_beta(instance, init).copy()

    beta, iterations, residual, converged, changes, objective = _iterate(
        instance, hp, beta, tol, max_iter, order, record_objective
    )
    if not converged:
        logger.warning("SBITE did not converge in %d cycles (%s, residual %.3g)",
                       max_iter, hp, residual)
    else:
        logger.debug("SBITE converged in %d cycles (%s)", iterations, hp)

    return FixedPointSolution(
        beta=beta,
        active_blocks=active_from_beta(beta, instance.partition),
        iterations=iterations,
        final_residual=residual,
        converged=converged,
        partition=instance.partition,
        hp=hp,
        changes=changes,
        objective=objective,
    )


def orthonormalize_blocks(instance: ProblemInstance) -> Tuple[ProblemInstance, List[np.ndarray]]:
    """
    Re-express the instance with orthonormal within-block columns.

    Each block is factored X_j = U_j R_j (R_j upper triangular with positive
    diagonal). The returned instance has design [U_1 ... U_J], pilot R_j beta*_j
    and pilot map R A; coefficients gamma_j relate by gamma_j = R_j beta_j.
    """
    Us, Rs = [], []
    for sl in instance.partition.slices():
        U, R = np.linalg.qr(instance.X[:, sl])
        signs = np.sign(np.diag(R))
        signs[signs == 0] = 1.0
        Us.append(U * signs)
        Rs.append(signs[:, None] * R)
    R_full = linalg.block_diag(*Rs)
    ortho = ProblemInstance(
        X=np.hstack(Us),
        Y=instance.Y,
        partition=instance.partition,
        pilot=R_full @ instance.pilot,
        pilot_map=R_full @ instance.pilot_map,
        y_mean=instance.y_mean,
    )
    return ortho, Rs


def transform_blocks(values: np.ndarray, Rs: Sequence[np.ndarray], partition: BlockPartition,
                     inverse: bool) -> np.ndarray:
    out = np.empty_like(values)
    for R, sl in zip(Rs, partition.slices()):
        if inverse:
            out[sl] = linalg.solve_triangular(R, values[sl])
        else:
            out[sl] = R @ values[sl]
    return out


def solve_group_sbite(instance: ProblemInstance, hp: Hyperparameters, init=None,
                      tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                      order: str = "cyclic", record_objective: bool = False) -> FixedPointSolution:
    """
    Smooth adaptive group lasso: iterate gamma_j = (c_j)_+^s s_j on orthonormalized blocks.

    With s_j = U_j'Y - sum_{k != j} U_j'U_k gamma_k and
    c_j = 1 - lam^nu / (||gamma*_j||^(nu-1) ||s_j||). Coefficients are reported
    in the instance basis, beta_j = R_j^{-1} gamma_j. For s = nu = 1 the fixed
    point is the group lasso with penalty lam * sum_j ||R_j beta_j||.

    Arguments and return value as for :func:`solve_sbite`; the recorded
    objective is the group objective.
    """
    ortho, Rs = orthonormalize_blocks(instance)
    init_gamma = None
    if init is not None:
        init_gamma = transform_blocks(_check_beta(instance, init), Rs, instance.partition, inverse=False)

    sol = solve_sbite(ortho, hp, init=init_gamma, tol=tol, max_iter=max_iter,
                      order=order, record_objective=record_objective)
    beta = transform_blocks(sol.beta, Rs, instance.partition, inverse=True)
    beta[np.abs(sol.beta) == 0] = 0.0

    return FixedPointSolution(
        beta=beta,
        active_blocks=sol.active_blocks,
        iterations=sol.iterations,
        final_residual=sol.final_residual,
        converged=sol.converged,
        partition=instance.partition,
        hp=hp,
        grouped=True,
        changes=sol.changes,
        objective=sol.objective,
    )
