from dataclasses import dataclass, field, replace
from typing import FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from sbite.errors import DomainError
from sbite.models.params import Hyperparameters


@dataclass(frozen=True)
class BlockPartition:
    """
    Partition of P coefficients into J consecutive blocks.

    Attributes:
        sizes: Block sizes p_1..p_J, each >= 1

    Example:
        >>> part = BlockPartition((2, 1, 3))
        >>> part.P, part.J, part.offsets
        (6, 3, (0, 2, 3, 6))
        >>> part.block_slice(2)
        slice(3, 6, None)
    """
    sizes: Tuple[int, ...]

    def __post_init__(self):
        """Validate block sizes"""
        sizes = tuple(int(p) for p in self.sizes)
        if not sizes:
            raise DomainError("a partition needs at least one block")
        if any(p < 1 for p in sizes):
            raise DomainError(f"block sizes must be >= 1, got {sizes}")
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def unit(cls, P: int) -> "BlockPartition":
        """P blocks of size one (lasso / adaptive lasso)"""
        return cls((1,) * int(P))

    @classmethod
    def uniform(cls, P: int, size: int) -> "BlockPartition":
        """Blocks of equal size; P must be a multiple of size"""
        if size < 1 or P % size:
            raise DomainError(f"cannot split {P} coefficients into blocks of {size}")
        return cls((size,) * (P // size))

    @property
    def P(self) -> int:
        return sum(self.sizes)

    @property
    def J(self) -> int:
        return len(self.sizes)

    @property
    def offsets(self) -> Tuple[int, ...]:
        """Cumulative offsets (0, p_1, p_1+p_2, ..., P)"""
        out = [0]
        for p in self.sizes:
            out.append(out[-1] + p)
        return tuple(out)

    def block_slice(self, j: int) -> slice:
        offsets = self.offsets
        if not 0 <= j < self.J:
            raise DomainError(f"block index {j} out of range [0, {self.J})")
        return slice(offsets[j], offsets[j + 1])

    def slices(self) -> List[slice]:
        offsets = self.offsets
        return [slice(offsets[j], offsets[j + 1]) for j in range(self.J)]

    def coordinates(self, blocks) -> np.ndarray:
        """Coefficient indices covered by the given block indices, in block order"""
        idx = [np.arange(s.start, s.stop) for j, s in enumerate(self.slices()) if j in blocks]
        return np.concatenate(idx) if idx else np.zeros(0, dtype=int)


@dataclass
class ProblemInstance:
    """
    Gaussian linear model instance (X, Y, partition, pilot) in the rescaled basis.

    The design is mean-centered with unit-norm columns and the response is
    mean-centered; ``x_mean``, ``x_scale`` and ``y_mean`` map fits back to the
    original basis. The pilot is linear in the response, ``pilot = pilot_map @ Y``.

    Build instances with :meth:`from_data` rather than by hand.

    Attributes:
        X: Rescaled design, N x P
        Y: Centered response, length N
        partition: Block partition of the P columns
        pilot: Root-N-consistent linear pilot estimate (beta tilde star)
        pilot_map: The N -> P linear map A generating the pilot
        y_mean: Response mean removed by centering
        x_mean: Column means removed by centering
        x_scale: Column norms after centering (divided out)

    Raises:
        DomainError: on shape mismatches or when a block Gram X_j'X_j is not
            positive definite
    """
    X: np.ndarray
    Y: np.ndarray
    partition: BlockPartition
    pilot: np.ndarray
    pilot_map: np.ndarray
    y_mean: float = 0.0
    x_mean: Optional[np.ndarray] = None
    x_scale: Optional[np.ndarray] = None

    gram: np.ndarray = field(init=False, repr=False)
    xty: np.ndarray = field(init=False, repr=False)
    block_factors: list = field(init=False, repr=False)

    def __post_init__(self):
        """Validate shapes and factor the block Grams"""
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float).ravel()
        self.pilot = np.asarray(self.pilot, dtype=float).ravel()
        self.pilot_map = np.asarray(self.pilot_map, dtype=float)

        if self.X.ndim != 2:
            raise DomainError("X must be a 2-D array")
        N, P = self.X.shape
        if self.Y.shape != (N,):
            raise DomainError(f"Y has length {self.Y.size}, expected {N}")
        if self.partition.P != P:
            raise DomainError(f"partition covers {self.partition.P} columns, X has {P}")
        if self.pilot.shape != (P,):
            raise DomainError(f"pilot has length {self.pilot.size}, expected {P}")
        if self.pilot_map.shape != (P, N):
            raise DomainError(f"pilot_map has shape {self.pilot_map.shape}, expected {(P, N)}")

        self.x_mean = np.zeros(P) if self.x_mean is None else np.asarray(self.x_mean, dtype=float)
        self.x_scale = np.ones(P) if self.x_scale is None else np.asarray(self.x_scale, dtype=float)

        self.gram = self.X.T @ self.X
        self.xty = self.X.T @ self.Y
        self.block_factors = []
        for j, sl in enumerate(self.partition.slices()):
            try:
                self.block_factors.append(linalg.cho_factor(self.gram[sl, sl]))
            except linalg.LinAlgError:
                raise DomainError(
                    f"Gram matrix of block {j} is not positive definite; "
                    f"every X_j'X_j must be invertible"
                )

    @classmethod
    def from_data(cls, raw_X, raw_Y, partition: Optional[BlockPartition] = None) -> "ProblemInstance":
        """
        Rescale raw data and attach the default linear pilot.

        Args:
            raw_X: Raw design, N x P
            raw_Y: Raw response, length N
            partition: Block partition (default: unit blocks)

        Example:
            >>> inst = ProblemInstance.from_data(X, y, BlockPartition.unit(X.shape[1]))
        """
        from sbite.core.fixed_point import make_instance
        return make_instance(raw_X, raw_Y, partition)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def P(self) -> int:
        return self.X.shape[1]

    @property
    def raw_response(self) -> np.ndarray:
        return self.Y + self.y_mean

    def with_response(self, raw_Y) -> "ProblemInstance":
        """Same design and pilot map, new response (re-centered, pilot recomputed)"""
        raw_Y = np.asarray(raw_Y, dtype=float).ravel()
        y_mean = float(raw_Y.mean())
        Y = raw_Y - y_mean
        return replace(self, Y=Y, pilot=self.pilot_map @ Y, y_mean=y_mean)

    def block_solve(self, j: int, rhs: np.ndarray) -> np.ndarray:
        """(X_j'X_j)^{-1} rhs"""
        factor, _ = self.block_factors[j]
        if factor.shape[0] == 1:
            return rhs / factor[0, 0] ** 2
        return linalg.cho_solve(self.block_factors[j], rhs)

    def pilot_weights(self, nu: float) -> np.ndarray:
        """b_j = ||pilot_j||^(nu - 1) per block (1 when nu = 1)"""
        if nu == 1:
            return np.ones(self.partition.J)
        norms = np.array([np.linalg.norm(self.pilot[sl]) for sl in self.partition.slices()])
        return norms ** (nu - 1)

    def coefficients_in_original_basis(self, beta) -> np.ndarray:
        return np.asarray(beta, dtype=float) / self.x_scale

    def intercept(self, beta) -> float:
        return float(self.y_mean - self.x_mean @ self.coefficients_in_original_basis(beta))

    def __repr__(self):
        return f"ProblemInstance(N={self.N}, P={self.P}, J={self.partition.J})"


@dataclass
class FixedPointSolution:
    """
    Output of the SBITE fixed-point solvers.

    Attributes:
        beta: Coefficients in the rescaled basis, length P
        active_blocks: Indices of blocks with a nonzero estimate
        iterations: Number of full cycles performed
        final_residual: Fixed-point residual at ``beta``
        converged: True when the cycle change and the residual met the tolerance
        partition: Partition the blocks refer to
        hp: Hyperparameters of the fit
        grouped: True for the orthonormalized group update
        changes: Sup-norm change per cycle
        objective: Penalized objective per cycle when recorded
    """
    beta: np.ndarray
    active_blocks: FrozenSet[int]
    iterations: int
    final_residual: float
    converged: bool
    partition: BlockPartition
    hp: Optional[Hyperparameters] = None
    grouped: bool = False
    changes: List[float] = field(default_factory=list)
    objective: Optional[List[float]] = None

    @property
    def active_count(self) -> int:
        return len(self.active_blocks)

    @property
    def support(self) -> np.ndarray:
        """Coefficient indices of the active blocks"""
        return self.partition.coordinates(self.active_blocks)

    def __repr__(self):
        status = "converged" if self.converged else "NOT converged"
        return (f"FixedPointSolution(active={sorted(self.active_blocks)}, "
                f"iterations={self.iterations}, residual={self.final_residual:.2e}, {status})")


def block_norms(values: np.ndarray, partition: BlockPartition) -> np.ndarray:
    return np.array([np.linalg.norm(values[sl]) for sl in partition.slices()])


def active_from_beta(beta: np.ndarray, partition: BlockPartition) -> FrozenSet[int]:
    return frozenset(j for j, sl in enumerate(partition.slices()) if np.any(beta[sl] != 0))


def as_partition(partition: Optional[Sequence[int]], P: int) -> BlockPartition:
    """Accept a BlockPartition, a size sequence or None (unit blocks)"""
    if partition is None:
        return BlockPartition.unit(P)
    if isinstance(partition, BlockPartition):
        return partition
    return BlockPartition(tuple(partition))
