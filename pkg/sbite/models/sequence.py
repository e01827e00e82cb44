from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from sbite.errors import DomainError


@dataclass
class BlockSequence:
    """
    N blocks of length Q in the canonical model Y_n = alpha_n + eps_n.

    Attributes:
        blocks: N x Q array, one block per row

    Example:
        >>> data = BlockSequence(np.array([[3.0, 4.0], [0.1, 0.2]]))
        >>> data.N, data.Q
        (2, 2)
    """
    blocks: np.ndarray

    def __post_init__(self):
        """Validate and coerce to a 2-D float array"""
        blocks = np.asarray(self.blocks, dtype=float)
        if blocks.ndim == 1:
            blocks = blocks[:, None]
        if blocks.ndim != 2 or blocks.shape[0] < 1 or blocks.shape[1] < 1:
            raise DomainError("a block sequence needs N >= 1 blocks of length Q >= 1")
        if not np.all(np.isfinite(blocks)):
            raise DomainError("block entries must be finite")
        self.blocks = blocks

    @classmethod
    def from_channels(cls, channels) -> "BlockSequence":
        """Stack Q channel vectors of length N into N blocks of size Q"""
        return cls(np.asarray(channels, dtype=float).T)

    @property
    def N(self) -> int:
        return self.blocks.shape[0]

    @property
    def Q(self) -> int:
        return self.blocks.shape[1]

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.blocks, axis=1)

    def with_blocks(self, blocks) -> "BlockSequence":
        return replace(self, blocks=blocks)

    def __len__(self):
        return self.N

    def __repr__(self):
        return f"BlockSequence(N={self.N}, Q={self.Q})"


def _is_power_of_two(value: int) -> bool:
    return value >= 1 and value & (value - 1) == 0


@dataclass
class MultichannelSeries:
    """
    Q channels of T samples each, T a power of two.

    Attributes:
        samples: Q x T array
        sample_rate: Optional sampling rate in Hz (metadata only)
    """
    samples: np.ndarray
    sample_rate: Optional[float] = None

    def __post_init__(self):
        """Validate shape and length"""
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise DomainError("samples must be a Q x T array")
        if not _is_power_of_two(samples.shape[1]):
            raise DomainError(f"series length must be a power of two, got {samples.shape[1]}")
        if not np.all(np.isfinite(samples)):
            raise DomainError("samples must be finite")
        self.samples = samples

    @property
    def Q(self) -> int:
        return self.samples.shape[0]

    @property
    def T(self) -> int:
        return self.samples.shape[1]

    @property
    def J(self) -> int:
        """log2 of the length"""
        return self.T.bit_length() - 1

    def with_samples(self, samples) -> "MultichannelSeries":
        return replace(self, samples=samples)

    def __repr__(self):
        rate = f", sample_rate={self.sample_rate}" if self.sample_rate else ""
        return f"MultichannelSeries(Q={self.Q}, T={self.T}{rate})"


@dataclass
class WaveletDecomposition:
    """
    Periodic orthonormal wavelet coefficients of a multichannel series.

    Attributes:
        approx: Q x 2^j0 approximation coefficients at the coarse level
        details: Detail coefficients for levels j0..J-1, each Q x 2^j
        family: Wavelet family name
        j0: Coarse level
        sample_rate: Carried over from the series
        scales: (levels, Q) MAD noise scales of the details as transformed;
            kept unchanged when the details are replaced
    """
    approx: np.ndarray
    details: List[np.ndarray]
    family: str
    j0: int
    sample_rate: Optional[float] = None
    scales: Optional[np.ndarray] = None

    @property
    def Q(self) -> int:
        return self.approx.shape[0]

    @property
    def levels(self) -> List[int]:
        return list(range(self.j0, self.j0 + len(self.details)))

    @property
    def coefficient_count(self) -> int:
        """Coefficients per channel"""
        return self.approx.shape[1] + sum(d.shape[1] for d in self.details)

    def level_index(self, level: int) -> int:
        if level not in self.levels:
            raise DomainError(f"level {level} not in {self.levels}")
        return level - self.j0

    def level_blocks(self, level: int) -> np.ndarray:
        """N_j x Q array of detail coefficients, one block per time location"""
        return self.details[self.level_index(level)].T

    def with_details(self, details: List[np.ndarray]) -> "WaveletDecomposition":
        return replace(self, details=details)

    def __repr__(self):
        return f"WaveletDecomposition(Q={self.Q}, family={self.family!r}, j0={self.j0}, levels={self.levels})"
