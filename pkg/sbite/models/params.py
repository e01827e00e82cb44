import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from sbite.errors import DomainError


def smoothness_rule(nu: float) -> float:
    """Smoothness trade-off s(nu) = 2 log(nu) + 1 used when s is delegated."""
    if not nu >= 1:
        raise DomainError(f"nu must be >= 1, got {nu}")
    return 2.0 * math.log(nu) + 1.0


@dataclass(frozen=True)
class Hyperparameters:
    """
    Hyperparameters of smooth James-Stein thresholding.

    Attributes:
        lam: Threshold lambda >= 0, in noise standard deviation units
        nu: Shrinkage exponent >= 1 (nu=1 soft, nu -> infinity approaches hard)
        s: Smoothness exponent >= 1; None delegates to ``smoothness_rule(nu)``

    Example:
        >>> hp = Hyperparameters(lam=2.5, nu=2.0, s=1.0)
        >>> Hyperparameters(lam=1.0, nu=4.0, s=None).s   # 2 log 4 + 1
        3.772588722239781
    """
    lam: float
    nu: float = 1.0
    s: Optional[float] = 1.0

    def __post_init__(self):
        """Validate ranges and resolve delegated smoothness"""
        lam = float(self.lam)
        nu = float(self.nu)
        if not math.isfinite(lam) or lam < 0:
            raise DomainError(f"lambda must be a finite value >= 0, got {self.lam}")
        if not math.isfinite(nu) or nu < 1:
            raise DomainError(f"nu must be a finite value >= 1, got {self.nu}")

        s = smoothness_rule(nu) if self.s is None else float(self.s)
        if not math.isfinite(s) or s < 1:
            raise DomainError(f"s must be a finite value >= 1, got {self.s}")

        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "s", s)

    @classmethod
    def smooth(cls, lam: float, nu: float) -> "Hyperparameters":
        """Hyperparameters with s = 2 log(nu) + 1"""
        return cls(lam=lam, nu=nu, s=None)

    @property
    def lam_nu(self) -> float:
        """lambda ** nu, the effective threshold on pilot-weighted gradient norms"""
        return self.lam ** self.nu

    def with_lambda(self, lam: float) -> "Hyperparameters":
        return Hyperparameters(lam=lam, nu=self.nu, s=self.s)

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "nu": self.nu, "s": self.s}

    def __repr__(self):
        return f"Hyperparameters(lambda={self.lam:.6g}, nu={self.nu:.6g}, s={self.s:.6g})"


def as_block(values) -> np.ndarray:
    """
    Validate a block of Q >= 1 finite reals and return it as a float64 vector.

    Raises:
        DomainError: if the block is empty or holds non-finite entries
    """
    block = np.asarray(values, dtype=float).ravel()
    if block.size == 0:
        raise DomainError("a block needs at least one entry")
    if not np.all(np.isfinite(block)):
        raise DomainError("block entries must be finite")
    return block
