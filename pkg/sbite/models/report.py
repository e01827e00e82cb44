from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from sbite.models.params import Hyperparameters


@dataclass
class RiskReport:
    """
    Risk estimates for one SBITE fit at fixed hyperparameters.

    Attributes:
        hp: Hyperparameters of the fit
        sure: Stein unbiased risk estimate, rss + N + 2 (edf - N)
        gsure: Generalized SURE, (rss / N) / (1 - edf / N)^2, +inf when edf >= N
        edf: Equivalent degrees of freedom, 1 + trace(X d beta / d Y)
        rss: Residual sum of squares of the fitted mean
        active_count: Number of nonzero blocks
        solution: The fit the report was computed from (not serialized)

    Example:
        >>> report = sure(instance, solution, hp)
        >>> report.sure, report.edf
    """
    hp: Hyperparameters
    sure: float
    gsure: float
    edf: float
    rss: float
    active_count: int
    solution: Any = field(default=None, repr=False, compare=False)

    def criterion(self, name: str) -> float:
        """Value of the named selection criterion ('sure' or 'gsure')"""
        return self.gsure if name == "gsure" else self.sure

    def to_dict(self) -> dict:
        out = self.hp.to_dict()
        out.update({
            "sure": self.sure,
            "gsure": self.gsure,
            "edf": self.edf,
            "rss": self.rss,
            "active_count": self.active_count,
        })
        return out


@dataclass(frozen=True)
class UniversalThreshold:
    """
    Universal thresholds for N null blocks of size Q.

    Attributes:
        Q: Block size
        N: Number of blocks
        d_N: Root of the Gamma-tail equation for the chi-square maximum
        c_N: Scale of the Gumbel pivot (always 2)
        lambda_finite: Finite-sample threshold sqrt(d_N + 2 ln ln N)
        lambda_asymptotic: sqrt(2 (ln N + Q/2 ln ln N - ln Gamma(Q/2)))
        root_residual: |residual| of the root equation at d_N
    """
    Q: int
    N: int
    d_N: float
    lambda_finite: float
    lambda_asymptotic: float
    c_N: float = 2.0
    root_residual: float = 0.0

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "Q": self.Q,
            "d_N": self.d_N,
            "c_N": self.c_N,
            "lambda_finite": self.lambda_finite,
            "lambda_asymptotic": self.lambda_asymptotic,
        }


@dataclass
class LevelReport:
    """
    Hyperparameters and scale estimates chosen for one wavelet detail level.

    ``channel`` is None for blockwise denoising (one selection across all
    channels) and the channel index for coordinatewise denoising.
    """
    level: int
    n_blocks: int
    rule: str
    hp: Hyperparameters
    scales: np.ndarray
    active_count: int
    channel: Optional[int] = None
    fallback: bool = False
    noiseless: bool = False

    def to_dict(self) -> dict:
        out = {
            "level": self.level,
            "channel": self.channel,
            "n_blocks": self.n_blocks,
            "rule": self.rule,
            "active_count": self.active_count,
            "fallback": self.fallback,
            "noiseless": self.noiseless,
            "scales": [float(v) for v in np.atleast_1d(self.scales)],
        }
        out.update(self.hp.to_dict())
        return out


RESULT_COLUMNS = ("experiment", "cell", "estimator", "rule", "metric",
                  "median", "se", "replicates", "mean")


@dataclass
class ResultRow:
    """
    Summary of one (cell, estimator, rule, metric) combination.

    ``values`` keeps the replicate-level raw values the statistics were
    computed from.
    """
    experiment: str
    cell: str
    estimator: str
    rule: str
    metric: str
    median: float
    se: float
    mean: float
    values: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    @property
    def replicates(self) -> int:
        return int(np.asarray(self.values).size)

    @property
    def key(self) -> Tuple[str, str, str, str]:
        return (self.cell, self.estimator, self.rule, self.metric)

    def as_record(self) -> Dict[str, Any]:
        return {
            "experiment": self.experiment,
            "cell": self.cell,
            "estimator": self.estimator,
            "rule": self.rule,
            "metric": self.metric,
            "median": self.median,
            "se": self.se,
            "replicates": self.replicates,
            "mean": self.mean,
        }


@dataclass
class ResultTable:
    """Rows of an experiment, emitted sorted by key"""
    experiment: str
    rows: List[ResultRow] = field(default_factory=list)

    def add(self, row: ResultRow):
        self.rows.append(row)

    def sorted_rows(self) -> List[ResultRow]:
        return sorted(self.rows, key=lambda r: r.key)

    def get(self, cell: str, estimator: str, rule: str, metric: str) -> Optional[ResultRow]:
        for row in self.rows:
            if row.key == (cell, estimator, rule, metric):
                return row
        return None

    def __len__(self):
        return len(self.rows)

    def __repr__(self):
        return f"ResultTable(experiment={self.experiment!r}, rows={len(self.rows)})"
