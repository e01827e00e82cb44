"""
Monte-Carlo experiments.

Each experiment runs a set of cells; each cell runs ``replicates`` independent
replicates on their own random streams (see :mod:`sbite.rng`) and summarizes
every (estimator, rule, metric) by median, bootstrap standard error of the
median and mean. Replicates run concurrently; results do not depend on the
thread count.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.stats import gumbel_r

from sbite import rng as rng_streams
from sbite.config import ExperimentConfig, get_thread_count
from sbite.core.canonical import (
    denoise_canonical, oracle_bound, select_canonical, universal_threshold,
)
from sbite.core.fixed_point import solve_sbite
from sbite.core.risk import (
    DEFAULT_NUS, SearchGrid, lambda_max, search_hyperparameters,
    stage_one_search, two_stage_search,
)
from sbite.errors import ConfigError
from sbite.formats import write_results_csv
from sbite.models.params import Hyperparameters
from sbite.models.problem import ProblemInstance
from sbite.models.report import ResultRow, ResultTable
from sbite.models.sequence import BlockSequence

logger = logging.getLogger(__name__)

BOOTSTRAP_RESAMPLES = 500
JS04_LENGTH = 1000

DEFAULT_REPLICATES = {
    "zou-model1": 100,
    "zou-model2": 100,
    "js04": 20,
    "js04-q3": 20,
    "null-coverage": 2000,
    "oracle-bound": 1000,
}

ZOU_MODELS = {
    "zou-model1": np.array([3.0, 1.5, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0]),
    "zou-model2": np.full(8, 0.85),
}
ZOU_CELLS = {
    "zou-model1": ["20:1", "60:1", "20:3", "60:3", "20:6", "60:6"],
    "zou-model2": ["40:1", "80:1", "40:3", "80:3", "40:6", "80:6"],
}
ZOU_ESTIMATORS = ("lasso", "adaptive_lasso", "sbite")
ZOU_RULES = ("cv", "sure")
ZOU_CORRELATION = 0.5

JS04_CELLS = [f"{k}:{mu}" for k in (5, 50, 500) for mu in (3, 4, 5, 7)]
# (estimator, rule): sbite selects s > 1 by the two-stage SURE search
JS04_ESTIMATORS = (("sbite", "sure"), ("sbite_s1", "sure"), ("sbite_s1", "sl2wic"))

NULL_CELLS = ["4096:1", "4096:3"]
ORACLE_CELLS = [f"500:{Q}:{nu}:{s}" for Q in (2, 3) for nu in (1, 2) for s in (1, 2)]


def median_summary(values, rng: np.random.Generator,
                   resamples: int = BOOTSTRAP_RESAMPLES) -> Tuple[float, float, float]:
    """(median, bootstrap standard error of the median, mean)"""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return float("nan"), float("nan"), float("nan")
    median = float(np.median(values))
    if values.size == 1:
        return median, 0.0, float(values[0])
    draws = rng.integers(0, values.size, size=(resamples, values.size))
    se = float(np.std(np.median(values[draws], axis=1), ddof=1))
    return median, se, float(np.mean(values))


@dataclass
class ExperimentRunner:
    """Shared plumbing: streams, thread pool and row construction"""
    config: ExperimentConfig

    @property
    def replicates(self) -> int:
        return self.config.replicates or DEFAULT_REPLICATES[self.config.experiment]

    @property
    def threads(self) -> int:
        return self.config.threads or get_thread_count()

    def stream(self, cell: str, replicate: int) -> np.random.Generator:
        return rng_streams.stream(self.config.seed, self.config.experiment, cell, replicate)

    def grid(self, nus: Optional[Sequence[float]] = None) -> SearchGrid:
        return SearchGrid(
            nus=nus if nus is not None else (self.config.nus or DEFAULT_NUS),
            n_lambda=self.config.n_lambda,
            stage2_points=self.config.stage2_points,
        )

    def wants(self, rule: str) -> bool:
        return self.config.rules is None or rule in self.config.rules

    def replicate_map(self, cell: str, task: Callable[[np.random.Generator], Dict]) -> List[Dict]:
        """Run task once per replicate on that replicate's stream, results in replicate order"""
        def run(replicate: int):
            return task(self.stream(cell, replicate))

        indices = range(self.replicates)
        if self.threads <= 1:
            return [run(i) for i in indices]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(run, indices))

    def add_rows(self, table: ResultTable, cell: str, outcomes: List[Dict]):
        """Turn per-replicate {(estimator, rule, metric): value} dicts into summary rows"""
        keys = sorted({key for outcome in outcomes for key in outcome})
        for estimator, rule, metric in keys:
            values = np.array([o[(estimator, rule, metric)] for o in outcomes
                               if (estimator, rule, metric) in o], dtype=float)
            boot = rng_streams.stream(self.config.seed, self.config.experiment,
                                      f"{cell}|{estimator}|{rule}|{metric}|bootstrap")
            median, se, mean = median_summary(values, boot)
            table.add(ResultRow(
                experiment=self.config.experiment, cell=cell, estimator=estimator,
                rule=rule, metric=metric, median=median, se=se, mean=mean, values=values,
            ))


def _parse_cell(cell: str, types: Sequence[type], optional: int = 0) -> tuple:
    parts = cell.split(":")
    if not len(types) - optional <= len(parts) <= len(types):
        raise ConfigError(f"malformed cell '{cell}'")
    try:
        return tuple(t(p) for t, p in zip(types, parts))
    except ValueError:
        raise ConfigError(f"malformed cell '{cell}'")


# -- Zou's regression models ------------------------------------------------

def toeplitz_covariance(P: int, rho: float = ZOU_CORRELATION) -> np.ndarray:
    """cor(i, j) = rho^|i - j|"""
    return linalg.toeplitz(rho ** np.arange(P))


def cv_path(X: np.ndarray, Y: np.ndarray, rng: np.random.Generator, tol: float = 1e-8,
            max_iter: int = 10_000):
    """
    Two-fold cross-validation path evaluator.

    Folds are perm[0::2] and perm[1::2] of a seeded permutation; the criterion
    is the summed held-out squared prediction error.
    """
    perm = rng.permutation(X.shape[0])
    folds = [(np.sort(perm[1::2]), np.sort(perm[0::2])), (np.sort(perm[0::2]), np.sort(perm[1::2]))]
    fold_instances = [(ProblemInstance.from_data(X[train], Y[train]), test) for train, test in folds]

    def evaluate(nu: float, s: Optional[float], lambdas: np.ndarray):
        errors = np.zeros(len(lambdas))
        ok = np.ones(len(lambdas), dtype=bool)
        for instance, test in fold_instances:
            init = None
            for i in np.argsort(lambdas, kind="stable")[::-1]:
                hp = Hyperparameters(lam=float(lambdas[i]), nu=nu, s=s)
                sol = solve_sbite(instance, hp, init=init, tol=tol, max_iter=max_iter)
                if not sol.converged:
                    logger.warning("skipping %s in cross-validation: fit did not converge", hp)
                    ok[i] = False
                    continue
                init = sol.beta
                coef = instance.coefficients_in_original_basis(sol.beta)
                pred = instance.intercept(sol.beta) + X[test] @ coef
                errors[i] += float(np.sum((Y[test] - pred) ** 2))
        return [(float(e), None) if good else None for e, good in zip(errors, ok)]

    return evaluate


def _zou_fit(instance: ProblemInstance, X, Yu, estimator: str, rule: str, grid: SearchGrid,
             lasso_grid: SearchGrid, rng: np.random.Generator) -> np.ndarray:
    """Fitted coefficients (original basis, unit-noise response) of one estimator/rule"""
    smooth = estimator == "sbite"
    est_grid = lasso_grid if estimator == "lasso" else grid
    if rule == "sure":
        _, report = search_hyperparameters(instance, "sure", est_grid, smooth=smooth, max_workers=1)
        beta = report.solution.beta
    else:
        search = two_stage_search if smooth else stage_one_search
        result = search(cv_path(X, Yu, rng), lambda nu: lambda_max(instance, nu), est_grid, max_workers=1)
        solution = solve_sbite(instance, result.hp)
        if not solution.converged:
            logger.warning("%s refit at %s did not converge (residual %.3g after %d iterations)",
                           estimator, result.hp, solution.final_residual, solution.iterations)
        beta = solution.beta
    return instance.coefficients_in_original_basis(beta)


def zou_replicate(alpha: np.ndarray, N: int, sigma: float, rng: np.random.Generator,
                  grid: SearchGrid, lasso_grid: SearchGrid,
                  estimators: Sequence[str] = ZOU_ESTIMATORS,
                  rules: Sequence[str] = ZOU_RULES) -> Dict:
    """
    One training set: RPE, RPE|X and the C/I counts per estimator and rule.

    RPE = (a - alpha)' Sigma (a - alpha) / sigma^2 is exact given the training
    set; RPE|X averages (x_n'(a - alpha))^2 / sigma^2 over the training rows.
    """
    P = alpha.size
    cov = toeplitz_covariance(P)
    X = rng.standard_normal((N, P)) @ np.linalg.cholesky(cov).T
    Y = X @ alpha + sigma * rng.standard_normal(N)
    Yu = Y / sigma
    instance = ProblemInstance.from_data(X, Yu)
    cv_seed = int(rng.integers(0, 2 ** 63))

    outcome = {}
    for estimator in estimators:
        for rule in rules:
            cv_rng = np.random.Generator(np.random.Philox(cv_seed))
            coef = sigma * _zou_fit(instance, X, Yu, estimator, rule, grid, lasso_grid, cv_rng)
            diff = coef - alpha
            outcome[(estimator, rule, "RPE")] = float(diff @ cov @ diff) / sigma ** 2
            outcome[(estimator, rule, "RPE|X")] = float(np.mean((X @ diff) ** 2)) / sigma ** 2
            selected = coef != 0
            outcome[(estimator, rule, "C")] = int(np.sum(selected & (alpha != 0)))
            outcome[(estimator, rule, "I")] = int(np.sum(selected & (alpha == 0)))
    return outcome


def run_zou(config: ExperimentConfig) -> ResultTable:
    """Zou's Model 1 / Model 2 simulation; cells 'N:sigma'"""
    runner = ExperimentRunner(config)
    alpha = ZOU_MODELS[config.experiment]
    grid = runner.grid()
    lasso_grid = runner.grid(nus=(1.0,))
    rules = [r for r in ZOU_RULES if runner.wants(r)]
    if not rules:
        raise ConfigError(f"no Zou rule selected; choose from {ZOU_RULES}")

    table = ResultTable(config.experiment)
    for cell in config.cells or ZOU_CELLS[config.experiment]:
        N, sigma = _parse_cell(cell, (int, float))
        if N < 4 or sigma <= 0:
            raise ConfigError(f"cell '{cell}' needs N >= 4 and sigma > 0")
        logger.info("%s cell %s: %d replicates", config.experiment, cell, runner.replicates)
        outcomes = runner.replicate_map(
            cell, lambda rng: zou_replicate(alpha, N, sigma, rng, grid, lasso_grid, rules=rules)
        )
        runner.add_rows(table, cell, outcomes)
    return table


# -- Sparse sequence (JS04) -------------------------------------------------

def js04_signal(N: int, nonzero: int, mu: float, Q: int) -> np.ndarray:
    """N x Q mean: the first ``nonzero`` blocks are mu (Q = 1) or (1, 2, mu) (Q = 3)"""
    if not 0 <= nonzero <= N:
        raise ConfigError(f"nonzero count {nonzero} outside [0, {N}]")
    alpha = np.zeros((N, Q))
    if Q == 1:
        alpha[:nonzero, 0] = mu
    else:
        alpha[:nonzero] = (1.0, 2.0, mu)
    return alpha


def js04_replicate(alpha: np.ndarray, rng: np.random.Generator, grid: SearchGrid,
                   estimators: Sequence[Tuple[str, str]] = JS04_ESTIMATORS) -> Dict:
    """Total squared loss divided by Q for each (estimator, rule)"""
    Q = alpha.shape[1]
    data = BlockSequence(alpha + rng.standard_normal(alpha.shape))
    outcome = {}
    for estimator, rule in estimators:
        canonical_rule = "sure_s1" if (estimator, rule) == ("sbite_s1", "sure") else rule
        hp = select_canonical(data, canonical_rule, grid, max_workers=1)
        estimate = denoise_canonical(data, hp).blocks
        outcome[(estimator, rule, "loss")] = float(np.sum((estimate - alpha) ** 2)) / Q
    return outcome


def run_js04(config: ExperimentConfig) -> ResultTable:
    """Sparse sequence simulation; cells 'nonzero:mu' or 'nonzero:mu:N' (default N = 1000)"""
    runner = ExperimentRunner(config)
    Q = 3 if config.experiment == "js04-q3" else 1
    grid = runner.grid()
    estimators = [(e, r) for e, r in JS04_ESTIMATORS if runner.wants(r)]
    if not estimators:
        raise ConfigError("no JS04 rule selected; choose from ('sure', 'sl2wic')")

    table = ResultTable(config.experiment)
    for cell in config.cells or JS04_CELLS:
        nonzero, mu, N = (_parse_cell(cell, (int, float, int), optional=1) + (JS04_LENGTH,))[:3]
        alpha = js04_signal(N, nonzero, mu, Q)
        logger.info("%s cell %s: %d replicates", config.experiment, cell, runner.replicates)
        outcomes = runner.replicate_map(cell, lambda rng: js04_replicate(alpha, rng, grid, estimators))
        runner.add_rows(table, cell, outcomes)
    return table


# -- Universal threshold and oracle inequality ------------------------------

def run_null_coverage(config: ExperimentConfig) -> ResultTable:
    """
    Probability that the finite-sample universal threshold zeroes every null block.

    Cells 'N:Q'. The 'all_zero' mean is the empirical probability; the
    'target' metric repeats G0(ln ln N).
    """
    runner = ExperimentRunner(config)
    table = ResultTable(config.experiment)
    for cell in config.cells or NULL_CELLS:
        N, Q = _parse_cell(cell, (int, int))
        threshold = universal_threshold(N, Q).lambda_finite
        target = float(gumbel_r.cdf(math.log(math.log(N))))

        def task(rng, N=N, Q=Q, threshold=threshold, target=target):
            norms = np.linalg.norm(rng.standard_normal((N, Q)), axis=1)
            return {
                ("sbite", "universal", "all_zero"): float(np.all(norms <= threshold)),
                ("sbite", "universal", "target"): target,
            }

        runner.add_rows(table, cell, runner.replicate_map(cell, task))
    return table


def oracle_signal(N: int, Q: int) -> np.ndarray:
    """Sparse mean: N/20 blocks of 3s, N/20 blocks of 1s, zeros elsewhere"""
    alpha = np.zeros((N, Q))
    k = max(N // 20, 1)
    alpha[:k] = 3.0
    alpha[k:2 * k] = 1.0
    return alpha


def run_oracle_bound(config: ExperimentConfig) -> ResultTable:
    """Risk at the finite-sample universal threshold against the oracle bound; cells 'N:Q:nu:s'"""
    runner = ExperimentRunner(config)
    table = ResultTable(config.experiment)
    for cell in config.cells or ORACLE_CELLS:
        N, Q, nu, s = _parse_cell(cell, (int, int, float, float))
        alpha = oracle_signal(N, Q)
        hp = Hyperparameters(lam=universal_threshold(N, Q).lambda_finite, nu=nu, s=s)
        bound = oracle_bound(N, Q, nu, s, BlockSequence(alpha))

        def task(rng, alpha=alpha, hp=hp, bound=bound):
            data = BlockSequence(alpha + rng.standard_normal(alpha.shape))
            loss = float(np.sum((denoise_canonical(data, hp).blocks - alpha) ** 2))
            return {("sbite", "universal", "loss"): loss, ("sbite", "universal", "bound"): bound}

        runner.add_rows(table, cell, runner.replicate_map(cell, task))
    return table


RUNNERS = {
    "zou-model1": run_zou,
    "zou-model2": run_zou,
    "js04": run_js04,
    "js04-q3": run_js04,
    "null-coverage": run_null_coverage,
    "oracle-bound": run_oracle_bound,
}


def run_experiment(config: ExperimentConfig) -> ResultTable:
    """Run the configured experiment and write the results CSV when an output path is set"""
    table = RUNNERS[config.experiment](config)
    if config.output:
        write_results_csv(config.output, table)
        logger.info("wrote %d rows to %s", len(table), config.output)
    return table
