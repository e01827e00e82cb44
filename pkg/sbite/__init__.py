from sbite.models.params import Hyperparameters, smoothness_rule
from sbite.models.problem import BlockPartition, FixedPointSolution, ProblemInstance
from sbite.models.report import LevelReport, ResultTable, RiskReport, UniversalThreshold
from sbite.models.sequence import BlockSequence, MultichannelSeries, WaveletDecomposition
from sbite.errors import ConfigError, DomainError, NumericalError, SBITEError

# Thresholding and fixed-point solvers
from sbite.core.thresholding import (
    canonical_partial, canonical_threshold, robust_threshold, shrink_factor
)
from sbite.core.fixed_point import (
    block_mle_update, compute_pilot, fixed_point_residual, solve_group_sbite, solve_sbite
)

# Risk estimation and selection
from sbite.core.risk import (
    SearchGrid, beta_gradient, gsure, search_hyperparameters, sure, two_stage_search
)
from sbite.core.canonical import (
    denoise_canonical, oracle_bound, select_canonical, sl2wic, sure_canonical,
    sure_total_variation, universal_threshold
)

# Wavelets and experiments
from sbite.wavelet import BlockWaveletDenoiser, denoise_multichannel
from sbite.config import ExperimentConfig, load_config
from sbite.experiments import run_experiment

__version__ = "0.1.0"
__all__ = [
    # Models
    'Hyperparameters', 'smoothness_rule', 'BlockPartition', 'FixedPointSolution',
    'ProblemInstance', 'LevelReport', 'ResultTable', 'RiskReport', 'UniversalThreshold',
    'BlockSequence', 'MultichannelSeries', 'WaveletDecomposition',
    'SBITEError', 'DomainError', 'ConfigError', 'NumericalError',
    # Solvers
    'shrink_factor', 'canonical_threshold', 'canonical_partial', 'robust_threshold',
    'block_mle_update', 'compute_pilot', 'fixed_point_residual',
    'solve_sbite', 'solve_group_sbite',
    # Risk
    'SearchGrid', 'sure', 'gsure', 'beta_gradient', 'two_stage_search',
    'search_hyperparameters', 'fit',
    # Canonical model
    'denoise_canonical', 'sure_canonical', 'sure_total_variation', 'universal_threshold',
    'sl2wic', 'select_canonical', 'oracle_bound',
    # Wavelets and experiments
    'BlockWaveletDenoiser', 'denoise_multichannel',
    'ExperimentConfig', 'load_config', 'run_experiment',
]


def fit(X, y, blocks=None, criterion: str = "sure", grouped: bool = False, **grid_options):
    """
    Convenience function: select (lambda, nu, s) by SURE or GSURE and fit SBITE.

    Args:
        X: Design matrix, N x P
        y: Response, length N
        blocks: Block sizes (default: one block per column)
        criterion: 'sure' or 'gsure'
        grouped: Use the orthonormalized group update
        **grid_options: SearchGrid fields (nus, n_lambda, stage2_points, ...)

    Returns:
        (coefficients in the original basis, intercept, RiskReport)

    Example:
        >>> coef, intercept, report = fit(X, y, nus=(1, 2, 4))
        >>> report.hp, report.edf
    """
    from sbite.models.problem import as_partition

    instance = ProblemInstance.from_data(X, y, as_partition(blocks, len(X[0])))
    grid = SearchGrid(**grid_options) if grid_options else None
    _, report = search_hyperparameters(instance, criterion, grid, grouped=grouped)
    beta = report.solution.beta
    return instance.coefficients_in_original_basis(beta), instance.intercept(beta), report
