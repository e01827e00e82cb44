"""
Tests for the Monte-Carlo experiment runners
"""

import dataclasses
import logging
import math

import numpy as np
import pytest
from scipy.stats import gumbel_r

from sbite import experiments
from sbite import rng as rng_streams
from sbite.config import build_config
from sbite.core.fixed_point import solve_sbite
from sbite.core.risk import SearchGrid
from sbite.errors import ConfigError
from sbite.experiments import (
    JS04_CELLS, ZOU_MODELS, js04_signal, median_summary, oracle_signal, run_experiment,
    toeplitz_covariance,
)
from sbite.formats import results_csv
from sbite.models.params import Hyperparameters
from sbite.models.problem import ProblemInstance
from tests.oracles import lasso_ista

FAST_GRID = {"nus": [1.0, 2.0], "n_lambda": 10, "stage2_points": 5}


class TestStreams:
    """Test deterministic random streams"""

    def test_reproducible(self):
        """Test identical keys give identical draws"""
        a = rng_streams.stream(1, "js04", "5:7", 3).standard_normal(5)
        b = rng_streams.stream(1, "js04", "5:7", 3).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_independent_keys(self):
        """Test every key component changes the stream"""
        base = rng_streams.stream(1, "js04", "5:7", 0).standard_normal(5)
        for other in (rng_streams.stream(2, "js04", "5:7", 0), rng_streams.stream(1, "js04-q3", "5:7", 0),
                      rng_streams.stream(1, "js04", "5:4", 0), rng_streams.stream(1, "js04", "5:7", 1)):
            assert not np.array_equal(base, other.standard_normal(5))

    def test_negative_replicate(self):
        """Test replicate index check"""
        with pytest.raises(ValueError):
            rng_streams.seed_sequence(1, "js04", "5:7", -1)


class TestMedianSummary:
    """Test median_summary"""

    def test_values(self):
        """Test median and mean"""
        median, se, mean = median_summary([1.0, 2.0, 3.0, 10.0], np.random.default_rng(0))
        assert median == 2.5
        assert mean == 4.0
        assert se > 0

    def test_degenerate(self):
        """Test empty and single-value inputs"""
        assert all(math.isnan(v) for v in median_summary([], np.random.default_rng(0)))
        assert median_summary([3.0], np.random.default_rng(0)) == (3.0, 0.0, 3.0)

    def test_deterministic(self):
        """Test the bootstrap only depends on its stream"""
        values = np.random.default_rng(1).standard_normal(30)
        first = median_summary(values, np.random.default_rng(5))
        second = median_summary(values, np.random.default_rng(5))
        assert first == second


class TestSignals:
    """Test experiment designs"""

    def test_toeplitz(self):
        """Test cor(i, j) = 0.5^|i - j|"""
        cov = toeplitz_covariance(4)
        assert cov[0, 3] == pytest.approx(0.125)
        np.testing.assert_allclose(cov, cov.T)

    def test_js04_signal(self):
        """Test the sparse means for Q = 1 and Q = 3"""
        alpha = js04_signal(10, 3, 7.0, 1)
        assert alpha.shape == (10, 1)
        assert np.count_nonzero(alpha) == 3
        np.testing.assert_array_equal(js04_signal(10, 2, 4.0, 3)[1], [1.0, 2.0, 4.0])
        with pytest.raises(ConfigError):
            js04_signal(10, 11, 7.0, 1)

    def test_oracle_signal(self):
        """Test N/20 blocks of threes and N/20 of ones"""
        alpha = oracle_signal(100, 2)
        assert np.sum(alpha[:, 0] == 3.0) == 5
        assert np.sum(alpha[:, 0] == 1.0) == 5

    def test_lasso_cross_consistency(self):
        """Test the s = nu = 1 solver against an independent lasso on a Model 1 design"""
        rng = np.random.default_rng(9)
        X = rng.standard_normal((60, 8)) @ np.linalg.cholesky(toeplitz_covariance(8)).T
        Y = X @ ZOU_MODELS["zou-model1"] + rng.standard_normal(60)
        inst = ProblemInstance.from_data(X, Y)
        for lam in (0.5, 2.0, 5.0):
            sol = solve_sbite(inst, Hyperparameters(lam=lam), tol=1e-12)
            np.testing.assert_allclose(sol.beta, lasso_ista(inst.X, inst.Y, lam), atol=1e-6)


class TestRunners:
    """Test small runs of every experiment"""

    def test_js04(self):
        """Test one small JS04 cell"""
        config = build_config(experiment="js04", seed=1, cells=["5:7:100"], replicates=3, threads=1, **FAST_GRID)
        table = run_experiment(config)
        assert len(table) == 3
        assert {(r.estimator, r.rule) for r in table.sorted_rows()} == {
            ("sbite", "sure"), ("sbite_s1", "sure"), ("sbite_s1", "sl2wic"),
        }
        row = table.get("5:7:100", "sbite", "sure", "loss")
        assert row.replicates == 3
        assert row.median >= 0

    def test_js04_q3_rule_filter(self):
        """Test a rule subset on Q = 3"""
        config = build_config(experiment="js04-q3", seed=2, cells=["5:3:64"], replicates=2, threads=1,
                              rules=["sl2wic"], **FAST_GRID)
        table = run_experiment(config)
        assert [(r.estimator, r.rule) for r in table.sorted_rows()] == [("sbite_s1", "sl2wic")]

    def test_thread_count_independent(self):
        """Test byte-identical results with one and four threads"""
        values = dict(experiment="js04", seed=3, cells=["5:5:128", "10:3:128"], replicates=4, **FAST_GRID)
        single = results_csv(run_experiment(build_config(threads=1, **values)))
        pooled = results_csv(run_experiment(build_config(threads=4, **values)))
        assert single == pooled

    def test_seed_changes_results(self):
        """Test different seeds give different tables"""
        values = dict(experiment="oracle-bound", cells=["100:2:1:1"], replicates=5, threads=1)
        first = results_csv(run_experiment(build_config(seed=1, **values)))
        second = results_csv(run_experiment(build_config(seed=2, **values)))
        assert first != second

    def test_zou(self):
        """Test one small Zou cell with both rules"""
        config = build_config(experiment="zou-model1", seed=4, cells=["20:1"], replicates=2, threads=1, **FAST_GRID)
        table = run_experiment(config)
        assert len(table) == 3 * 2 * 4
        row = table.get("20:1", "sbite", "sure", "C")
        assert 0 <= row.median <= 3
        assert table.get("20:1", "lasso", "cv", "RPE").median >= 0

    def test_zou_validation(self):
        """Test rule and cell checks"""
        with pytest.raises(ConfigError):
            run_experiment(build_config(experiment="zou-model1", seed=1, cells=["20:1"], rules=["aic"]))
        with pytest.raises(ConfigError):
            run_experiment(build_config(experiment="zou-model1", seed=1, cells=["3:1"]))
        with pytest.raises(ConfigError):
            run_experiment(build_config(experiment="zou-model2", seed=1, cells=["40:0"]))

    def test_cv_refit_non_convergence_logged(self, caplog, monkeypatch):
        """Test a CV refit that hits the iteration cap is reported"""
        solve = experiments.solve_sbite

        def capped_refit(instance, hp, **kwargs):
            solution = solve(instance, hp, **kwargs)
            return solution if kwargs else dataclasses.replace(solution, converged=False)

        monkeypatch.setattr(experiments, "solve_sbite", capped_refit)
        rng = np.random.default_rng(0)
        X = rng.standard_normal((30, 8))
        Y = X @ ZOU_MODELS["zou-model1"] + rng.standard_normal(30)
        instance = ProblemInstance.from_data(X, Y)
        grid = SearchGrid(nus=(1.0,), n_lambda=5)
        with caplog.at_level(logging.WARNING, logger="sbite.experiments"):
            coef = experiments._zou_fit(instance, X, Y, "lasso", "cv", grid, grid, np.random.default_rng(1))
        assert coef.shape == (8,)
        assert "did not converge" in caplog.text

    def test_malformed_cells(self):
        """Test cell parsing"""
        for cell in ("5", "a:b", "1:2:3:4"):
            with pytest.raises(ConfigError):
                run_experiment(build_config(experiment="js04", seed=1, cells=[cell], replicates=1))

    def test_null_coverage(self):
        """Test the empirical all-zero probability and its target"""
        config = build_config(experiment="null-coverage", seed=5, cells=["256:1"], replicates=50, threads=2)
        table = run_experiment(config)
        target = table.get("256:1", "sbite", "universal", "target")
        assert target.mean == pytest.approx(gumbel_r.cdf(math.log(math.log(256))))
        assert 0.0 <= table.get("256:1", "sbite", "universal", "all_zero").mean <= 1.0

    def test_oracle_bound(self):
        """Test the risk at the finite-sample threshold stays below the bound"""
        config = build_config(experiment="oracle-bound", seed=6, cells=["200:3:2:2"], replicates=20, threads=1)
        table = run_experiment(config)
        loss = table.get("200:3:2:2", "sbite", "universal", "loss")
        bound = table.get("200:3:2:2", "sbite", "universal", "bound")
        assert loss.mean <= bound.median

    def test_writes_output(self, tmp_path):
        """Test the results CSV is written when an output path is set"""
        target = tmp_path / "results.csv"
        config = build_config(experiment="null-coverage", seed=7, cells=["64:2"], replicates=5, threads=1,
                              output=str(target))
        table = run_experiment(config)
        assert target.read_text() == results_csv(table)

    def test_default_replicates(self):
        """Test the per-experiment replicate default"""
        table = run_experiment(build_config(experiment="null-coverage", seed=8, cells=["16:1"], threads=1))
        assert table.get("16:1", "sbite", "universal", "all_zero").replicates == 2000


@pytest.mark.slow
class TestReproduction:
    """Desk-scale reproduction bands"""

    def test_zou_model1(self):
        """Test Model 1, N = 60, sigma = 1 medians fall in the acceptance intervals"""
        table = run_experiment(build_config(experiment="zou-model1", seed=2024, cells=["60:1"], replicates=100))
        assert 0.05 <= table.get("60:1", "lasso", "cv", "RPE").median <= 0.15
        assert 0.04 <= table.get("60:1", "sbite", "sure", "RPE|X").median <= 0.11
        assert table.get("60:1", "sbite", "sure", "C").median == 3
        assert table.get("60:1", "sbite", "sure", "I").median == 0

    def test_js04_moderate_sparsity(self):
        """Test Q = 1, 50 nonzero, mu = 5 loss against the published value (+-30%)"""
        table = run_experiment(build_config(experiment="js04", seed=2024, cells=["50:5"], replicates=20,
                                            rules=["sure"]))
        assert table.get("50:5", "sbite", "sure", "loss").median == pytest.approx(109.0, rel=0.3)

    def test_null_coverage_4096(self):
        """Test P(all-zero) at N = 4096, Q = 1 reaches 0.85"""
        table = run_experiment(build_config(experiment="null-coverage", seed=2024, cells=["4096:1"]))
        assert table.get("4096:1", "sbite", "universal", "all_zero").mean >= 0.85


@pytest.mark.slow
class TestSparseSequenceReproduction:
    """Full JS04 grid, Q = 1 and Q = 3"""

    @classmethod
    def setup_class(cls):
        cls.q1 = run_experiment(build_config(experiment="js04", seed=2024, replicates=20))
        cls.q3 = run_experiment(build_config(experiment="js04-q3", seed=2024, replicates=20, rules=["sure"]))

    def test_smooth_at_or_below_soft(self):
        """Test s = 2 ln nu + 1 loses no more than s = 1 in at least 8 of the 12 Q = 1 cells"""
        wins = sum(
            self.q1.get(cell, "sbite", "sure", "loss").mean <= self.q1.get(cell, "sbite_s1", "sure", "loss").mean
            for cell in JS04_CELLS
        )
        assert wins >= 8

    def test_multichannel_loss_below_single(self):
        """Test the per-channel Q = 3 loss sits below the Q = 1 loss"""
        below = [
            self.q3.get(cell, "sbite", "sure", "loss").mean < self.q1.get(cell, "sbite", "sure", "loss").mean
            for cell in JS04_CELLS
        ]
        # 500:7 is a near tie between Q = 3 and Q = 1
        assert sum(below) >= len(JS04_CELLS) - 1
        assert all(below[:8])

    def test_sl2wic_sparse_strong(self):
        """Test the SL2WIC loss with 5 nonzero blocks at mu = 7 is about 6"""
        assert self.q1.get("5:7", "sbite_s1", "sl2wic", "loss").mean == pytest.approx(6.0, rel=0.3)
