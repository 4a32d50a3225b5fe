import numpy as np
import pandas as pd
import pytest

from crossfit import (FitControl, fit_gee, get_family, quasi_likelihood,
                      sandwich_covariance, score, wald_table)
from crossfit.design import DesignFrame, cluster_index
from crossfit.errors import FitWarning, NumericalError
from tests.conftest import make_gaussian_clusters


def irls_oracle(X, y, family, tol=1e-12, max_iter=100):
    """Textbook IRLS for an independence GLM, written independently of the
    solver's internals."""
    mu = {"gaussian": y.astype(float),
          "poisson": y + 0.5,
          "binomial": (y + 0.5) / 2.0,
          "gamma": np.maximum(y.astype(float), 1e-8)}[family.name]
    eta = family.link.g(mu)
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        dmu = family.link.dmu_deta(eta)
        w = dmu ** 2 / family.variance(mu)
        z = eta + (y - mu) / dmu
        beta_new = np.linalg.solve((X * w[:, None]).T @ X, (X * w[:, None]).T @ z)
        if np.max(np.abs(beta_new - beta)) < tol:
            beta = beta_new
            break
        beta = beta_new
        eta = X @ beta
        mu = family.link.inverse(eta)
    return beta


class TestOracles:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gaussian_independence_equals_ols(self, seed):
        frame, X = make_gaussian_clusters(25, 4, beta=[1.0, -2.0, 0.5],
                                          rho=0.4, seed=seed)
        fit = fit_gee(frame, correlation="independence",
                      covariates=["x1", "x2"])
        ols, *_ = np.linalg.lstsq(X, frame.response(), rcond=None)
        assert np.max(np.abs(fit.beta - ols)) < 1e-8 * max(1, np.abs(ols).max())

    def test_cluster_size_one_poisson_equals_irls(self):
        rng = np.random.default_rng(3)
        n = 120
        x = rng.normal(size=n)
        mu = np.exp(0.4 + 0.6 * x)
        y = rng.poisson(mu).astype(float)
        df = pd.DataFrame({"Unit": np.arange(1, n + 1), "Period": 1,
                           "Treatment": "A", "Response": y, "x1": x})
        frame = DesignFrame(data=df, unit_col="Unit", period_col="Period",
                            treatment_col="Treatment", response_col="Response")
        fit = fit_gee(frame, family="poisson", correlation="exchangeable",
                      covariates=["x1"])
        X = np.column_stack([np.ones(n), x])
        oracle = irls_oracle(X, y, get_family("poisson"))
        assert np.max(np.abs(fit.beta - oracle)) < 1e-8

    def test_cluster_size_one_gamma_equals_irls(self):
        rng = np.random.default_rng(15)
        n = 100
        x = rng.normal(size=n)
        mu = np.exp(0.8 + 0.3 * x)
        y = rng.gamma(shape=5.0, scale=mu / 5.0)
        df = pd.DataFrame({"Unit": np.arange(1, n + 1), "Period": 1,
                           "Treatment": "A", "Response": y, "x1": x})
        frame = DesignFrame(data=df, unit_col="Unit", period_col="Period",
                            treatment_col="Treatment", response_col="Response")
        fit = fit_gee(frame, family="gamma", correlation="independence",
                      covariates=["x1"])
        oracle = irls_oracle(np.column_stack([np.ones(n), x]), y,
                             get_family("gamma", "log"))
        assert fit.converged
        assert np.max(np.abs(fit.beta - oracle)) < 1e-8

    def test_score_closed_form_gaussian(self):
        frame, X = make_gaussian_clusters(10, 3, beta=[0.5, 1.0], seed=4)
        y = frame.response()
        starts, counts = cluster_index(frame)
        beta = np.array([0.2, -0.3])
        got = score(beta, X, y, starts, counts, get_family("gaussian"))
        assert np.allclose(got, X.T @ (y - X @ beta), atol=1e-10)

    @pytest.mark.parametrize("family,seed", [("gaussian", 5), ("poisson", 6)])
    def test_score_is_quasi_likelihood_gradient(self, family, seed):
        # independence, unit dispersion: U(beta) = dQL/dbeta
        rng = np.random.default_rng(seed)
        n = 60
        x = rng.normal(size=n)
        X = np.column_stack([np.ones(n), x])
        fam = get_family(family)
        truth = np.array([0.3, 0.4])
        mu = fam.link.inverse(X @ truth)
        y = (mu + rng.normal(size=n) if family == "gaussian"
             else rng.poisson(mu).astype(float))
        starts = np.arange(n, dtype=np.int64)
        counts = np.ones(n, dtype=np.int64)

        for trial in range(10):
            beta = truth + 0.2 * np.random.default_rng(100 + trial).normal(size=2)
            u = score(beta, X, y, starts, counts, fam)
            h = 1e-6
            fd = np.empty(2)
            for j in range(2):
                up, dn = beta.copy(), beta.copy()
                up[j] += h
                dn[j] -= h
                fd[j] = (quasi_likelihood(y, fam.link.inverse(X @ up), fam)
                         - quasi_likelihood(y, fam.link.inverse(X @ dn), fam)) / (2 * h)
            assert np.max(np.abs(u - fd)) < 1e-5 * max(1.0, np.max(np.abs(u)))

    def test_sandwich_matches_bruteforce_toy(self):
        frame, X = make_gaussian_clusters(3, 4, beta=[1.0, 0.5], rho=0.3,
                                          seed=7)
        fit = fit_gee(frame, correlation="exchangeable", covariates=["x1"])
        y = frame.response()
        R = fit.working_correlation
        phi = fit.dispersion
        bread = np.zeros((2, 2))
        meat = np.zeros((2, 2))
        for s in range(3):
            rows = slice(4 * s, 4 * (s + 1))
            D = X[rows]                      # identity link: D_i = X_i
            Vinv = np.linalg.inv(R)          # gaussian: V_i = phi R
            r = y[rows] - X[rows] @ fit.beta
            bread += D.T @ Vinv @ D
            g = D.T @ Vinv @ r
            meat += np.outer(g, g)
        expect = np.linalg.inv(bread) @ meat @ np.linalg.inv(bread)
        assert np.allclose(sandwich_covariance(fit), expect, atol=1e-10)
        assert np.allclose(fit.robust_covariance, expect, atol=1e-10)
        assert fit.model_covariance == pytest.approx(
            phi * np.linalg.inv(bread), abs=1e-10)

    def test_score_small_at_convergence(self, arterial_simple):
        fit = fit_gee(arterial_simple, correlation="exchangeable",
                      covariates=["Time"])
        scale = np.abs(np.diag(fit.bread)) / fit.dispersion
        assert np.max(np.abs(fit.score_at_solution) / np.maximum(scale, 1.0)) < 10 * 1e-6


class TestBehavior:
    def test_parameter_recovery_within_three_se(self):
        # simulated truth recovered inside 3 robust se in >= 95% of replicates
        truth = np.array([1.0, -0.5, 0.8, 0.0])
        hits = 0
        reps = 100
        for seed in range(reps):
            frame, _ = make_gaussian_clusters(
                200, 4, beta=truth, rho=0.5, phi=2.0, seed=1000 + seed)
            fit = fit_gee(frame, correlation="exchangeable",
                          covariates=["x1", "x2", "x3"])
            if np.all(np.abs(fit.beta - truth) < 3.0 * fit.robust_se):
                hits += 1
        assert hits >= 95

    def test_cluster_relabel_and_reorder_invariance(self):
        frame, _ = make_gaussian_clusters(12, 5, beta=[2.0, 1.0], rho=0.4,
                                          seed=8)
        fit = fit_gee(frame, correlation="exchangeable", covariates=["x1"])

        df = frame.data.copy()
        blocks = [df[df["Unit"] == u] for u in range(1, 13)]
        order = np.random.default_rng(9).permutation(12)
        relabeled = []
        for new_id, i in enumerate(order, start=1):
            b = blocks[i].copy()
            b["Unit"] = new_id
            relabeled.append(b)
        df2 = pd.concat(relabeled, ignore_index=True)
        frame2 = DesignFrame(data=df2, unit_col="Unit", period_col="Period",
                             treatment_col="Treatment", response_col="Response")
        fit2 = fit_gee(frame2, correlation="exchangeable", covariates=["x1"])
        assert np.allclose(fit.beta, fit2.beta, atol=1e-12)
        assert fit.alpha == pytest.approx(fit2.alpha, abs=1e-12)
        assert np.allclose(fit.robust_covariance, fit2.robust_covariance,
                           atol=1e-12)

    def test_robust_close_to_model_under_true_structure(self):
        frame, _ = make_gaussian_clusters(500, 4, beta=[1.0, 0.7], rho=0.5,
                                          phi=1.5, seed=10)
        fit = fit_gee(frame, correlation="exchangeable", covariates=["x1"])
        rel = (np.linalg.norm(fit.robust_covariance - fit.model_covariance)
               / np.linalg.norm(fit.model_covariance))
        assert rel < 0.15

    def test_nonconvergence_flagged_not_raised(self):
        frame, _ = make_gaussian_clusters(30, 4, beta=[1.0, -1.0], rho=0.6,
                                          seed=11)
        with pytest.warns(FitWarning, match="did not converge"):
            fit = fit_gee(frame, correlation="exchangeable",
                          covariates=["x1"],
                          control=FitControl(tol=1e-14, max_iter=1))
        assert not fit.converged
        assert fit.n_iterations == 1

    def test_perfect_fit_degenerates_cleanly(self):
        df = pd.DataFrame({
            "Unit": np.repeat(np.arange(1, 7), 2),
            "Period": 1, "Treatment": "A",
            "Response": np.tile([3.0, 3.0], 6),
        })
        frame = DesignFrame(data=df, unit_col="Unit", period_col="Period",
                            treatment_col="Treatment", response_col="Response")
        with pytest.warns(FitWarning, match="perfect fit"):
            fit = fit_gee(frame, correlation="exchangeable")
        assert fit.degenerate and fit.converged
        assert fit.dispersion == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(fit.meat, 0.0, atol=1e-12)
        assert np.allclose(fit.robust_covariance, 0.0, atol=1e-12)

    def test_wald_table_values(self):
        frame, _ = make_gaussian_clusters(40, 3, beta=[2.0, 0.0], rho=0.2,
                                          seed=12)
        fit = fit_gee(frame, correlation="exchangeable", covariates=["x1"])
        rows = wald_table(fit)
        for row, est, se in zip(rows, fit.beta, fit.robust_se):
            assert row["wald"] == pytest.approx((est / se) ** 2, rel=1e-12)
        # a coefficient forced to zero gives Wald 0, p 1
        fit.beta[1] = 0.0
        rows = wald_table(fit)
        assert rows[1]["wald"] == 0.0
        assert rows[1]["p"] == 1.0

    def test_wald_table_zero_se_rejected(self):
        frame, _ = make_gaussian_clusters(10, 2, beta=[1.0], seed=13)
        fit = fit_gee(frame, correlation="independence")
        fit.robust_covariance = np.zeros_like(fit.robust_covariance)
        with pytest.raises(NumericalError):
            wald_table(fit)

    def test_unbalanced_period_prefixes_fit(self):
        # units observed for one or two periods (prefix rule): the solver
        # must handle several distinct cluster sizes at once
        rng = np.random.default_rng(16)
        rows = []
        for unit in range(1, 16):
            n_periods = 2 if unit <= 10 else 1
            seq = ["A", "B"] if unit % 2 else ["B", "A"]
            for j in range(n_periods):
                for t in (0.0, 1.0, 2.0):
                    rows.append((unit, j + 1, seq[j], t,
                                 5.0 + (seq[j] == "B") + rng.normal()))
        df = pd.DataFrame(rows, columns=["Unit", "Period", "Treatment",
                                         "Time", "Response"])
        frame = DesignFrame(data=df, unit_col="Unit", period_col="Period",
                            treatment_col="Treatment", response_col="Response",
                            time_col="Time")
        from crossfit import create_carry, compute_criteria
        fit = fit_gee(create_carry(frame), correlation="exchangeable")
        assert fit.converged
        assert fit.max_cluster_size == 6
        assert sorted(np.unique(fit.counts)) == [3, 6]
        assert np.linalg.eigvalsh(fit.robust_covariance).min() > -1e-10
        c = compute_criteria(fit)
        assert c.qic == pytest.approx(-2 * c.quasi_lik + 2 * c.cic, abs=1e-9)

    def test_water_poisson_runs(self, water_simple):
        fit = fit_gee(water_simple, family="poisson", correlation="ar1",
                      covariates=["Age"])
        assert fit.converged
        assert fit.n_clusters == 79
        assert fit.max_cluster_size == 2
        assert fit.coef_names == ["(Intercept)", "Period2", "Treatment1",
                                  "Carry_1", "Age"]

    def test_binomial_proportions_with_weights_match_expanded(self):
        # grouped proportions with trial counts as weights give the same
        # coefficients as the row-per-trial representation
        rng = np.random.default_rng(14)
        groups = 40
        trials = rng.integers(2, 9, size=groups)
        x = rng.normal(size=groups)
        p = 1.0 / (1.0 + np.exp(-(0.3 + 0.8 * x)))
        successes = rng.binomial(trials, p)

        grouped = pd.DataFrame({
            "Unit": np.arange(1, groups + 1), "Period": 1, "Treatment": "A",
            "Response": successes / trials, "x1": x, "w": trials.astype(float),
        })
        gframe = DesignFrame(data=grouped, unit_col="Unit",
                             period_col="Period", treatment_col="Treatment",
                             response_col="Response")
        gfit = fit_gee(gframe, family="binomial", correlation="independence",
                       covariates=["x1"], weights="w")

        rows = []
        unit = 0
        for i in range(groups):
            for t in range(trials[i]):
                unit += 1
                rows.append((unit, 1, "A", 1.0 if t < successes[i] else 0.0,
                             x[i]))
        expanded = pd.DataFrame(rows, columns=["Unit", "Period", "Treatment",
                                               "Response", "x1"])
        eframe = DesignFrame(data=expanded, unit_col="Unit",
                             period_col="Period", treatment_col="Treatment",
                             response_col="Response")
        efit = fit_gee(eframe, family="binomial", correlation="independence",
                       covariates=["x1"])
        assert np.max(np.abs(gfit.beta - efit.beta)) < 1e-8

    def test_covariances_symmetric_psd(self, arterial_simple):
        fit = fit_gee(arterial_simple, correlation="exchangeable",
                      covariates=["Time"])
        for cov in (fit.robust_covariance, fit.model_covariance):
            assert np.allclose(cov, cov.T, atol=1e-12)
            assert np.linalg.eigvalsh(cov).min() > -1e-10

    def test_water_size_two_exchangeable_equals_ar1(self, water_simple):
        exch = fit_gee(water_simple, family="poisson",
                       correlation="exchangeable", covariates=["Age"])
        ar1 = fit_gee(water_simple, family="poisson", correlation="ar1",
                      covariates=["Age"])
        assert np.max(np.abs(exch.beta - ar1.beta)) < 1e-10
        assert exch.alpha == pytest.approx(ar1.alpha, abs=1e-12)
