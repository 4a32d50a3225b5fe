"""Core GEE solver: Fisher scoring for the regression coefficients
alternating with moment updates of dispersion and correlation parameters,
plus the robust sandwich covariance and Wald inference.

The working-correlation state is seeded from the residuals of an
independence GLM fit, so the first scoring step already uses estimated
correlation parameters; each subsequent iteration takes one coefficient
step, then refreshes dispersion and correlation from the new residuals,
and stops once the coefficient step is below tolerance.
"""

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats

from . import kernels
from .correlation import WorkingCorrelation, make_correlation
from .design import CarrySet, DesignFrame, cluster_index, encode_design_matrix
from .errors import FitWarning, NumericalError, SpecificationError
from .family import (FamilySpec, get_family, pearson_residuals,
                     estimate_dispersion)

__all__ = ["FitControl", "GeeFit", "fit_gee", "score", "sandwich_covariance",
           "wald_table"]

_MAX_HALVINGS = 10


@dataclass(frozen=True)
class FitControl:
    """Outer-loop knobs: coefficient tolerance and iteration cap."""

    tol: float = 1e-6
    max_iter: int = 25

    def __post_init__(self):
        if self.tol <= 0:
            raise SpecificationError("tol must be positive")
        if self.max_iter < 1:
            raise SpecificationError("max_iter must be at least 1")


@dataclass
class GeeFit:
    """Converged-state summary of a GEE fit."""

    coef_names: list
    beta: np.ndarray
    robust_covariance: np.ndarray
    model_covariance: np.ndarray
    dispersion: float
    alpha: object
    correlation_structure: str
    working_correlation: np.ndarray
    fitted: np.ndarray
    linear_predictor: np.ndarray
    residuals: np.ndarray
    n_clusters: int
    max_cluster_size: int
    n_iterations: int
    converged: bool
    degenerate: bool = False
    # internals for criteria / refits / oracles
    X: np.ndarray = field(repr=False, default=None)
    y: np.ndarray = field(repr=False, default=None)
    starts: np.ndarray = field(repr=False, default=None)
    counts: np.ndarray = field(repr=False, default=None)
    family: FamilySpec = field(repr=False, default=None)
    weights: Optional[np.ndarray] = field(repr=False, default=None)
    score_at_solution: np.ndarray = field(repr=False, default=None)
    bread: np.ndarray = field(repr=False, default=None)
    meat: np.ndarray = field(repr=False, default=None)

    @property
    def robust_se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.robust_covariance))


def _variance(family, mu, weights):
    v = family.variance(mu)
    if weights is not None:
        v = v / weights
    return v


def _irls(X, y, family, weights=None, tol=1e-10, max_iter=50):
    """Independence GLM fit, used to initialize the GEE iteration.

    The working response is seeded from the family's mu initializer; the
    coefficient vector only anchors step halving, starting from zero.
    """
    mu = family.init_mu(y)
    if family.name == "binomial":
        mu = np.clip(mu, 1e-6, 1 - 1e-6)
    elif family.name in ("poisson", "gamma"):
        mu = np.maximum(mu, 1e-8)
    eta = family.link.g(mu)
    beta = np.zeros(X.shape[1])
    for it in range(max_iter):
        dmu = family.link.dmu_deta(eta)
        v = _variance(family, mu, weights)
        w = dmu * dmu / v
        z = eta + (y - mu) / dmu
        WX = X * w[:, None]
        try:
            beta_new = np.linalg.solve(X.T @ WX, WX.T @ z)
        except np.linalg.LinAlgError as err:
            raise NumericalError(f"singular weighted least squares system: {err}")
        step = beta_new - beta
        for _h in range(_MAX_HALVINGS + 1):
            cand = beta + step
            eta_c = X @ cand
            mu_c = family.link.inverse(eta_c)
            if np.all(np.isfinite(mu_c)) and family.valid_mu(mu_c):
                break
            step = 0.5 * step
        else:
            raise NumericalError(
                "IRLS step produced invalid fitted means after halving")
        delta = np.max(np.abs(cand - beta))
        beta, eta, mu = cand, eta_c, mu_c
        if it > 0 and delta < tol * (1.0 + np.max(np.abs(beta))):
            break
    return beta


def _rinv_inputs(corr: WorkingCorrelation, counts: np.ndarray):
    """Realize the working correlation and invert it per distinct size."""
    dim = int(counts.max())
    R = corr.matrix(dim)
    sizes = np.unique(counts)
    stack = np.zeros((sizes.size, dim, dim))
    for i, n in enumerate(sizes):
        n = int(n)
        try:
            stack[i, :n, :n] = np.linalg.inv(R[:n, :n])
        except np.linalg.LinAlgError as err:
            raise NumericalError(f"singular working correlation (size {n}): {err}")
    lookup = {int(n): i for i, n in enumerate(sizes)}
    idx = np.array([lookup[int(n)] for n in counts], dtype=np.int64)
    return R, stack, idx


def _cluster_stats_at(beta, X, y, family, weights, counts, starts, rinv_stack,
                      rinv_idx):
    eta = X @ beta
    mu = family.link.inverse(eta)
    dmu = family.link.dmu_deta(eta)
    v = _variance(family, mu, weights)
    inv_sd = 1.0 / np.sqrt(v)
    resid = y - mu
    return kernels.cluster_stats(resid, dmu, inv_sd, X, starts, counts,
                                 rinv_stack, rinv_idx)


def score(beta, X, y, starts, counts, family: FamilySpec,
          R: Optional[np.ndarray] = None, phi: float = 1.0,
          weights=None) -> np.ndarray:
    """GEE quasi-score U(beta) = sum_i D_i' V_i^-1 (y_i - mu_i) / phi.

    ``R`` is the working correlation at the maximum cluster size (leading
    submatrices serve smaller clusters); identity when omitted.
    """
    X = np.ascontiguousarray(X, float)
    y = np.asarray(y, float)
    starts = np.asarray(starts, np.int64)
    counts = np.asarray(counts, np.int64)
    dim = int(counts.max())
    corr = make_correlation("fixed", matrix=np.eye(dim) if R is None else R)
    _, stack, idx = _rinv_inputs(corr, counts)
    u, _, _ = _cluster_stats_at(beta, X, y, family, weights, counts, starts,
                                stack, idx)
    return u / phi


def _solve_gee(X, y, starts, counts, family, corr, control, weights=None):
    """Run the alternating GEE iteration; returns the populated GeeFit."""
    n_obs = len(y)
    beta = _irls(X, y, family, weights)
    eta = X @ beta
    mu = family.link.inverse(eta)
    degenerate_scale = 1e-12 * max(1.0, float(np.mean(y * y)))

    def residual_state(mu_now):
        raw = pearson_residuals(y, mu_now, family, weights)
        phi_now = estimate_dispersion(raw, n_obs)
        if phi_now <= degenerate_scale:
            return phi_now, np.zeros_like(raw), True
        return phi_now, raw / np.sqrt(phi_now), False

    update_corr = int(counts.max()) > 1   # size-1 clusters carry no pairs
    phi, e, degenerate = residual_state(mu)
    if degenerate:
        corr.reset()
    elif update_corr:
        corr.update(e, starts, counts)

    converged = degenerate
    n_iter = 0
    if not degenerate:
        for it in range(control.max_iter):
            n_iter = it + 1
            _, stack, idx = _rinv_inputs(corr, counts)
            score_num, bread, _ = _cluster_stats_at(
                beta, X, y, family, weights, counts, starts, stack, idx)
            try:
                delta = np.linalg.solve(bread, score_num)
            except np.linalg.LinAlgError as err:
                raise NumericalError(f"singular bread matrix: {err}")
            step = delta
            for _h in range(_MAX_HALVINGS + 1):
                cand = beta + step
                eta_c = X @ cand
                mu_c = family.link.inverse(eta_c)
                if np.all(np.isfinite(mu_c)) and family.valid_mu(mu_c):
                    break
                step = 0.5 * step
            else:
                raise NumericalError(
                    "scoring step produced invalid fitted means after halving")
            beta, eta, mu = cand, eta_c, mu_c
            phi, e, degenerate = residual_state(mu)
            if degenerate:
                corr.reset()
                converged = True
                break
            if update_corr:
                corr.update(e, starts, counts)
            if np.max(np.abs(step)) < control.tol:
                converged = True
                break
    if not converged:
        warnings.warn(
            f"GEE did not converge in {control.max_iter} iterations "
            f"(last max step above tol={control.tol})", FitWarning, stacklevel=3)
    if degenerate:
        warnings.warn("perfect fit: dispersion is zero, correlation "
                      "parameters reset", FitWarning, stacklevel=3)

    R, stack, idx = _rinv_inputs(corr, counts)
    score_fin, bread, meat = _cluster_stats_at(
        beta, X, y, family, weights, counts, starts, stack, idx)
    try:
        bread_inv = np.linalg.inv(bread)
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"singular bread matrix: {err}")
    robust = bread_inv @ meat @ bread_inv
    robust = 0.5 * (robust + robust.T)
    model_cov = phi * 0.5 * (bread_inv + bread_inv.T)

    return GeeFit(
        coef_names=None,
        beta=beta,
        robust_covariance=robust,
        model_covariance=model_cov,
        dispersion=phi,
        alpha=corr.alpha,
        correlation_structure=corr.structure,
        working_correlation=R,
        fitted=mu,
        linear_predictor=eta,
        residuals=e,
        n_clusters=int(counts.size),
        max_cluster_size=int(counts.max()),
        n_iterations=n_iter,
        converged=bool(converged),
        degenerate=bool(degenerate),
        X=X, y=y, starts=starts, counts=counts, family=family,
        weights=weights,
        score_at_solution=score_fin / max(phi, 1e-300),
        bread=bread, meat=meat,
    )


def fit_gee(data: Union[CarrySet, DesignFrame], *,
            family: Union[str, FamilySpec] = "gaussian",
            link: Optional[str] = None,
            correlation: Union[str, WorkingCorrelation] = "exchangeable",
            covariates: Sequence[str] = (),
            terms: Optional[Sequence[str]] = None,
            weights: Optional[str] = None,
            control: Optional[FitControl] = None) -> GeeFit:
    """Fit the crossover GEE model on a (carry-augmented) design frame.

    The default mean model is period + treatment + carry indicators +
    covariates; ``terms`` overrides the term list entirely.  Non-convergence
    sets the ``converged`` flag and warns instead of raising.
    """
    fam = family if isinstance(family, FamilySpec) else get_family(family, link)
    corr = make_correlation(correlation)
    control = control or FitControl()

    frame = data.frame if isinstance(data, CarrySet) else data
    X, names = encode_design_matrix(data, terms=terms, covariates=covariates)
    y = frame.response()
    w = None
    if weights is not None:
        w = frame.data[weights].to_numpy(float)
        if np.any(w <= 0):
            raise SpecificationError("weights must be positive")
    starts, counts = cluster_index(frame)

    fit = _solve_gee(X, y, starts, counts, fam, corr, control, weights=w)
    fit.coef_names = names
    return fit


def sandwich_covariance(fit: GeeFit) -> np.ndarray:
    """Recompute the robust covariance Omega^-1 M Omega^-1 from fit internals."""
    if fit.X is None:
        raise SpecificationError("fit does not carry its internals")
    corr = make_correlation("fixed", matrix=fit.working_correlation)
    _, stack, idx = _rinv_inputs(corr, fit.counts)
    _, bread, meat = _cluster_stats_at(
        fit.beta, fit.X, fit.y, fit.family, fit.weights, fit.counts,
        fit.starts, stack, idx)
    bread_inv = np.linalg.inv(bread)
    cov = bread_inv @ meat @ bread_inv
    return 0.5 * (cov + cov.T)


def wald_table(fit: GeeFit) -> list:
    """Per-coefficient (estimate, robust se, Wald, p) rows.

    Wald is the squared estimate-to-robust-se ratio referred to a one-degree
    chi-square; raises if any robust standard error is zero.
    """
    se = fit.robust_se
    if np.any(se == 0):
        raise NumericalError("zero robust standard error; Wald test undefined")
    rows = []
    for name, est, s in zip(fit.coef_names, fit.beta, se):
        w = (est / s) ** 2
        rows.append({
            "name": name,
            "estimate": float(est),
            "robust_se": float(s),
            "wald": float(w),
            "p": float(stats.chi2.sf(w, df=1)),
        })
    return rows
