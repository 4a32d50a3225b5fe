"""Quasi-likelihood model-selection criteria (QIC family) for GEE fits.

CIC is the trace of the inverse independence-model covariance times the
robust covariance, with the independence covariance evaluated at the final
coefficients (no refit).  QICC applies the small-sample AIC-style correction
2 p (p + 1) / (N - p - 1) on top of QIC.
"""

from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np

from .correlation import Independence
from .errors import NumericalError, SpecificationError
from .family import quasi_likelihood
from .gee import GeeFit, _cluster_stats_at, _rinv_inputs

__all__ = ["CriteriaRecord", "compute_criteria", "compare", "independence_bread"]


@dataclass(frozen=True)
class CriteriaRecord:
    qic: float
    qicu: float
    quasi_lik: float
    cic: float
    params: int
    qicc: float

    def as_dict(self) -> dict:
        return asdict(self)


def independence_bread(fit: GeeFit) -> np.ndarray:
    """Sum of D_i' D(1/V) D_i at the fitted coefficients (R = I, phi = 1)."""
    _, stack, idx = _rinv_inputs(Independence(), fit.counts)
    _, bread, _ = _cluster_stats_at(
        fit.beta, fit.X, fit.y, fit.family, fit.weights, fit.counts,
        fit.starts, stack, idx)
    return bread


def compute_criteria(fit: GeeFit, independence_bread_matrix: Optional[np.ndarray] = None,
                     params: Optional[int] = None) -> CriteriaRecord:
    """All selection criteria for one fit.

    ``params`` defaults to the full coefficient count; semiparametric fits
    pass their parametric count instead.  ``independence_bread_matrix`` may
    inject a precomputed bread for testing.
    """
    if not fit.converged:
        raise NumericalError("criteria require a converged fit")
    if fit.dispersion <= 0:
        raise NumericalError("criteria undefined for a zero-dispersion fit")

    breadI = (independence_bread(fit) if independence_bread_matrix is None
              else np.asarray(independence_bread_matrix, float))
    # Omega_I = phi * breadI^-1 is the independence model covariance, so
    # trace(Omega_I^-1 V_robust) = trace(breadI @ V_robust) / phi.
    try:
        np.linalg.cholesky(breadI + breadI.T)
    except np.linalg.LinAlgError:
        raise NumericalError("singular independence bread matrix")
    cic = float(np.trace(breadI @ fit.robust_covariance) / fit.dispersion)

    ql = quasi_likelihood(fit.y, fit.fitted, fit.family, weights=fit.weights)
    p = int(len(fit.beta) if params is None else params)
    n_obs = int(len(fit.y))
    qic = -2.0 * ql + 2.0 * cic
    qicu = -2.0 * ql + 2.0 * p
    denom = n_obs - p - 1
    qicc = qic + (2.0 * p * (p + 1) / denom if denom > 0 else np.inf)
    return CriteriaRecord(qic=qic, qicu=qicu, quasi_lik=ql, cic=cic,
                          params=p, qicc=qicc)


def compare(records: Sequence, labels: Optional[Sequence[str]] = None,
            criterion: str = "qic") -> list:
    """Rank models ascending by a criterion; ties break on fewer params,
    then label order.  Accepts CriteriaRecord objects or plain dicts."""
    crit = criterion.strip().lower()
    if crit not in ("qic", "qicu", "cic", "qicc"):
        raise SpecificationError(
            f"unknown comparison criterion {criterion!r}")
    if len(records) < 1:
        raise SpecificationError("compare needs at least one record")
    if labels is None:
        labels = [f"model{i + 1}" for i in range(len(records))]
    if len(labels) != len(records):
        raise SpecificationError("labels and records length mismatch")

    def as_record(r):
        return r if isinstance(r, CriteriaRecord) else CriteriaRecord(**{
            k: r[k] for k in
            ("qic", "qicu", "quasi_lik", "cic", "params", "qicc")})

    rows = [(label, as_record(r)) for label, r in zip(labels, records)]
    rows.sort(key=lambda lr: (getattr(lr[1], crit), lr[1].params, lr[0]))
    return rows
