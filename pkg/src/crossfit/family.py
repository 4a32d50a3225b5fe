"""Exponential-family kernels: links, variance functions, quasi-likelihood,
Pearson residuals and dispersion.

Conventions used throughout the package:

* the dispersion estimate divides by the total number of observations N,
  not N - p;
* standardized residuals divide the raw Pearson residual by sqrt(dispersion),
  so that their mean square is exactly 1.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DataValidationError

__all__ = [
    "Link",
    "FamilySpec",
    "ResidualSet",
    "get_family",
    "quasi_likelihood",
    "pearson_residuals",
    "estimate_dispersion",
    "standardize",
    "LINKS",
    "FAMILIES",
]


@dataclass(frozen=True)
class Link:
    """Link function g with inverse and d mu / d eta."""

    name: str
    g: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]
    dmu_deta: Callable[[np.ndarray], np.ndarray]


def _logit(mu):
    return np.log(mu / (1.0 - mu))


def _expit(eta):
    out = np.empty_like(eta, dtype=float)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ex = np.exp(eta[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _dexpit(eta):
    p = _expit(eta)
    return p * (1.0 - p)


LINKS = {
    "identity": Link("identity", lambda mu: np.asarray(mu, float),
                     lambda eta: np.asarray(eta, float),
                     lambda eta: np.ones_like(np.asarray(eta, float))),
    "log": Link("log", np.log, np.exp, np.exp),
    "logit": Link("logit", _logit, _expit, _dexpit),
    "inverse": Link("inverse", lambda mu: 1.0 / mu, lambda eta: 1.0 / eta,
                    lambda eta: -1.0 / eta ** 2),
}


@dataclass(frozen=True)
class FamilySpec:
    """One exponential-family member: link, variance and QL kernel."""

    name: str
    link: Link
    variance: Callable[[np.ndarray], np.ndarray]
    ql_kernel: Callable[[np.ndarray, np.ndarray], np.ndarray]
    valid_mu: Callable[[np.ndarray], bool]
    init_mu: Callable[[np.ndarray], np.ndarray]
    canonical_link: str = field(default="identity", repr=False)

    def check_mu(self, mu) -> None:
        if not self.valid_mu(np.asarray(mu, float)):
            raise DataValidationError(
                f"fitted means outside the valid range for family {self.name!r}")


def _gaussian_ql(y, mu):
    return -0.5 * (y - mu) ** 2


def _poisson_ql(y, mu):
    return y * np.log(mu) - mu


def _binomial_ql(y, mu):
    return y * np.log(mu / (1.0 - mu)) + np.log(1.0 - mu)


def _gamma_ql(y, mu):
    return -(y / mu + np.log(mu))


_FAMILY_DEFS = {
    "gaussian": dict(
        variance=lambda mu: np.ones_like(np.asarray(mu, float)),
        ql_kernel=_gaussian_ql,
        valid_mu=lambda mu: bool(np.all(np.isfinite(mu))),
        init_mu=lambda y: np.asarray(y, float),
        canonical_link="identity",
    ),
    "poisson": dict(
        variance=lambda mu: np.asarray(mu, float),
        ql_kernel=_poisson_ql,
        valid_mu=lambda mu: bool(np.all(np.isfinite(mu)) and np.all(mu > 0)),
        init_mu=lambda y: np.asarray(y, float) + 0.5,
        canonical_link="log",
    ),
    "binomial": dict(
        variance=lambda mu: mu * (1.0 - mu),
        ql_kernel=_binomial_ql,
        valid_mu=lambda mu: bool(np.all(np.isfinite(mu))
                                 and np.all(mu > 0) and np.all(mu < 1)),
        init_mu=lambda y: (np.asarray(y, float) + 0.5) / 2.0,
        canonical_link="logit",
    ),
    "gamma": dict(
        variance=lambda mu: np.asarray(mu, float) ** 2,
        ql_kernel=_gamma_ql,
        valid_mu=lambda mu: bool(np.all(np.isfinite(mu)) and np.all(mu > 0)),
        init_mu=lambda y: np.maximum(np.asarray(y, float), 1e-8),
        # log by default: safer than the canonical inverse link and the
        # conventional choice in GEE software
        canonical_link="log",
    ),
}

FAMILIES = tuple(_FAMILY_DEFS)


def get_family(name: str, link: Optional[str] = None) -> FamilySpec:
    """Build a FamilySpec by name with its default or an explicit link."""
    key = name.strip().lower()
    if key not in _FAMILY_DEFS:
        raise DataValidationError(
            f"unknown family {name!r}; choose from {sorted(_FAMILY_DEFS)}")
    spec = _FAMILY_DEFS[key]
    link_name = (link or spec["canonical_link"]).strip().lower()
    if link_name not in LINKS:
        raise DataValidationError(
            f"unknown link {link!r}; choose from {sorted(LINKS)}")
    return FamilySpec(name=key, link=LINKS[link_name], **spec)


def quasi_likelihood(y, mu, family: FamilySpec, weights=None) -> float:
    """Quasi-likelihood QL(mu; I) of the data under the family."""
    y = np.asarray(y, float)
    mu = np.asarray(mu, float)
    family.check_mu(mu)
    terms = family.ql_kernel(y, mu)
    if weights is not None:
        terms = terms * np.asarray(weights, float)
    return float(np.sum(terms))


def pearson_residuals(y, mu, family: FamilySpec, weights=None) -> np.ndarray:
    """Raw Pearson residuals (y - mu) / sqrt(V(mu) / w)."""
    y = np.asarray(y, float)
    mu = np.asarray(mu, float)
    family.check_mu(mu)
    v = family.variance(mu)
    if np.any(v <= 0):
        raise DataValidationError("variance function is zero at an observation")
    if weights is not None:
        v = v / np.asarray(weights, float)
    return (y - mu) / np.sqrt(v)


def estimate_dispersion(raw_residuals, n_obs: int) -> float:
    """Moment dispersion estimate: mean squared raw Pearson residual."""
    if n_obs <= 0:
        raise DataValidationError("dispersion needs at least one observation")
    r = np.asarray(raw_residuals, float)
    return float(np.sum(r * r) / n_obs)


@dataclass(frozen=True)
class ResidualSet:
    """Standardized residuals e = r / sqrt(phi) with the dispersion."""

    standardized: np.ndarray
    dispersion: float
    raw: np.ndarray


def standardize(raw_residuals, dispersion: float) -> ResidualSet:
    raw = np.asarray(raw_residuals, float)
    if dispersion < 0:
        raise DataValidationError("dispersion must be nonnegative")
    if dispersion == 0.0:
        e = np.zeros_like(raw)
    else:
        e = raw / np.sqrt(dispersion)
    return ResidualSet(standardized=e, dispersion=float(dispersion), raw=raw)
