"""Working-correlation structures and moment estimation of their parameters.

A structure object carries the current parameter state (alpha), realizes the
correlation matrix for any cluster dimension and re-estimates its parameters
from standardized residuals.  The parametric structures (exchangeable, ar1)
admit arbitrary cluster sizes through leading submatrices; unstructured and
fixed patterns require balanced clusters.
"""

import warnings
from typing import Optional, Union

import numpy as np

from . import kernels
from .errors import DataValidationError, FitWarning, SpecificationError
from .family import FamilySpec

__all__ = [
    "WorkingCorrelation",
    "Independence",
    "Exchangeable",
    "Ar1",
    "Unstructured",
    "FixedCorrelation",
    "ScaledPattern",
    "make_correlation",
    "build_correlation",
    "working_covariance",
    "kronecker",
    "estimate_alpha",
    "ensure_positive_definite",
    "STRUCTURES",
]

_PD_TOL = 1e-10
_PD_CLIP = 1e-6


def ensure_positive_definite(matrix: np.ndarray, label: str = "correlation",
                             clip: float = _PD_CLIP) -> np.ndarray:
    """Project a symmetric matrix to positive definiteness if needed.

    Eigenvalues below the tolerance are clipped at ``clip`` and the result is
    renormalized to unit diagonal; a warning reports the projection.
    """
    m = np.asarray(matrix, float)
    m = 0.5 * (m + m.T)
    eigval, eigvec = np.linalg.eigh(m)
    if eigval.min() > _PD_TOL:
        return m
    warnings.warn(
        f"{label} matrix is not positive definite "
        f"(min eigenvalue {eigval.min():.3e}); clipping eigenvalues",
        FitWarning, stacklevel=2)
    fixed = (eigvec * np.maximum(eigval, clip)) @ eigvec.T
    d = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(d, d)
    np.fill_diagonal(fixed, 1.0)
    return 0.5 * (fixed + fixed.T)


class WorkingCorrelation:
    """Base class: parameter state + realization + moment update."""

    structure = "base"

    @property
    def alpha(self):
        return None

    def matrix(self, dim: int) -> np.ndarray:
        raise NotImplementedError

    def update(self, e: np.ndarray, starts: np.ndarray, counts: np.ndarray) -> None:
        """Re-estimate parameters from standardized residuals per cluster."""

    def reset(self) -> None:
        """Return to the identity state (used for degenerate fits)."""


class Independence(WorkingCorrelation):
    structure = "independence"

    def matrix(self, dim):
        if dim < 1:
            raise SpecificationError("correlation dimension must be >= 1")
        return np.eye(dim)


def _clamp(value, lo, hi, label):
    if lo < value < hi:
        return value
    clipped = min(max(value, lo + 1e-6), hi - 1e-6)
    warnings.warn(
        f"{label} moment estimate {value:.4f} outside ({lo:.4f}, {hi:.4f}); "
        f"clamped to {clipped:.4f}", FitWarning, stacklevel=3)
    return clipped


class Exchangeable(WorkingCorrelation):
    structure = "exchangeable"

    def __init__(self, alpha: float = 0.0):
        self._alpha = float(alpha)

    @property
    def alpha(self):
        return self._alpha

    def matrix(self, dim):
        if dim < 1:
            raise SpecificationError("correlation dimension must be >= 1")
        lo = -1.0 / (dim - 1) if dim > 1 else -1.0
        if not (lo < self._alpha < 1.0):
            raise SpecificationError(
                f"exchangeable alpha {self._alpha} outside ({lo:.4f}, 1) for dim {dim}")
        r = np.full((dim, dim), self._alpha)
        np.fill_diagonal(r, 1.0)
        return r

    def update(self, e, starts, counts):
        total, npairs = kernels.pair_sums(e, starts, counts, False)
        if npairs == 0:
            raise DataValidationError(
                "no within-cluster pairs available to estimate alpha")
        dim = int(counts.max())
        lo = -1.0 / (dim - 1) if dim > 1 else -1.0
        self._alpha = _clamp(total / npairs, lo, 1.0, "exchangeable alpha")

    def reset(self):
        self._alpha = 0.0


class Ar1(WorkingCorrelation):
    structure = "ar1"

    def __init__(self, alpha: float = 0.0):
        self._alpha = float(alpha)

    @property
    def alpha(self):
        return self._alpha

    def matrix(self, dim):
        if dim < 1:
            raise SpecificationError("correlation dimension must be >= 1")
        if not (-1.0 < self._alpha < 1.0):
            raise SpecificationError(f"ar1 alpha {self._alpha} outside (-1, 1)")
        idx = np.arange(dim)
        return self._alpha ** np.abs(idx[:, None] - idx[None, :])

    def update(self, e, starts, counts):
        total, npairs = kernels.pair_sums(e, starts, counts, True)
        if npairs == 0:
            raise DataValidationError(
                "no adjacent within-cluster pairs available to estimate alpha")
        self._alpha = _clamp(total / npairs, -1.0, 1.0, "ar1 alpha")

    def reset(self):
        self._alpha = 0.0


class Unstructured(WorkingCorrelation):
    structure = "unstructured"

    def __init__(self, matrix: Optional[np.ndarray] = None):
        self._matrix = None if matrix is None else np.asarray(matrix, float)

    @property
    def alpha(self):
        return self._matrix

    def matrix(self, dim):
        if self._matrix is None:
            return np.eye(dim)
        if self._matrix.shape != (dim, dim):
            raise SpecificationError(
                f"unstructured correlation has dim {self._matrix.shape[0]}, "
                f"cluster needs {dim}")
        return self._matrix.copy()

    def update(self, e, starts, counts):
        sizes = np.unique(counts)
        if sizes.size != 1:
            raise DataValidationError(
                "unstructured correlation requires balanced clusters; "
                f"observed sizes {sizes.tolist()}")
        dim = int(sizes[0])
        if dim < 2:
            raise DataValidationError("unstructured correlation needs clusters of size >= 2")
        mat = np.reshape(e, (counts.size, dim))
        raw = mat.T @ mat / counts.size
        np.fill_diagonal(raw, 1.0)
        self._matrix = ensure_positive_definite(raw, "unstructured working")

    def reset(self):
        self._matrix = None


class FixedCorrelation(WorkingCorrelation):
    structure = "fixed"

    def __init__(self, matrix: np.ndarray):
        m = np.asarray(matrix, float)
        _check_correlation(m)
        self._matrix = m

    @property
    def alpha(self):
        return self._matrix

    def matrix(self, dim):
        if self._matrix.shape != (dim, dim):
            raise SpecificationError(
                f"fixed correlation has dim {self._matrix.shape[0]}, cluster needs {dim}")
        return self._matrix.copy()


class ScaledPattern(WorkingCorrelation):
    """Fixed off-diagonal pattern scaled by one estimated proportionality.

    Realizes R(a) = (1 - a) I + a K for a fixed unit-diagonal pattern K; the
    scalar is re-estimated by the moment condition E(e_k e_l) = a K_kl.
    """

    structure = "scaled-pattern"

    def __init__(self, pattern: np.ndarray, alpha: float = 1.0):
        k = np.asarray(pattern, float)
        _check_correlation(k)
        self._pattern = k
        off = k[np.triu_indices_from(k, 1)]
        self._offdiag_sq = float(np.sum(off * off))
        # R(a) = (1-a) I + a K is positive definite iff 1 + a (lam - 1) > 0
        # for every eigenvalue lam of K; clamp estimates into that interval
        lam = np.linalg.eigvalsh(k)
        self._hi = 1.0 / (1.0 - lam.min()) if lam.min() < 1.0 else np.inf
        self._lo = 1.0 / (1.0 - lam.max()) if lam.max() > 1.0 else -np.inf
        self._alpha = float(np.clip(alpha, 0.95 * self._lo, 0.95 * self._hi))

    @property
    def alpha(self):
        return self._alpha

    @property
    def pattern(self):
        return self._pattern

    def matrix(self, dim):
        if self._pattern.shape != (dim, dim):
            raise SpecificationError(
                f"pattern has dim {self._pattern.shape[0]}, cluster needs {dim}")
        r = self._alpha * self._pattern + (1.0 - self._alpha) * np.eye(dim)
        return ensure_positive_definite(r, "scaled-pattern working")

    def update(self, e, starts, counts):
        if self._offdiag_sq == 0.0:
            self._alpha = 0.0
            return
        sizes = np.unique(counts)
        if sizes.size != 1 or int(sizes[0]) != self._pattern.shape[0]:
            raise DataValidationError(
                "scaled-pattern correlation requires balanced clusters matching "
                "the pattern dimension")
        num = kernels.pattern_pair_sum(e, starts, counts, self._pattern)
        raw = num / (counts.size * self._offdiag_sq)
        clipped = float(np.clip(raw, 0.95 * self._lo, 0.95 * self._hi))
        if clipped != raw:
            warnings.warn(
                f"proportionality estimate {raw:.3f} outside the positive-"
                f"definite range ({self._lo:.3f}, {self._hi:.3f}); clamped",
                FitWarning, stacklevel=3)
        self._alpha = clipped

    def reset(self):
        self._alpha = 0.0


STRUCTURES = ("independence", "exchangeable", "ar1", "unstructured", "fixed")


def make_correlation(structure: Union[str, WorkingCorrelation],
                     alpha=None, matrix=None) -> WorkingCorrelation:
    """Build a working-correlation object from a structure name."""
    if isinstance(structure, WorkingCorrelation):
        return structure
    name = structure.strip().lower()
    if name == "independence":
        return Independence()
    if name == "exchangeable":
        return Exchangeable(0.0 if alpha is None else alpha)
    if name == "ar1":
        return Ar1(0.0 if alpha is None else alpha)
    if name == "unstructured":
        return Unstructured(matrix)
    if name == "fixed":
        if matrix is None:
            raise SpecificationError("fixed correlation requires a matrix")
        return FixedCorrelation(matrix)
    raise SpecificationError(
        f"unknown correlation structure {structure!r}; choose from {STRUCTURES}")


def build_correlation(spec: Union[str, WorkingCorrelation], dim: int,
                      alpha=None, matrix=None) -> np.ndarray:
    """Realize the working correlation matrix for a cluster dimension."""
    corr = make_correlation(spec, alpha=alpha, matrix=matrix)
    if corr.structure == "unstructured" and corr.alpha is None and matrix is None \
            and alpha is None and dim > 1:
        raise SpecificationError(
            "unstructured correlation requested without its parameter matrix")
    return corr.matrix(int(dim))


def _check_correlation(m: np.ndarray) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise SpecificationError("correlation matrix must be square")
    if not np.allclose(m, m.T, atol=1e-8):
        raise SpecificationError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(m), 1.0, atol=1e-8):
        raise SpecificationError("correlation matrix must have unit diagonal")


def working_covariance(mu_i, R: np.ndarray, phi: float,
                       family: FamilySpec, weights=None) -> np.ndarray:
    """Cluster working covariance phi * D(sqrt V) R D(sqrt V)."""
    mu_i = np.asarray(mu_i, float)
    R = np.asarray(R, float)
    if R.shape != (mu_i.size, mu_i.size):
        raise SpecificationError(
            f"correlation dim {R.shape} does not match cluster size {mu_i.size}")
    family.check_mu(mu_i)
    v = family.variance(mu_i)
    if weights is not None:
        v = v / np.asarray(weights, float)
    sd = np.sqrt(v)
    return phi * (R * np.outer(sd, sd))


def kronecker(psi: np.ndarray, r1: np.ndarray) -> np.ndarray:
    """Kronecker product of two unit-diagonal correlation matrices."""
    psi = np.asarray(psi, float)
    r1 = np.asarray(r1, float)
    _check_correlation(psi)
    _check_correlation(r1)
    return np.kron(psi, r1)


def estimate_alpha(residuals, starts, counts, structure: str):
    """Moment estimate of the correlation parameters from standardized
    residuals grouped by cluster.

    Returns a float for exchangeable/ar1, a matrix for unstructured and
    None for independence.
    """
    e = np.ascontiguousarray(
        getattr(residuals, "standardized", residuals), dtype=float)
    starts = np.asarray(starts, np.int64)
    counts = np.asarray(counts, np.int64)
    corr = make_correlation(structure)
    corr.update(e, starts, counts)
    return corr.alpha
