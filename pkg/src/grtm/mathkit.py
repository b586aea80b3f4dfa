"""Numerical kernels: digamma, log-sum-exp and Gaussian log densities."""

from dataclasses import dataclass

import numpy as np

from grtm.errors import ContractError, NumericError

VARIANCE_FLOOR = 1e-6
MAX_FULL_DIM = 64

_LOG_2PI = np.log(2.0 * np.pi)

# Bernoulli coefficients B_2n / 2n for the asymptotic digamma series.
_DIGAMMA_SERIES = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
_DIGAMMA_SHIFT = 6.0


def digamma(x):
    """Logarithmic derivative of the gamma function for positive arguments.

    Small arguments are shifted upward with psi(x) = psi(x + 1) - 1/x until
    they exceed 6, after which the asymptotic expansion in 1/x^2 is summed.
    Accepts scalars or arrays; returns the same shape.
    """
    arr = np.asarray(x, dtype=np.float64)
    if np.any(~(arr > 0)) or np.any(~np.isfinite(arr)):
        raise ContractError("digamma is defined here only for finite x > 0")
    z = arr.copy()
    acc = np.zeros_like(z)
    small = z < _DIGAMMA_SHIFT
    while np.any(small):
        acc -= np.where(small, 1.0 / z, 0.0)
        z = np.where(small, z + 1.0, z)
        small = z < _DIGAMMA_SHIFT
    inv2 = 1.0 / (z * z)
    series = 0.0
    for coef in reversed(_DIGAMMA_SERIES):
        series = (series + coef) * inv2
    out = acc + np.log(z) - 0.5 / z - series
    return float(out) if out.ndim == 0 else out


def log_sum_exp(v, axis=None):
    """Stable ``log(sum(exp(v)))``; reduces over ``axis`` for arrays."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ContractError("log_sum_exp of an empty vector")
    vmax = np.max(v, axis=axis, keepdims=True)
    vmax = np.where(np.isfinite(vmax), vmax, 0.0)
    out = np.log(np.sum(np.exp(v - vmax), axis=axis, keepdims=True)) + vmax
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


@dataclass(frozen=True)
class Covariance:
    """A Gaussian covariance, either diagonal variances or a full matrix.

    Build instances through :meth:`diagonal` or :meth:`full`, which apply
    the variance floor and validate positive definiteness.
    """

    kind: str
    values: np.ndarray

    @classmethod
    def diagonal(cls, variances, floor=VARIANCE_FLOOR):
        var = np.asarray(variances, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(var)):
            raise NumericError("non-finite variance")
        return cls("diagonal", np.maximum(var, floor))

    @classmethod
    def full(cls, matrix, floor=VARIANCE_FLOOR):
        mat = np.array(matrix, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ContractError(f"full covariance must be square, got {mat.shape}")
        if mat.shape[0] > MAX_FULL_DIM:
            raise ContractError(
                f"full covariance supported only for D <= {MAX_FULL_DIM}, got D = {mat.shape[0]}"
            )
        if not np.all(np.isfinite(mat)):
            raise NumericError("non-finite covariance entry")
        mat = 0.5 * (mat + mat.T)
        mat[np.diag_indices_from(mat)] = np.maximum(np.diag(mat), floor)
        cov = cls("full", mat)
        cov.cholesky()
        return cov

    @property
    def dim(self):
        return self.values.shape[0]

    def cholesky(self):
        try:
            return np.linalg.cholesky(self.values)
        except np.linalg.LinAlgError as exc:
            raise NumericError("covariance is not positive definite") from exc

    def to_matrix(self):
        if self.kind == "diagonal":
            return np.diag(self.values)
        return self.values.copy()


def gaussian_log_density(x, mean, cov):
    """Log of the multivariate normal density N(x | mean, cov).

    ``x`` may be a single point of shape (D,) or a batch of shape (n, D);
    the result is a float or an (n,) array respectively. Diagonal
    covariances are evaluated in O(D) per point.
    """
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    d = mean.shape[0]
    if mean.ndim != 1 or pts.ndim != 2 or pts.shape[1] != d or cov.dim != d:
        raise ContractError(
            f"dimension mismatch: x {x.shape}, mean {mean.shape}, cov dim {cov.dim}"
        )
    diff = pts - mean
    if cov.kind == "diagonal":
        maha = np.sum(diff * diff / cov.values, axis=1)
        logdet = np.sum(np.log(cov.values))
    else:
        chol = cov.cholesky()
        sol = np.linalg.solve(chol, diff.T)
        maha = np.sum(sol * sol, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    out = -0.5 * (d * _LOG_2PI + logdet + maha)
    return float(out[0]) if single else out
