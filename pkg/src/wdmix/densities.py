"""Log-space density primitives.

Everything here returns log densities.  Gaussian evaluations go through the
component's cached Cholesky factor; normalising constants use the cached
log-determinant, so no determinant or inverse is ever formed explicitly.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from .core import GaussianComponent, MixtureModel
from .errors import (
    DegenerateRow,
    DimensionMismatch,
    EmptyInput,
    NonPositiveShape,
    NonPositiveWeight,
)

_LOG_2PI = float(np.log(2.0 * np.pi))


def log_sum_exp(values, axis=None):
    """log(sum(exp(values))) with the usual max shift.

    Returns -inf when every input is -inf instead of raising on the
    underflowing exponentials.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise EmptyInput("log_sum_exp of an empty array")
    shift = np.max(arr, axis=axis, keepdims=True)
    shift_safe = np.where(np.isfinite(shift), shift, 0.0)
    with np.errstate(invalid="ignore"):
        summed = np.sum(np.exp(arr - shift_safe), axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out = np.log(summed) + shift_safe
    out = np.where(np.isfinite(shift), out, shift)
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def mahalanobis_sq(x, component: GaussianComponent):
    """Squared Mahalanobis distance of one point or a stack of points.

    Accepts ``x`` of shape (d,) or (n, d); returns a scalar or an (n,)
    array accordingly.
    """
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != component.d:
        raise DimensionMismatch(f"points of dimension {pts.shape[-1]}, component has d={component.d}")
    diff = pts - component.mean
    if component.is_diagonal:
        out = np.sum(diff * diff / component.covariance, axis=1)
    else:
        z = solve_triangular(component.chol, diff.T, lower=True, check_finite=False)
        out = np.sum(z * z, axis=0)
    return float(out[0]) if single else out


def log_gaussian_scaled(x, component: GaussianComponent, w):
    """log N(x; mu, Sigma / w) for positive precision scale(s) w.

    ``w`` may be a scalar or one value per point.  The scale multiplies the
    precision, so larger w means a tighter density around the mean.
    """
    w_arr = np.asarray(w, dtype=np.float64)
    if np.any(w_arr <= 0.0) or not np.all(np.isfinite(w_arr)):
        raise NonPositiveWeight("precision scales must be positive and finite")
    maha = mahalanobis_sq(x, component)
    d = component.d
    out = (
        -0.5 * d * _LOG_2PI
        + 0.5 * d * np.log(w_arr)
        - 0.5 * component.log_det
        - 0.5 * w_arr * maha
    )
    return float(out) if np.isscalar(maha) and w_arr.ndim == 0 else out


def log_gamma_pdf(w, alpha, beta):
    """Log density of the gamma distribution with shape alpha and rate beta.

    Parameterised so the mean is ``alpha / beta`` and the variance
    ``alpha / beta**2``.
    """
    w_arr = np.asarray(w, dtype=np.float64)
    a = np.asarray(alpha, dtype=np.float64)
    b = np.asarray(beta, dtype=np.float64)
    if np.any(a <= 0.0) or np.any(b <= 0.0):
        raise NonPositiveShape("gamma shape and rate must be positive")
    if np.any(w_arr <= 0.0):
        raise NonPositiveWeight("gamma density argument must be positive")
    out = a * np.log(b) - gammaln(a) + (a - 1.0) * np.log(w_arr) - b * w_arr
    return float(out) if out.ndim == 0 else out


def log_pearson7(x, component: GaussianComponent, alpha, beta):
    """Log Pearson type VII density.

    This is the marginal of N(x; mu, Sigma / w) with w ~ Gamma(alpha, beta):
    a Student-like elliptical density whose tail weight grows as alpha
    shrinks.  ``alpha`` and ``beta`` may be scalars or one value per point.
    """
    a = np.asarray(alpha, dtype=np.float64)
    b = np.asarray(beta, dtype=np.float64)
    if np.any(a <= 0.0) or np.any(b <= 0.0):
        raise NonPositiveShape("Pearson VII shape and rate must be positive")
    maha = mahalanobis_sq(x, component)
    d = component.d
    half = 0.5 * d
    out = (
        gammaln(a + half)
        - gammaln(a)
        - 0.5 * component.log_det
        - half * (_LOG_2PI + np.log(b))
        - (a + half) * np.log1p(maha / (2.0 * b))
    )
    if np.isscalar(maha) and a.ndim == 0 and b.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# Matrix forms used by the EM engines: one column per mixture component.


def mahalanobis_matrix(points: np.ndarray, components) -> np.ndarray:
    """(n, K) squared Mahalanobis distances against each component."""
    cols = [mahalanobis_sq(points, comp) for comp in components]
    return np.column_stack(cols) if cols else np.empty((points.shape[0], 0))


def scaled_gaussian_log_matrix(points: np.ndarray, components, w) -> np.ndarray:
    """(n, K) matrix of log N(x_i; mu_k, Sigma_k / w_i)."""
    w_arr = np.asarray(w, dtype=np.float64)
    if np.any(w_arr <= 0.0):
        raise NonPositiveWeight("precision scales must be positive")
    if w_arr.ndim == 0:
        w_arr = np.full(points.shape[0], float(w_arr))
    d = points.shape[1]
    maha = mahalanobis_matrix(points, components)
    log_dets = np.array([comp.log_det for comp in components])
    return (
        -0.5 * d * _LOG_2PI
        + 0.5 * d * np.log(w_arr)[:, None]
        - 0.5 * log_dets[None, :]
        - 0.5 * w_arr[:, None] * maha
    )


def pearson7_log_matrix(points: np.ndarray, components, alpha, beta) -> np.ndarray:
    """(n, K) matrix of log Pearson VII densities.

    ``alpha`` is a scalar or (n,) prior shape; ``beta`` may be scalar, (n,),
    or a full (n, K) matrix of per-point-per-component rates.
    """
    n, d = points.shape
    a = np.asarray(alpha, dtype=np.float64)
    b = np.asarray(beta, dtype=np.float64)
    if np.any(a <= 0.0) or np.any(b <= 0.0):
        raise NonPositiveShape("Pearson VII shape and rate must be positive")
    if a.ndim == 0:
        a = np.full(n, float(a))
    if b.ndim == 0:
        b = np.full(n, float(b))
    if b.ndim == 1:
        b = b[:, None]
    maha = mahalanobis_matrix(points, components)
    log_dets = np.array([comp.log_det for comp in components])
    half = 0.5 * d
    return (
        (gammaln(a + half) - gammaln(a))[:, None]
        - 0.5 * log_dets[None, :]
        - half * (_LOG_2PI + np.log(b))
        - (a[:, None] + half) * np.log1p(maha / (2.0 * b))
    )


def normalize_log_responsibilities(log_weighted: np.ndarray) -> np.ndarray:
    """Row-normalise log numerators into a responsibility matrix.

    Raises DegenerateRow when a point has zero density under every
    component.
    """
    row_max = np.max(log_weighted, axis=1)
    if np.any(~np.isfinite(row_max)):
        bad = int(np.argmax(~np.isfinite(row_max)))
        raise DegenerateRow(f"point {bad} has no component with positive density")
    norm = log_sum_exp(log_weighted, axis=1)
    eta = np.exp(log_weighted - norm[:, None])
    # Guard against rounding pushing a row sum a hair away from 1.
    eta /= eta.sum(axis=1, keepdims=True)
    return eta


def log_mixture_density(points: np.ndarray, model: MixtureModel, log_density_matrix: np.ndarray) -> np.ndarray:
    """(n,) log of sum_k pi_k * exp(log_density_matrix[:, k])."""
    with np.errstate(divide="ignore"):
        log_pi = np.log(model.proportions)
    return log_sum_exp(log_density_matrix + log_pi[None, :], axis=1)
