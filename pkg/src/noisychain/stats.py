"""Small statistics helpers: fits, jackknife, nested variance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import ParameterError


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    slope_stderr: float
    intercept_stderr: float


def linear_fit(x, y) -> LinearFit:
    """Ordinary least squares ``y = slope * x + intercept``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.ptp(x) == 0:
        raise ParameterError("linear fit needs at least two distinct abscissae")
    if x.size == 2:
        slope = (y[1] - y[0]) / (x[1] - x[0])
        return LinearFit(float(slope), float(y[0] - slope * x[0]), 0.0, 0.0)
    r = sps.linregress(x, y)
    return LinearFit(float(r.slope), float(r.intercept), float(r.stderr), float(r.intercept_stderr))


def common_slope_fit(x, y, groups) -> LinearFit:
    """Least squares with one shared slope and a separate intercept per group.

    The reported intercept is the one of the first group (in sorted order).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    labels, idx = np.unique(np.asarray(groups), return_inverse=True)
    design = np.column_stack([x, np.eye(labels.size)[idx]])
    dof = x.size - design.shape[1]
    if dof < 1:
        raise ParameterError("not enough points for a common-slope fit")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    cov = np.sum(resid**2) / dof * np.linalg.inv(design.T @ design)
    return LinearFit(float(coef[0]), float(coef[1]), float(np.sqrt(cov[0, 0])), float(np.sqrt(cov[1, 1])))


def jackknife_mean(values) -> tuple[float, float]:
    """Mean and leave-one-out jackknife standard error."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 2:
        raise ParameterError("jackknife needs at least two values")
    total = np.sum(v)
    loo = (total - v) / (n - 1)
    mean = total / n
    se = np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return float(mean), float(se)


@dataclass(frozen=True)
class NestedEstimate:
    mean: float
    stderr: float
    between_var: float
    within_var: float


def nested_mean(samples) -> NestedEstimate:
    """Two-level mean over a ``(n_disorder, n_samples)`` array.

    ``stderr`` is the jackknife error over disorder means, which already
    contains both levels. ``within_var`` is the part of its square explained
    by sampling noise inside each draw; ``between_var`` is the remainder.
    """
    s = np.asarray(samples, dtype=float)
    if s.ndim != 2 or s.shape[0] < 2 or s.shape[1] < 1:
        raise ParameterError("need at least two disorder draws and one sample each")
    n_d, n_s = s.shape
    draw_means = s.mean(axis=1)
    mean, se = jackknife_mean(draw_means)
    within = float(np.mean(s.var(axis=1, ddof=1)) / n_s / n_d) if n_s > 1 else 0.0
    return NestedEstimate(mean, se, max(se**2 - within, 0.0), within)


def richardson(z, values) -> tuple[float, float]:
    """Linear extrapolation to ``z = 0`` from the two smallest ``z``.

    Returns the extrapolated value and its distance to the smallest-``z`` value.
    """
    z = np.asarray(z, dtype=float)
    v = np.asarray(values, dtype=float)
    order = np.argsort(z)
    (z1, z2), (v1, v2) = z[order[:2]], v[order[:2]]
    extrap = v1 - z1 * (v2 - v1) / (z2 - z1)
    return float(extrap), float(abs(extrap - v1))
