"""Eigenmodes of the coupling matrix, exact harmonic flow, localization diagnostics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .chain import BoundaryCondition, ChainState, CouplingMatrix, DisorderRealization
from .errors import DegeneracyWarning, NumericError, ParameterError
from . import stats

DEGENERACY_RTOL = 1e-12


@dataclass(frozen=True)
class EigenDecomposition:
    """Orthonormal modes (columns of ``xi``) and ascending squared frequencies.

    With non-unit masses the modes belong to the mass-reduced matrix
    ``M^-1/2 Phi M^-1/2`` and ``inv_sqrt_mass`` holds ``M^-1/2``. Positions
    and momenta map to reduced coordinates as ``q~ = M^1/2 q``, ``p~ = M^-1/2 p``.
    """

    xi: np.ndarray
    omega2: np.ndarray
    bc: BoundaryCondition
    inv_sqrt_mass: np.ndarray | None = None
    degenerate_pairs: tuple = ()

    @property
    def n(self) -> int:
        return self.omega2.size

    @property
    def omega(self) -> np.ndarray:
        return np.sqrt(np.clip(self.omega2, 0.0, None))

    @property
    def phi_reduced(self) -> np.ndarray:
        return (self.xi * self.omega2) @ self.xi.T

    def to_reduced(self, state: ChainState) -> tuple[np.ndarray, np.ndarray]:
        if self.inv_sqrt_mass is None:
            return state.q, state.p
        return state.q / self.inv_sqrt_mass, state.p * self.inv_sqrt_mass

    def from_reduced(self, q: np.ndarray, p: np.ndarray) -> ChainState:
        if self.inv_sqrt_mass is None:
            return ChainState(q, p)
        return ChainState(q * self.inv_sqrt_mass, p / self.inv_sqrt_mass)

    def to_modes(self, state: ChainState) -> tuple[np.ndarray, np.ndarray]:
        q, p = self.to_reduced(state)
        return q @ self.xi, p @ self.xi

    def from_modes(self, Q: np.ndarray, P: np.ndarray) -> ChainState:
        return self.from_reduced(Q @ self.xi.T, P @ self.xi.T)


def _fix_signs(xi: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    # first component with magnitude above tol is made positive
    lead = np.argmax(np.abs(xi) > tol, axis=0)
    signs = np.sign(xi[lead, np.arange(xi.shape[1])])
    signs[signs == 0] = 1.0
    return xi * signs


def eigendecompose(phi: CouplingMatrix, masses: np.ndarray | None = None) -> EigenDecomposition:
    """Symmetric eigendecomposition, tridiagonal solver for fixed BC."""
    a = phi.matrix
    inv_sqrt_mass = None
    if masses is not None and not np.all(np.asarray(masses) == 1.0):
        inv_sqrt_mass = 1.0 / np.sqrt(np.asarray(masses, dtype=float))
        a = inv_sqrt_mass[:, None] * a * inv_sqrt_mass[None, :]
    try:
        if phi.bc is BoundaryCondition.FIXED and a.shape[0] > 1:
            w, v = linalg.eigh_tridiagonal(np.diag(a).copy(), np.diag(a, 1).copy())
        else:
            w, v = linalg.eigh(a)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc
    order = np.argsort(w, kind="stable")
    w, v = w[order], _fix_signs(v[:, order])
    gaps = np.diff(w)
    scale = np.maximum(np.abs(w[1:]), np.finfo(float).tiny)
    degenerate = tuple((int(k), int(k + 1)) for k in np.nonzero(gaps < DEGENERACY_RTOL * scale)[0])
    if degenerate:
        warnings.warn(f"{len(degenerate)} degenerate eigenvalue pair(s)", DegeneracyWarning, stacklevel=2)
    return EigenDecomposition(v, w, phi.bc, inv_sqrt_mass, degenerate)


def eigen_recurrence_residual(
    decomp: EigenDecomposition, disorder: DisorderRealization, bc: BoundaryCondition | str = "fixed"
) -> float:
    """Largest violation of the three-term recurrence obeyed by fixed-BC modes."""
    if BoundaryCondition.parse(bc) is not BoundaryCondition.FIXED:
        raise ParameterError("the recurrence holds for fixed boundaries only")
    if decomp.inv_sqrt_mass is not None:
        raise ParameterError("the recurrence assumes unit masses")
    x = np.pad(decomp.xi, ((1, 1), (0, 0)))
    nu = np.asarray(disorder.nu)[:, None]
    res = x[2:] - (2 + nu - decomp.omega2[None, :]) * x[1:-1] + x[:-2]
    return float(np.max(np.abs(res)))


def _mode_flow(omega2: np.ndarray, t):
    """cos(wt), sin(wt)/w, -w sin(wt), with the w -> 0 limit handled."""
    w = np.sqrt(np.clip(omega2, 0.0, None))
    wt = np.multiply.outer(np.asarray(t, dtype=float), w)
    cos = np.cos(wt)
    sin_over_w = np.asarray(t, dtype=float)[..., None] * np.sinc(wt / np.pi)
    return cos, sin_over_w, -w * np.sin(wt)


def harmonic_propagate(state: ChainState, decomp: EigenDecomposition, t) -> ChainState:
    """Exact harmonic flow over time ``t`` (scalar or one value per batch row)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ParameterError("t must be nonnegative")
    Q, P = decomp.to_modes(state)
    cos, sw, msw = _mode_flow(decomp.omega2, t)
    return decomp.from_modes(Q * cos + P * sw, Q * msw + P * cos)


def flow_matrix(decomp: EigenDecomposition, t: float) -> np.ndarray:
    """Linear map ``(q, p) -> (q(t), p(t))`` as a ``2N x 2N`` matrix."""
    n = decomp.n
    cos, sw, msw = _mode_flow(decomp.omega2, float(t))
    x = decomp.xi
    d = np.ones(n) if decomp.inv_sqrt_mass is None else decomp.inv_sqrt_mass
    to_q = (d[:, None] * x), (x.T / d[None, :])  # q = D X Q, Q = X^T D^-1 q
    to_p = (x / d[:, None]), (x.T * d[None, :])  # p = D^-1 X P, P = X^T D p
    out = np.empty((2 * n, 2 * n))
    out[:n, :n] = to_q[0] @ (cos[:, None] * to_q[1])
    out[:n, n:] = to_q[0] @ (sw[:, None] * to_p[1])
    out[n:, :n] = to_p[0] @ (msw[:, None] * to_q[1])
    out[n:, n:] = to_p[0] @ (cos[:, None] * to_p[1])
    return out


def participation_ratio(decomp: EigenDecomposition) -> np.ndarray:
    """Per-mode participation ratio ``1 / sum_j xi_jk^4`` (modes are normalized)."""
    x2 = decomp.xi**2
    return x2.sum(axis=0) ** 2 / (x2**2).sum(axis=0)


@dataclass
class OverlapDecay:
    separation: np.ndarray
    mean_overlap: np.ndarray
    stderr: np.ndarray
    rate: float
    rate_stderr: float
    window: tuple[int, int]
    n: int
    n_draws: int
    meta: dict = field(default_factory=dict)

    def table(self):
        header = ["separation", "mean_overlap", "stderr"]
        rows = [[int(s), float(m), float(e)] for s, m, e in zip(self.separation, self.mean_overlap, self.stderr)]
        return header, rows

    def summary(self) -> dict:
        return {
            "rate": self.rate,
            "rate_stderr": self.rate_stderr,
            "window": list(self.window),
            "n": self.n,
            "n_draws": self.n_draws,
            **self.meta,
        }


def separation_matrix(n: int, bc: BoundaryCondition) -> np.ndarray:
    idx = np.arange(n)
    d = np.abs(idx[:, None] - idx[None, :])
    if bc is BoundaryCondition.PERIODIC:
        d = np.minimum(d, n - d)
    return d


def default_window(n: int) -> tuple[int, int]:
    return max(1, n // 8), n // 2


def mode_overlap_decay(
    decomps: Sequence[EigenDecomposition], window: tuple[int, int] | None = None
) -> OverlapDecay:
    """Disorder-averaged ``sum_k |xi_rk xi_tk|`` binned by separation, with an exponential fit."""
    if len(decomps) < 2:
        raise ParameterError("need at least two disorder draws")
    n = decomps[0].n
    if any(d.n != n for d in decomps):
        raise ParameterError("all decompositions must share the chain length")
    bc = decomps[0].bc
    sep = separation_matrix(n, bc)
    n_bins = int(sep.max()) + 1
    counts = np.bincount(sep.ravel(), minlength=n_bins)
    per_draw = np.empty((len(decomps), n_bins))
    for i, d in enumerate(decomps):
        ax = np.abs(d.xi)
        overlap = ax @ ax.T
        per_draw[i] = np.bincount(sep.ravel(), weights=overlap.ravel(), minlength=n_bins) / counts
    mean = per_draw.mean(axis=0)
    err = per_draw.std(axis=0, ddof=1) / np.sqrt(len(decomps))
    lo, hi = window or default_window(n)
    seps = np.arange(n_bins)
    sel = (seps >= lo) & (seps <= hi)
    fit = stats.linear_fit(seps[sel], -np.log(mean[sel]))
    return OverlapDecay(seps, mean, err, fit.slope, fit.slope_stderr, (lo, hi), n, len(decomps))
