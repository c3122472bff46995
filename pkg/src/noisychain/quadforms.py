"""Quadratic observables ``<q,a q> + <q,b p> + <p,g p> + c`` and the generator acting on them.

All routines work in unit-mass coordinates. For a chain with masses, pass
the mass-reduced coupling matrix and transform the forms accordingly (see
:func:`build_current_form`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.sparse import linalg as sparse_linalg

from .chain import (
    BoundaryCondition,
    CouplingMatrix,
    GibbsParams,
    anharmonic_force,
    build_phi,
    current_matrix,
    gaussian_covariance,
    sample_disorder,
    sample_gibbs,
)
from .potentials import AnharmonicPotential
from . import rng as rngmod
from .errors import DegeneracyError, NumericError, ParameterError, UnsupportedMeasureError
from .spectral import EigenDecomposition, eigendecompose
from . import stats


def _sym(a: np.ndarray) -> np.ndarray:
    return (a + a.T) / 2


def _as_matrix(phi) -> np.ndarray:
    return phi.matrix if isinstance(phi, CouplingMatrix) else np.asarray(phi, dtype=float)


@dataclass(frozen=True)
class QuadraticForm:
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        b = np.asarray(self.beta, dtype=float)
        g = np.asarray(self.gamma, dtype=float)
        if not (a.ndim == 2 and a.shape[0] == a.shape[1] and a.shape == b.shape == g.shape):
            raise ParameterError("coefficient matrices must be square with equal shapes")
        for name, m in (("alpha", _sym(a)), ("beta", b.copy()), ("gamma", _sym(g))):
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        object.__setattr__(self, "c", float(self.c))

    @classmethod
    def zeros(cls, n: int) -> "QuadraticForm":
        z = np.zeros((n, n))
        return cls(z, z, z, 0.0)

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    def evaluate(self, q, p) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        return (
            np.einsum("...i,ij,...j->...", q, self.alpha, q)
            + np.einsum("...i,ij,...j->...", q, self.beta, p)
            + np.einsum("...i,ij,...j->...", p, self.gamma, p)
            + self.c
        )

    def __add__(self, other: "QuadraticForm") -> "QuadraticForm":
        return QuadraticForm(self.alpha + other.alpha, self.beta + other.beta, self.gamma + other.gamma, self.c + other.c)

    def __sub__(self, other: "QuadraticForm") -> "QuadraticForm":
        return self + (-1.0) * other

    def __mul__(self, s: float) -> "QuadraticForm":
        return QuadraticForm(s * self.alpha, s * self.beta, s * self.gamma, s * self.c)

    __rmul__ = __mul__

    def __neg__(self) -> "QuadraticForm":
        return -1.0 * self

    def norm(self) -> float:
        """Frobenius norm of the stacked coefficients."""
        return math.sqrt(
            np.sum(self.alpha**2) + np.sum(self.beta**2) + np.sum(self.gamma**2) + self.c**2
        )

    def transformed(self, left: np.ndarray, right: np.ndarray | None = None) -> "QuadraticForm":
        """Change of variables ``q = left @ q'``, ``p = right @ p'``."""
        right = left if right is None else right
        return QuadraticForm(left.T @ self.alpha @ left, left.T @ self.beta @ right, right.T @ self.gamma @ right, self.c)

    # packing onto a flat real vector: upper triangles of alpha/gamma, full beta, c
    def pack(self) -> np.ndarray:
        iu = np.triu_indices(self.n)
        return np.concatenate([self.alpha[iu], self.beta.ravel(), self.gamma[iu], [self.c]])

    @classmethod
    def unpack(cls, vec: np.ndarray, n: int) -> "QuadraticForm":
        iu = np.triu_indices(n)
        m = iu[0].size
        vec = np.asarray(vec, dtype=float)

        def sym_from(v):
            out = np.zeros((n, n))
            out[iu] = v
            return out + np.triu(out, 1).T

        return cls(sym_from(vec[:m]), vec[m : m + n * n].reshape(n, n), sym_from(vec[m + n * n : 2 * m + n * n]), vec[-1])

    def to_text(self) -> str:
        """Dense row-major dump: header line then alpha, beta, gamma rows, then c."""
        lines = [f"# quadratic-form n={self.n}"]
        for name, m in (("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)):
            lines.append(f"# {name}")
            lines += [" ".join(repr(float(x)) for x in row) for row in m]
        lines += ["# c", repr(self.c)]
        return "\n".join(lines) + "\n"


def packed_size(n: int) -> int:
    return n * (n + 1) + n * n + 1


def off_diagonal(a: np.ndarray) -> np.ndarray:
    return a - np.diag(np.diag(a))


def apply_hamiltonian(u: QuadraticForm, phi) -> QuadraticForm:
    """Liouville operator of the harmonic flow acting on ``u``."""
    phi = _as_matrix(phi)
    return QuadraticForm(
        -(u.beta @ phi + phi @ u.beta.T) / 2,
        2 * u.alpha - 2 * phi @ u.gamma,
        (u.beta + u.beta.T) / 2,
        0.0,
    )


def apply_noise(u: QuadraticForm) -> QuadraticForm:
    """Velocity-flip generator (unit rate per site) acting on ``u``."""
    z = np.zeros_like(u.alpha)
    return QuadraticForm(z, -2 * u.beta, -4 * off_diagonal(u.gamma), 0.0)


def apply_generator(u: QuadraticForm, phi, lam: float) -> QuadraticForm:
    """Full generator ``A + lam S`` acting on ``u``."""
    phi = _as_matrix(phi)
    return QuadraticForm(
        -(u.beta @ phi + phi @ u.beta.T) / 2,
        2 * u.alpha - 2 * phi @ u.gamma - 2 * lam * u.beta,
        (u.beta + u.beta.T) / 2 - 4 * lam * off_diagonal(u.gamma),
        0.0,
    )


# -- Gaussian Gibbs moments ----------------------------------------------------------------


@dataclass(frozen=True)
class GaussianGibbs:
    """Harmonic Gibbs measure: ``q ~ N(0, cov_q)``, ``p ~ N(0, T I)``, independent."""

    cov_q: np.ndarray
    temperature: float

    @classmethod
    def from_phi(cls, phi, temperature: float = 1.0) -> "GaussianGibbs":
        if not temperature > 0:
            raise ParameterError("temperature must be positive")
        return cls(gaussian_covariance(_as_matrix(phi), temperature), float(temperature))

    def mean(self, u: QuadraticForm) -> float:
        return float(np.sum(u.alpha * self.cov_q) + self.temperature * np.trace(u.gamma) + u.c)

    def covariance(self, u: QuadraticForm, v: QuadraticForm) -> float:
        C, T = self.cov_q, self.temperature
        qq = 2 * np.sum((u.alpha @ C) * (v.alpha @ C).T)
        qp = T * np.sum(u.beta * (C @ v.beta))
        pp = 2 * T * T * np.sum(u.gamma * v.gamma)
        return float(qq + qp + pp)

    def pairing(self, u: QuadraticForm, v: QuadraticForm) -> float:
        return self.covariance(u, v) + self.mean(u) * self.mean(v)

    def norm(self, u: QuadraticForm) -> float:
        return math.sqrt(max(self.pairing(u, u), 0.0))

    def centered(self, u: QuadraticForm) -> QuadraticForm:
        return QuadraticForm(u.alpha, u.beta, u.gamma, u.c - self.mean(u))


def gibbs_pairing(u: QuadraticForm, v: QuadraticForm, phi, T: float = 1.0, *, lambda_prime: float = 0.0) -> float:
    """Exact ``mu_T(u v)`` under the harmonic Gibbs measure."""
    if lambda_prime > 0:
        raise UnsupportedMeasureError("exact moments exist only for the Gaussian (lambda_prime = 0) measure")
    return GaussianGibbs.from_phi(phi, T).pairing(u, v)


def gibbs_mean(u: QuadraticForm, phi, T: float = 1.0) -> float:
    return GaussianGibbs.from_phi(phi, T).mean(u)


def build_current_form(n: int, bc: BoundaryCondition | str, masses: np.ndarray | None = None) -> QuadraticForm:
    """Rescaled total current ``J / sqrt(N)`` as a quadratic form.

    With masses the form is expressed in mass-reduced coordinates.
    """
    if n < 2:
        raise ParameterError("current form needs n >= 2")
    b = current_matrix(n, bc) / math.sqrt(n)
    if masses is not None:
        d = 1.0 / np.sqrt(np.asarray(masses, dtype=float))
        b = d[:, None] * b * d[None, :]
    z = np.zeros((n, n))
    return QuadraticForm(z, b, z, 0.0)


# -- resolvent -----------------------------------------------------------------------------------


class ResolventSolver:
    """Solves ``(z - L) u = r`` on quadratic forms for a fixed ``(phi, lam, z)``.

    The operator splits as ``M0 - 4 lam E`` where ``M0 = z - A - lam S0``,
    ``S0`` scales ``beta`` by -2 and all of ``gamma`` by -4, and ``E``
    re-inserts the site-diagonal of ``gamma``. ``M0`` decouples into 3x3
    blocks per mode pair; the rank-N correction ``E`` is handled with a
    Woodbury-type reduction to an N x N system. The same ``M0`` inverse
    preconditions the Krylov path.
    """

    def __init__(self, phi, lam: float, z: float, decomp: EigenDecomposition | None = None):
        if not z > 0:
            raise ParameterError("z must be positive")
        if lam < 0:
            raise ParameterError("lambda must be nonnegative")
        self.phi = _as_matrix(phi)
        self.lam = float(lam)
        self.z = float(z)
        self.n = n = self.phi.shape[0]
        if decomp is not None:
            w2, x = decomp.omega2, decomp.xi
        else:
            w2, x = linalg.eigh(self.phi)
        self.x = x
        wj, wk = w2[:, None], w2[None, :]
        self.wj, self.wk = wj, wk
        mu = self.z + 2 * self.lam
        eta = self.z + 4 * self.lam
        sig, prod = wj + wk, wj * wk
        self.mu = mu
        self.a11 = self.z + sig / mu
        self.a12 = -2 * prod / mu
        self.a21 = -2 / mu
        self.a22 = eta + sig / mu
        self.det = self.a11 * self.a22 - self.a12 * self.a21
        if not np.all(np.abs(self.det) > 0):
            raise NumericError("singular mode-pair block")
        self._correction = None
        if self.lam > 0:
            g = self.a11 / self.det
            w = (x[:, :, None] * x[:, None, :]).reshape(n, n * n)
            k = (w * g.ravel()) @ w.T
            self._correction = linalg.lu_factor(np.eye(n) - 4 * self.lam * k)

    def apply(self, u: QuadraticForm) -> QuadraticForm:
        """``(z - L) u``."""
        lu = apply_generator(u, self.phi, self.lam)
        return QuadraticForm(self.z * u.alpha - lu.alpha, self.z * u.beta - lu.beta, self.z * u.gamma - lu.gamma, self.z * u.c)

    def solve_block_diagonal(self, r: QuadraticForm) -> QuadraticForm:
        """``M0^{-1} r``."""
        x = self.x
        ra, rb, rg = x.T @ r.alpha @ x, x.T @ r.beta @ x, x.T @ r.gamma @ x
        mu = self.mu
        r1 = ra - (self.wj * rb.T + self.wk * rb) / (2 * mu)
        r2 = rg + (rb + rb.T) / (2 * mu)
        a = (self.a22 * r1 - self.a12 * r2) / self.det
        g = (-self.a21 * r1 + self.a11 * r2) / self.det
        b = (rb + 2 * a - 2 * self.wj * g) / mu
        return QuadraticForm(x @ a @ x.T, x @ b @ x.T, x @ g @ x.T, r.c / self.z)

    def solve_direct(self, rhs: QuadraticForm) -> QuadraticForm:
        u0 = self.solve_block_diagonal(rhs)
        if self._correction is None:
            return u0
        d = linalg.lu_solve(self._correction, np.diag(u0.gamma))
        z = np.zeros((self.n, self.n))
        extra = QuadraticForm(z, z, np.diag(4 * self.lam * d), 0.0)
        return self.solve_block_diagonal(rhs + extra)

    def solve_krylov(self, rhs: QuadraticForm, tol: float = 1e-10, restart: int | None = None, maxiter: int | None = None) -> QuadraticForm:
        n = self.n
        dim = packed_size(n)
        op = sparse_linalg.LinearOperator(
            (dim, dim), matvec=lambda v: self.apply(QuadraticForm.unpack(v, n)).pack(), dtype=float
        )
        pre = sparse_linalg.LinearOperator(
            (dim, dim), matvec=lambda v: self.solve_block_diagonal(QuadraticForm.unpack(v, n)).pack(), dtype=float
        )
        restart = restart or min(dim, 2 * n + 20)
        sol, info = sparse_linalg.gmres(
            op, rhs.pack(), rtol=tol, atol=0.0, restart=restart, maxiter=maxiter or 20, M=pre
        )
        if info < 0:
            raise NumericError("GMRES breakdown")
        return QuadraticForm.unpack(sol, n)

    def residual(self, u: QuadraticForm, rhs: QuadraticForm) -> float:
        """Relative coefficient-norm residual of ``(z - L) u = rhs``."""
        scale = rhs.norm()
        return (self.apply(u) - rhs).norm() / (scale if scale > 0 else 1.0)

    def solve(self, rhs: QuadraticForm, method: str = "direct", tol: float = 1e-8, **kwargs) -> QuadraticForm:
        if rhs.n != self.n:
            raise ParameterError("dimension mismatch")
        if method == "direct":
            u = self.solve_direct(rhs)
            # iterative refinement absorbs roundoff from near-resonant mode pairs
            for _ in range(3):
                if self.residual(u, rhs) <= tol:
                    break
                u = u + self.solve_direct(rhs - self.apply(u))
        elif method == "krylov":
            u = self.solve_krylov(rhs, tol=min(tol, 1e-10), **kwargs)
        else:
            raise ParameterError(f"unknown method {method!r}")
        res = self.residual(u, rhs)
        if not res <= tol:
            raise NumericError(f"resolvent residual {res:.3e} exceeds {tol:.1e}", residual=res)
        return u


def solve_resolvent(phi, lam: float, z: float, rhs: QuadraticForm, *, method: str = "direct", tol: float = 1e-8, **kwargs) -> QuadraticForm:
    """Solve ``(z - L) u = rhs``; raises NumericError if the residual exceeds ``tol``."""
    return ResolventSolver(phi, lam, z).solve(rhs, method=method, tol=tol, **kwargs)


def neumann_resolvent(phi, lam: float, z: float, rhs: QuadraticForm, terms: int = 30) -> QuadraticForm:
    """``sum_k z^-(k+1) L^k rhs``; converges when ``z`` exceeds the norm of ``L``."""
    term = rhs
    total = (1.0 / z) * rhs
    for k in range(1, terms):
        term = (1.0 / z) * apply_generator(term, phi, lam)
        total = total + (1.0 / z) * term
    return total


def dense_generator_matrix(phi, lam: float) -> np.ndarray:
    """Explicit matrix of the generator on the packed coefficient space."""
    n = _as_matrix(phi).shape[0]
    dim = packed_size(n)
    cols = []
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = 1.0
        cols.append(apply_generator(QuadraticForm.unpack(e, n), phi, lam).pack())
    return np.column_stack(cols)


def dense_resolvent(phi, lam: float, z: float, rhs: QuadraticForm) -> QuadraticForm:
    n = rhs.n
    mat = z * np.eye(packed_size(n)) - dense_generator_matrix(phi, lam)
    return QuadraticForm.unpack(np.linalg.solve(mat, rhs.pack()), n)


def invert_noise_shift(u: QuadraticForm, z: float, lam: float) -> QuadraticForm:
    """``(z - lam S)^{-1} u`` using that S is diagonal on the coefficient blocks.

    On the kernel (``d == 0``) the component must vanish up to round-off
    relative to the largest coefficient of ``u``.
    """
    scale = max(float(np.abs(u.alpha).max()), float(np.abs(u.beta).max()), float(np.abs(u.gamma).max()), abs(u.c))
    tiny = 1e-12 * scale

    def div(a, d):
        if d > 0:
            return a / d
        if np.any(np.abs(a) > tiny):
            raise NumericError("(z - lam S) is singular on a nonzero component")
        return np.zeros_like(a)

    diag_g = np.diag(np.diag(u.gamma))
    return QuadraticForm(
        div(u.alpha, z),
        div(u.beta, z + 2 * lam),
        div(diag_g, z) + div(u.gamma - diag_g, z + 4 * lam),
        float(div(np.array(u.c), z)),
    )


def energy_kernel_component(u: QuadraticForm, decomp: EigenDecomposition, gibbs: GaussianGibbs) -> QuadraticForm:
    """Projection of ``u`` onto the span of centered mode energies (kernel of the harmonic flow)."""
    x, w2 = decomp.xi, decomp.omega2
    T = gibbs.temperature
    coeffs = []
    for k in range(decomp.n):
        e_k = QuadraticForm(0.5 * w2[k] * np.outer(x[:, k], x[:, k]), np.zeros_like(u.beta), 0.5 * np.outer(x[:, k], x[:, k]), -T)
        coeffs.append(gibbs.covariance(u, e_k) / T**2)
    coeffs = np.asarray(coeffs)
    alpha = 0.5 * (x * (coeffs * w2)) @ x.T
    gamma = 0.5 * (x * coeffs) @ x.T
    return QuadraticForm(alpha, np.zeros_like(u.beta), gamma, -T * np.sum(coeffs))


# -- closed-form Poisson solution (fixed BC) ---------------------------------------------------


@dataclass
class PoissonSolution:
    u: QuadraticForm
    gamma_l: np.ndarray
    alpha_l: np.ndarray
    c_l: np.ndarray
    residual: float
    current_norm: float
    phi: np.ndarray

    @property
    def relative_residual(self) -> float:
        return self.residual / self.current_norm

    def commutator_error(self) -> float:
        """Frobenius-relative error of ``[phi, gamma_N] = (B - B^T)/2``."""
        n = self.phi.shape[0]
        beta = build_current_form(n, BoundaryCondition.FIXED).beta
        lhs = self.phi @ self.u.gamma - self.u.gamma @ self.phi
        rhs = (beta - beta.T) / 2
        return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs))


def bond_matrix(n: int, bond: int) -> np.ndarray:
    """Antisymmetric bond matrix for bonds ``1..N-1`` (0-based ``bond``); the boundary one for ``bond = 0``."""
    b = np.zeros((n, n))
    if bond == 0:
        b[n - 1, n - 1] = 1.0
        b[0, 0] -= 1.0
    else:
        b[bond, bond - 1] = 1.0
        b[bond - 1, bond] = -1.0
    return b


def poisson_closed_form(decomp: EigenDecomposition, bc: BoundaryCondition | str = "fixed", T: float = 1.0) -> PoissonSolution:
    """Explicit solution of ``-A_har u = J/sqrt(N)`` from the eigenmodes, fixed boundaries."""
    if BoundaryCondition.parse(bc) is not BoundaryCondition.FIXED or decomp.bc is not BoundaryCondition.FIXED:
        raise ParameterError("closed-form Poisson solution requires fixed boundaries")
    if decomp.inv_sqrt_mass is not None:
        raise ParameterError("closed-form Poisson solution assumes unit masses")
    if decomp.degenerate_pairs:
        raise DegeneracyError("closed form needs a non-degenerate spectrum")
    n = decomp.n
    if n < 2:
        raise ParameterError("need n >= 2")
    x, w2 = decomp.xi, decomp.omega2
    phi = decomp.phi_reduced
    phi = _sym(phi)
    gibbs = GaussianGibbs.from_phi(phi, T)

    gamma_l = np.empty((n, n, n))
    alpha_l = np.empty((n, n, n))
    c_l = np.empty(n)
    cum = np.cumsum(x**2, axis=0)  # cum[s, k] = sum_{j <= s} x_jk^2
    for bond in range(n):
        if bond == 0:
            weights = (x[n - 1] ** 2 - x[0] ** 2) / (4 * w2)
            g = (x * weights) @ x.T
        else:
            g = (x * cum[bond - 1]) @ x.T
            g[np.arange(bond), np.arange(bond)] -= 1.0
        g = _sym(g)
        a = _sym(phi @ g - bond_matrix(n, bond) / 2)
        gamma_l[bond] = g
        alpha_l[bond] = a
        c_l[bond] = -(np.sum(a * gibbs.cov_q) + T * np.trace(g))
    scale = -1.0 / (2 * math.sqrt(n))
    u = QuadraticForm(scale * alpha_l.sum(axis=0), np.zeros((n, n)), scale * gamma_l.sum(axis=0), scale * c_l.sum())
    current = build_current_form(n, BoundaryCondition.FIXED)
    res = apply_hamiltonian(u, phi) + current
    return PoissonSolution(u, gamma_l, alpha_l, c_l, gibbs.norm(res), gibbs.norm(current), phi)


# -- localization statistics of the Poisson solution -------------------------------------------------------


@dataclass
class DecayFit:
    distance: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    rate: float
    rate_stderr: float
    window: tuple[int, int]


@dataclass
class BondDecayStats:
    gamma: DecayFit
    alpha: DecayFit
    max_abs_gamma: float
    n: int
    n_draws: int


def bond_distance(n: int) -> np.ndarray:
    """``d[l, j, k] = |j - l| + |k - l|``, with distance to the nearer end for the boundary bond."""
    idx = np.arange(n)
    d = np.abs(idx[None, :, None] - idx[:, None, None]) + np.abs(idx[None, None, :] - idx[:, None, None])
    edge = np.minimum(idx, n - 1 - idx)
    d[0] = edge[:, None] + edge[None, :]
    return d


def _decay_fit(per_draw: np.ndarray, window: tuple[int, int]) -> DecayFit:
    mean = per_draw.mean(axis=0)
    err = per_draw.std(axis=0, ddof=1) / math.sqrt(per_draw.shape[0])
    dist = np.arange(mean.size)
    lo, hi = window
    sel = (dist >= lo) & (dist <= hi) & (mean > 0)
    # even and odd distances sit on two parallel lines; fit one rate with two offsets
    fit = stats.common_slope_fit(dist[sel], -np.log(mean[sel]), dist[sel] % 2)
    return DecayFit(dist, mean, err, fit.slope, fit.slope_stderr, window)


def exponential_bound_stats(solutions: Sequence[PoissonSolution], window: tuple[int, int] | None = None, min_draws: int = 20) -> BondDecayStats:
    """Disorder-averaged squared entries of the bond matrices versus distance to the bond."""
    if len(solutions) < min_draws:
        raise ParameterError(f"need at least {min_draws} disorder draws")
    n = solutions[0].u.n
    if any(s.u.n != n for s in solutions):
        raise ParameterError("all solutions must share the chain length")
    dist = bond_distance(n).ravel()
    n_bins = int(dist.max()) + 1
    counts = np.bincount(dist, minlength=n_bins)
    g2 = np.empty((len(solutions), n_bins))
    a2 = np.empty_like(g2)
    max_g = 0.0
    for i, s in enumerate(solutions):
        g2[i] = np.bincount(dist, weights=(s.gamma_l**2).ravel(), minlength=n_bins) / counts
        a2[i] = np.bincount(dist, weights=(s.alpha_l**2).ravel(), minlength=n_bins) / counts
        max_g = max(max_g, float(np.abs(s.gamma_l[1:]).max()))
    window = window or (max(1, n // 8), n // 2)
    return BondDecayStats(_decay_fit(g2, window), _decay_fit(a2, window), max_g, n, len(solutions))


# -- size dependence of the Poisson solution ---------------------------------------------------------------


def anharmonic_flow(u: QuadraticForm, q, p, bc: BoundaryCondition | str, potential: AnharmonicPotential) -> np.ndarray:
    """Anharmonic Liouville part applied to ``u``, evaluated at samples: ``<F(q), d_p u>``."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    force = anharmonic_force(q, BoundaryCondition.parse(bc), potential)
    grad_p = q @ u.beta + 2 * p @ u.gamma
    return np.sum(force * grad_p, axis=-1)


@dataclass
class NormBoundRow:
    n: int
    u_norm2: float
    u_norm2_stderr: float
    anh_norm2: float
    anh_norm2_stderr: float


@dataclass
class NormBounds:
    rows: list
    max_relative_change: float = 0.2

    @property
    def relative_change(self) -> float:
        """Relative change of the largest-N pair, over both norms when available."""
        if len(self.rows) < 2:
            return 0.0
        a, b = self.rows[-2], self.rows[-1]
        changes = [abs(b.u_norm2 - a.u_norm2) / abs(a.u_norm2)]
        if math.isfinite(a.anh_norm2) and math.isfinite(b.anh_norm2):
            changes.append(abs(b.anh_norm2 - a.anh_norm2) / abs(a.anh_norm2))
        return max(changes)

    @property
    def bounded(self) -> bool:
        return self.relative_change < self.max_relative_change


def norm_bounds_u(
    sizes: Sequence[int],
    n_disorder: int,
    seed: int = 0,
    nu_range: tuple[float, float] = (1.0, 2.0),
    temperature: float = 1.0,
    lambda_prime: float = 0.0,
    potential: AnharmonicPotential | None = None,
    n_samples: int = 2000,
    burn_in: int = 2000,
) -> NormBounds:
    """Disorder-averaged ``|u_N|^2`` (exact Gaussian pairing) and, for ``lambda_prime > 0``,
    a Monte Carlo estimate of ``|A_anh u_N|^2`` under the anharmonic Gibbs measure."""
    if n_disorder < 2:
        raise ParameterError("need at least two disorder draws")
    if lambda_prime > 0 and potential is None:
        potential = AnharmonicPotential()
    rows = []
    for n in sizes:
        u2, anh = [], []
        for i in range(n_disorder):
            d = sample_disorder(n, *nu_range, seed=seed, index=i)
            phi = build_phi(d, BoundaryCondition.FIXED)
            sol = poisson_closed_form(eigendecompose(phi), T=temperature)
            gibbs = GaussianGibbs.from_phi(sol.phi, temperature)
            u2.append(gibbs.norm(sol.u) ** 2)
            if lambda_prime > 0:
                params = GibbsParams(temperature, lambda_prime, potential, burn_in=burn_in)
                x = sample_gibbs(phi, params, rngmod.stream(seed, rngmod.AUX, n, i), size=n_samples)
                anh.append(float(np.mean(anharmonic_flow(sol.u, x.q, x.p, "fixed", potential) ** 2)))
        m_u, e_u = stats.jackknife_mean(u2)
        m_a, e_a = stats.jackknife_mean(anh) if anh else (math.nan, math.nan)
        rows.append(NormBoundRow(int(n), m_u, e_u, m_a, e_a))
    return NormBounds(rows)
