"""Disordered pinned chain: disorder, coupling matrix, Gibbs sampling, observables.

Conventions used throughout the package:

* Fixed boundaries act as walls at rest (``q_0 = q_{N+1} = 0``), so every
  diagonal entry of the coupling matrix is ``2 + nu_k``.
* Periodic boundaries close the chain into a ring.
* Arrays of states are batched along leading axes; the site index is always
  the last axis.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import NumericError, ParameterError
from .potentials import AnharmonicPotential
from . import rng as rngmod


class BoundaryCondition(str, enum.Enum):
    FIXED = "fixed"
    PERIODIC = "periodic"

    @classmethod
    def parse(cls, value: "BoundaryCondition | str") -> "BoundaryCondition":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError as exc:
            raise ParameterError(f"unknown boundary condition {value!r}") from exc


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DisorderRealization:
    """Pinning strengths (and optional masses) for one disorder draw.

    ``masses=None`` means unit masses. With masses present the pinning may
    vanish identically (unpinned variant).
    """

    nu: np.ndarray
    masses: np.ndarray | None = None
    seed: int = 0
    law: str = "uniform"
    index: int = 0

    def __post_init__(self):
        nu = _readonly(np.atleast_1d(self.nu))
        if nu.ndim != 1 or nu.size < 1:
            raise ParameterError("nu must be a non-empty vector")
        if not np.all(np.isfinite(nu)):
            raise ParameterError("nu must be finite")
        object.__setattr__(self, "nu", nu)
        if self.masses is None:
            if np.any(nu <= 0):
                raise ParameterError("pinning must be strictly positive when masses are absent")
        else:
            m = _readonly(np.atleast_1d(self.masses))
            if m.shape != nu.shape:
                raise ParameterError("masses and nu must have the same length")
            if not np.all(np.isfinite(m)) or np.any(m <= 0):
                raise ParameterError("masses must be finite and positive")
            if np.any(nu < 0):
                raise ParameterError("pinning must be nonnegative")
            object.__setattr__(self, "masses", m)

    @property
    def n(self) -> int:
        return self.nu.size

    @property
    def mass_vector(self) -> np.ndarray:
        return np.ones(self.n) if self.masses is None else self.masses

    def __eq__(self, other):
        if not isinstance(other, DisorderRealization):
            return NotImplemented
        same_m = (self.masses is None and other.masses is None) or (
            self.masses is not None
            and other.masses is not None
            and np.array_equal(self.masses, other.masses)
        )
        return (
            np.array_equal(self.nu, other.nu)
            and same_m
            and (self.seed, self.law, self.index) == (other.seed, other.law, other.index)
        )

    __hash__ = None


def sample_disorder(
    n: int,
    nu_minus: float,
    nu_plus: float,
    mass_law: tuple[float, float] | None = None,
    seed: int = 0,
    index: int = 0,
) -> DisorderRealization:
    """Draw i.i.d. uniform pinnings on ``[nu_minus, nu_plus]``.

    Args:
        n: chain length.
        nu_minus, nu_plus: pinning interval. Both may be 0 when ``mass_law`` is given.
        mass_law: optional ``(m_min, m_max)``; masses drawn i.i.d. uniform on it.
        seed: run seed.
        index: disorder-draw index; ``(seed, index)`` fixes the draw.
    """
    if int(n) != n or n < 1:
        raise ParameterError("n must be a positive integer")
    if nu_minus > nu_plus:
        raise ParameterError("nu_minus must not exceed nu_plus")
    if mass_law is None and nu_minus <= 0:
        raise ParameterError("nu_minus must be positive for the pinned chain")
    if nu_minus < 0:
        raise ParameterError("nu_minus must be nonnegative")
    g = rngmod.stream(seed, rngmod.DISORDER, index)
    nu = g.uniform(nu_minus, nu_plus, size=int(n)) if nu_plus > nu_minus else np.full(int(n), float(nu_minus))
    masses = None
    if mass_law is not None:
        m_lo, m_hi = map(float, mass_law)
        if not 0 < m_lo <= m_hi:
            raise ParameterError("mass law needs 0 < m_min <= m_max")
        masses = g.uniform(m_lo, m_hi, size=int(n)) if m_hi > m_lo else np.full(int(n), m_lo)
    return DisorderRealization(nu=nu, masses=masses, seed=seed, law="uniform", index=index)


def ordered_disorder(n: int, nu: float = 1.0) -> DisorderRealization:
    return DisorderRealization(nu=np.full(int(n), float(nu)), law="constant")


# -- serialization -----------------------------------------------------------

_HEADER = "# disorder-realization v1"


def dumps_disorder(disorder: DisorderRealization, bc: BoundaryCondition | str | None = None) -> str:
    """Line-oriented text form with shortest round-trip decimals."""
    lines = [_HEADER, f"n = {disorder.n}"]
    if bc is not None:
        lines.append(f"bc = {BoundaryCondition.parse(bc).value}")
    lines += [f"law = {disorder.law}", f"seed = {disorder.seed}", f"index = {disorder.index}"]
    if disorder.masses is None:
        lines.append("columns = nu")
        lines += [repr(float(x)) for x in disorder.nu]
    else:
        lines.append("columns = nu mass")
        lines += [f"{float(a)!r} {float(b)!r}" for a, b in zip(disorder.nu, disorder.masses)]
    return "\n".join(lines) + "\n"


def loads_disorder(text: str) -> tuple[DisorderRealization, BoundaryCondition | None]:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != _HEADER:
        raise ParameterError("not a disorder-realization file")
    meta: dict[str, str] = {}
    i = 1
    while i < len(lines) and "=" in lines[i]:
        key, val = (s.strip() for s in lines[i].split("=", 1))
        meta[key] = val
        i += 1
    rows = [ln.split() for ln in lines[i:]]
    n = int(meta["n"])
    if len(rows) != n:
        raise ParameterError(f"expected {n} rows, found {len(rows)}")
    nu = np.array([float(r[0]) for r in rows])
    masses = np.array([float(r[1]) for r in rows]) if meta.get("columns") == "nu mass" else None
    bc = BoundaryCondition.parse(meta["bc"]) if "bc" in meta else None
    d = DisorderRealization(
        nu=nu, masses=masses, seed=int(meta.get("seed", 0)), law=meta.get("law", "uniform"),
        index=int(meta.get("index", 0)),
    )
    return d, bc


def save_disorder(path, disorder, bc=None) -> None:
    Path(path).write_text(dumps_disorder(disorder, bc))


def load_disorder(path):
    return loads_disorder(Path(path).read_text())


# -- coupling matrix -------------------------------------------------------------


@dataclass(frozen=True)
class CouplingMatrix:
    matrix: np.ndarray
    bc: BoundaryCondition

    def __post_init__(self):
        object.__setattr__(self, "matrix", _readonly(self.matrix))
        object.__setattr__(self, "bc", BoundaryCondition.parse(self.bc))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def nu(self) -> np.ndarray:
        """Pinning recovered from the diagonal."""
        return np.diag(self.matrix) - 2.0


def build_phi(disorder: DisorderRealization, bc: BoundaryCondition | str) -> CouplingMatrix:
    """Coupling matrix ``2 + nu_k`` on the diagonal, ``-1`` between neighbours."""
    bc = BoundaryCondition.parse(bc)
    n = disorder.n
    if bc is BoundaryCondition.PERIODIC and n < 2:
        raise ParameterError("periodic chain needs n >= 2")
    phi = np.diag(2.0 + disorder.nu)
    idx = np.arange(n - 1)
    phi[idx, idx + 1] -= 1.0
    phi[idx + 1, idx] -= 1.0
    if bc is BoundaryCondition.PERIODIC:
        phi[0, n - 1] -= 1.0
        phi[n - 1, 0] -= 1.0
    return CouplingMatrix(phi, bc)


def gaussian_covariance(phi: CouplingMatrix | np.ndarray, temperature: float = 1.0, rtol: float = 1e-12) -> np.ndarray:
    """Position covariance ``T * inv(phi)``.

    Eigenvalues below ``rtol`` times the largest are treated as zero modes
    and dropped (pseudo-inverse), which is the covariance restricted to the
    complement of the translation mode of an unpinned ring.
    """
    m = phi.matrix if isinstance(phi, CouplingMatrix) else np.asarray(phi, dtype=float)
    w, v = linalg.eigh(m)
    keep = w > rtol * np.abs(w).max()
    if np.any(w[~keep] < -rtol * np.abs(w).max()):
        raise NumericError("coupling matrix is not positive semi-definite")
    inv = (v[:, keep] / w[keep]) @ v[:, keep].T
    return temperature * (inv + inv.T) / 2


# -- states and Gibbs sampling ---------------------------------------------------


@dataclass
class ChainState:
    """Positions and momenta; arrays of shape ``(..., N)``."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.q.shape != self.p.shape:
            raise ParameterError("q and p must have the same shape")

    @property
    def n(self) -> int:
        return self.q.shape[-1]

    def copy(self) -> "ChainState":
        return ChainState(self.q.copy(), self.p.copy())

    def flipped(self, site: int) -> "ChainState":
        p = self.p.copy()
        p[..., site] *= -1
        return ChainState(self.q.copy(), p)


@dataclass(frozen=True)
class GibbsParams:
    temperature: float = 1.0
    lambda_prime: float = 0.0
    potential: AnharmonicPotential | None = None
    burn_in: int = 2000
    thin: int = 10
    target_acceptance: float = 0.4

    def __post_init__(self):
        if not self.temperature > 0:
            raise ParameterError("temperature must be positive")
        if self.lambda_prime < 0:
            raise ParameterError("lambda_prime must be nonnegative")
        if self.lambda_prime > 0 and self.potential is None:
            raise ParameterError("lambda_prime > 0 requires an anharmonic potential")
        if self.burn_in < 0 or self.thin < 1:
            raise ParameterError("burn_in >= 0 and thin >= 1 required")


def sample_gibbs(
    phi: CouplingMatrix,
    params: GibbsParams,
    rng: np.random.Generator,
    *,
    masses: np.ndarray | None = None,
    size: int | None = None,
) -> ChainState:
    """Sample the Gibbs measure; ``size`` adds a leading batch axis."""
    n = phi.n
    shape = (n,) if size is None else (int(size), n)
    m = np.ones(n) if masses is None else np.asarray(masses, dtype=float)
    T = params.temperature
    p = rng.standard_normal(shape) * np.sqrt(T * m)
    if params.lambda_prime == 0:
        try:
            chol = linalg.cholesky(phi.matrix / T, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericError("coupling matrix is not positive definite") from exc
        g = rng.standard_normal(shape)
        # q = L^{-T} g has covariance (L L^T)^{-1} = T phi^{-1}
        q = linalg.solve_triangular(chol, g.T, lower=True, trans="T").T
    else:
        q = metropolis_positions(phi, params, rng, n_chains=1 if size is None else int(size))
        q = q.reshape(shape)
    return ChainState(q, p)


def _neighbours(x: np.ndarray, bc: BoundaryCondition) -> tuple[np.ndarray, np.ndarray]:
    """Left and right neighbour arrays; fixed walls read as zero."""
    if bc is BoundaryCondition.PERIODIC:
        return np.roll(x, 1, axis=-1), np.roll(x, -1, axis=-1)
    left = np.zeros_like(x)
    right = np.zeros_like(x)
    left[..., 1:] = x[..., :-1]
    right[..., :-1] = x[..., 1:]
    return left, right


def anharmonic_energy(q: np.ndarray, bc: BoundaryCondition, potential: AnharmonicPotential) -> np.ndarray:
    """``sum U(q_k) + sum over bonds V(q_{k+1} - q_k)`` including wall bonds for fixed BC."""
    _, right = _neighbours(q, bc)
    total = potential.U(q).sum(axis=-1) + potential.V(right - q).sum(axis=-1)
    if bc is BoundaryCondition.FIXED:
        total = total + potential.V(q[..., 0])
    return total


def anharmonic_force(q: np.ndarray, bc: BoundaryCondition, potential: AnharmonicPotential) -> np.ndarray:
    """Minus the gradient of :func:`anharmonic_energy`."""
    left, right = _neighbours(q, bc)
    return -potential.dU(q) + potential.dV(right - q) - potential.dV(q - left)


def metropolis_positions(
    phi: CouplingMatrix,
    params: GibbsParams,
    rng: np.random.Generator,
    n_chains: int,
    samples_per_chain: int = 1,
) -> np.ndarray:
    """Random-walk Metropolis on positions, one site at a time, vectorized over chains.

    The per-site step is tuned during burn-in towards the target acceptance
    and frozen afterwards. Returns ``(n_chains * samples_per_chain, N)``.
    """
    n, T, lp = phi.n, params.temperature, params.lambda_prime
    pot = params.potential
    bc = phi.bc
    a = phi.matrix
    diag = np.diag(a).copy()
    q = rng.standard_normal((n_chains, n)) * np.sqrt(T / diag)
    step = 2.4 * np.sqrt(T / diag)
    rows = np.arange(n_chains)

    def site_energy(qk, k, qs):
        # energy terms depending on q_k, other sites held at qs
        lin = qs @ a[:, k] - qs[:, k] * a[k, k]
        e = 0.5 * a[k, k] * qk**2 + qk * lin
        if lp > 0:
            if bc is BoundaryCondition.PERIODIC:
                ql, qr = qs[:, (k - 1) % n], qs[:, (k + 1) % n]
                bonds = pot.V(qr - qk) + pot.V(qk - ql)
            else:
                ql = qs[:, k - 1] if k > 0 else 0.0
                qr = qs[:, k + 1] if k < n - 1 else 0.0
                bonds = pot.V(qr - qk) + pot.V(qk - ql)
            e = e + lp * (pot.U(qk) + bonds)
        return e

    def sweep():
        accepted = np.zeros(n)
        for k in range(n):
            old = q[:, k].copy()
            prop = old + step[k] * rng.uniform(-1.0, 1.0, n_chains)
            d_e = site_energy(prop, k, q) - site_energy(old, k, q)
            u = rng.random(n_chains)
            acc = np.log(u) < -d_e / T
            q[rows[acc], k] = prop[acc]
            accepted[k] = acc.mean()
        return accepted

    window = 25
    acc_sum = np.zeros(n)
    for s in range(params.burn_in):
        acc_sum += sweep()
        if (s + 1) % window == 0:
            step *= np.exp(acc_sum / window - params.target_acceptance)
            acc_sum[:] = 0
    out = np.empty((n_chains, samples_per_chain, n))
    for i in range(samples_per_chain):
        for _ in range(params.thin if i > 0 else 1):
            sweep()
        out[:, i] = q
    return out.reshape(-1, n)


# -- observables ---------------------------------------------------------------------


@dataclass
class Observables:
    energy: np.ndarray
    current: np.ndarray
    total_current: np.ndarray
    scaled_current: np.ndarray
    hamiltonian: np.ndarray


def _wall_weights(n: int, bc: BoundaryCondition) -> tuple[np.ndarray, np.ndarray]:
    wl = np.ones(n)
    wr = np.ones(n)
    if bc is BoundaryCondition.FIXED:
        wl[0] = 2.0
        wr[-1] = 2.0
    return wl, wr


def hamiltonian(
    state: ChainState,
    disorder: DisorderRealization,
    bc: BoundaryCondition | str,
    lambda_prime: float = 0.0,
    potential: AnharmonicPotential | None = None,
) -> np.ndarray:
    """Total energy from the quadratic form ``p M^-1 p/2 + q Phi q/2`` plus anharmonic part."""
    bc = BoundaryCondition.parse(bc)
    phi = build_phi(disorder, bc).matrix
    q, p = state.q, state.p
    h = 0.5 * np.sum(p * p / disorder.mass_vector, axis=-1) + 0.5 * np.einsum("...i,ij,...j->...", q, phi, q)
    if lambda_prime > 0:
        if potential is None:
            raise ParameterError("lambda_prime > 0 requires a potential")
        h = h + lambda_prime * anharmonic_energy(q, bc, potential)
    return h


def observables(
    state: ChainState,
    disorder: DisorderRealization,
    bc: BoundaryCondition | str,
    lambda_prime: float = 0.0,
    potential: AnharmonicPotential | None = None,
) -> Observables:
    """Local energies, local currents and totals.

    Bond energies are split evenly between the two sites; a wall bond belongs
    entirely to its boundary site, so the local energies sum to the
    Hamiltonian. ``current[k]`` is the flow from site k to k+1; for fixed BC
    the last entry is the (vanishing) wall current.
    """
    bc = BoundaryCondition.parse(bc)
    if lambda_prime > 0 and potential is None:
        raise ParameterError("lambda_prime > 0 requires a potential")
    q, p = state.q, state.p
    n = q.shape[-1]
    if q.shape[-1] != disorder.n:
        raise ParameterError("state and disorder lengths differ")
    v = p / disorder.mass_vector
    ql, qr = _neighbours(q, bc)
    vl, vr = _neighbours(v, bc)
    wl, wr = _wall_weights(n, bc)
    e = 0.5 * p * v + 0.5 * disorder.nu * q**2 + 0.25 * wl * (q - ql) ** 2 + 0.25 * wr * (qr - q) ** 2
    j = 0.5 * (v + vr) * (q - qr)
    if lambda_prime > 0:
        e = e + lambda_prime * (
            potential.U(q) + 0.5 * wl * potential.V(q - ql) + 0.5 * wr * potential.V(qr - q)
        )
        j = j + lambda_prime * 0.5 * (v + vr) * potential.dV(q - qr)
    if bc is BoundaryCondition.FIXED:
        j = j.copy()
        j[..., -1] = 0.0
    total = j.sum(axis=-1)
    return Observables(
        energy=e,
        current=j,
        total_current=total,
        scaled_current=total / math.sqrt(n),
        hamiltonian=hamiltonian(state, disorder, bc, lambda_prime, potential),
    )


def current_matrix(n: int, bc: BoundaryCondition | str) -> np.ndarray:
    """Matrix ``B`` with total harmonic current ``J = <q, B v>`` (``v`` velocities)."""
    bc = BoundaryCondition.parse(bc)
    b = np.zeros((n, n))
    idx = np.arange(n - 1)
    b[idx, idx + 1] += 0.5
    b[idx + 1, idx] -= 0.5
    if bc is BoundaryCondition.PERIODIC:
        b[n - 1, 0] += 0.5
        b[0, n - 1] -= 0.5
    else:
        b[0, 0] += 0.5
        b[n - 1, n - 1] -= 0.5
    return b
