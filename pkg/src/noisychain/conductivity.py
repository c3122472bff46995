"""Green-Kubo conductivity by trajectories and by resolvent solves, plus derived experiments.

Normalization: the Monte Carlo estimator is ``E[(int_0^t J ds)^2] / (t T^2)``
with ``J`` the rescaled total current. Its long-time limit equals
``2 mu(J (-L)^{-1} J) / T^2``, so the resolvent route carries the factor 2.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import linalg as sparse_linalg

from .chain import (
    BoundaryCondition,
    CouplingMatrix,
    DisorderRealization,
    GibbsParams,
    build_phi,
    sample_disorder,
    sample_gibbs,
)
from .dynamics import (
    NoiseParams,
    default_dt,
    integrate_current_interval,
    simulate_anharmonic,
    simulate_harmonic_flip,
)
from .errors import DegeneracyWarning, NumericError, ParameterError
from .potentials import AnharmonicPotential
from .quadforms import (
    GaussianGibbs,
    QuadraticForm,
    ResolventSolver,
    apply_hamiltonian,
    apply_noise,
    build_current_form,
    dense_generator_matrix,
    invert_noise_shift,
    poisson_closed_form,
)
from .spectral import eigendecompose
from . import rng as rngmod
from . import stats

VARIANTS = ("pinned-disordered", "pinned-ordered", "unpinned-mass-disordered", "unpinned-ordered")
DEFAULT_Z_FACTORS = (1e-1, 1e-2, 1e-3)


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Order-preserving map; results never depend on ``threads``."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class ChainSpec:
    """Which chain to build for each disorder index.

    Ordered variants use constant pinning ``nu_min`` (pinned) or zero
    pinning with unit masses (unpinned); mass disorder draws masses
    uniformly on ``[mass_min, mass_max]`` with zero pinning.
    """

    n: int
    bc: BoundaryCondition = BoundaryCondition.PERIODIC
    variant: str = "pinned-disordered"
    nu_min: float = 1.0
    nu_max: float = 2.0
    mass_min: float = 1.0
    mass_max: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "bc", BoundaryCondition.parse(self.bc))
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown variant {self.variant!r}")
        if self.n < 2:
            raise ParameterError("n must be at least 2")

    @property
    def ordered(self) -> bool:
        return self.variant.endswith("ordered") and not self.variant.endswith("disordered")

    def realization(self, seed: int, index: int) -> DisorderRealization:
        if self.variant == "pinned-disordered":
            return sample_disorder(self.n, self.nu_min, self.nu_max, seed=seed, index=index)
        if self.variant == "pinned-ordered":
            return sample_disorder(self.n, self.nu_min, self.nu_min, seed=seed, index=index)
        if self.variant == "unpinned-mass-disordered":
            return sample_disorder(self.n, 0.0, 0.0, mass_law=(self.mass_min, self.mass_max), seed=seed, index=index)
        return sample_disorder(self.n, 0.0, 0.0, mass_law=(1.0, 1.0), seed=seed, index=index)

    def draws(self, n_disorder: int) -> int:
        return 1 if self.ordered else n_disorder


@dataclass
class KappaEstimate:
    value: float
    stderr: float
    method: str
    params: dict
    n_disorder: int
    n_trajectories: int = 0
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise NumericError("non-finite conductivity estimate")
        if self.method not in ("mc", "resolvent"):
            raise ParameterError("method must be 'mc' or 'resolvent'")

    def row(self) -> dict:
        out = {"method": self.method, "value": self.value, "stderr": self.stderr}
        out.update(self.params)
        out["n_disorder"] = self.n_disorder
        out["n_trajectories"] = self.n_trajectories
        return out


def _reduced(phi: CouplingMatrix, masses):
    """Mass-reduced coupling matrix and current form."""
    n = phi.n
    if masses is None or np.all(np.asarray(masses) == 1.0):
        return phi.matrix, build_current_form(n, phi.bc)
    d = 1.0 / np.sqrt(np.asarray(masses, dtype=float))
    return d[:, None] * phi.matrix * d[None, :], build_current_form(n, phi.bc, masses)


# -- Monte Carlo --------------------------------------------------------------------------------


@dataclass(frozen=True)
class MCConfig:
    chain: ChainSpec
    lam: float
    t_end: float
    n_disorder: int
    n_trajectories: int
    lambda_prime: float = 0.0
    temperature: float = 1.0
    seed: int = 0
    potential: AnharmonicPotential | None = None
    dt: float | None = None
    burn_in: int = 500
    threads: int = 1

    def __post_init__(self):
        if self.n_disorder < 1 or self.n_trajectories < 1:
            raise ParameterError("ensemble sizes must be positive")
        if self.lam < 0 or self.lambda_prime < 0:
            raise ParameterError("rates must be nonnegative")
        if self.t_end <= 0:
            raise ParameterError("t_end must be positive")
        if not self.temperature > 0:
            raise ParameterError("temperature must be positive")
        if self.lambda_prime > 0 and self.potential is None:
            raise ParameterError("lambda_prime > 0 requires a potential")


def mc_draw_samples(config: MCConfig, index: int) -> np.ndarray:
    """``(int J)^2 / (t T^2)`` for every trajectory of disorder draw ``index``."""
    spec = config.chain
    disorder = spec.realization(config.seed, index)
    phi = build_phi(disorder, spec.bc)
    T = config.temperature
    gibbs_rng = rngmod.stream(config.seed, rngmod.GIBBS, index)
    noise_rng = rngmod.stream(config.seed, rngmod.NOISE, index)
    R = config.n_trajectories
    if config.lambda_prime == 0:
        params = GibbsParams(temperature=T)
        x0 = sample_gibbs(phi, params, gibbs_rng, masses=disorder.masses, size=R)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegeneracyWarning)
            decomp = eigendecompose(phi, disorder.masses)
        res = simulate_harmonic_flip(x0, decomp, config.lam, config.t_end, noise_rng)
    else:
        params = GibbsParams(T, config.lambda_prime, config.potential, burn_in=config.burn_in)
        x0 = sample_gibbs(phi, params, gibbs_rng, masses=disorder.masses, size=R)
        dt = config.dt or default_dt(spec.nu_max)
        res = simulate_anharmonic(
            x0, disorder, spec.bc, NoiseParams(config.lam, config.lambda_prime), config.potential,
            dt, config.t_end, noise_rng,
        )
    return res.integrated_current**2 / (config.t_end * T * T)


def estimate_kappa_mc(config: MCConfig) -> KappaEstimate:
    """Disorder-averaged Green-Kubo estimate from Gibbs-started trajectories."""
    n_draws = config.chain.draws(config.n_disorder)
    samples = np.stack(parallel_map(lambda i: mc_draw_samples(config, i), list(range(n_draws)), config.threads))
    if n_draws == 1:
        mean = float(np.mean(samples))
        err = float(np.std(samples, ddof=1) / math.sqrt(samples.size)) if samples.size > 1 else 0.0
        nested = stats.NestedEstimate(mean, err, 0.0, err**2)
    else:
        nested = stats.nested_mean(samples)
    params = {
        "variant": config.chain.variant,
        "n": config.chain.n,
        "bc": config.chain.bc.value,
        "lam": config.lam,
        "lambda_prime": config.lambda_prime,
        "temperature": config.temperature,
        "t": config.t_end,
    }
    return KappaEstimate(
        nested.mean, nested.stderr, "mc", params, n_draws, config.n_trajectories,
        {"between_var": nested.between_var, "within_var": nested.within_var, "draw_means": samples.mean(axis=1)},
    )


# -- resolvent ----------------------------------------------------------------------------------------


def resolvent_pairings(phi: CouplingMatrix, lam: float, z_values, temperature: float = 1.0, masses=None, method: str = "direct") -> np.ndarray:
    """``mu_T(J u_z)`` with ``(z - L) u_z = J`` for each ``z`` (``J`` rescaled current)."""
    a, current = _reduced(phi, masses)
    gibbs = GaussianGibbs.from_phi(a, temperature)
    out = []
    for z in z_values:
        u = ResolventSolver(a, lam, z).solve(current, method=method)
        out.append(gibbs.pairing(current, u))
    return np.asarray(out)


def estimate_kappa_resolvent(
    phi: CouplingMatrix,
    lam: float,
    z_sequence: Sequence[float] | None = None,
    temperature: float = 1.0,
    masses=None,
    method: str = "direct",
) -> KappaEstimate:
    """Conductivity ``2 mu(J (z-L)^{-1} J) / T^2`` extrapolated to ``z -> 0``.

    Two-point Richardson extrapolation on the two smallest ``z``; the
    distance to the smallest-``z`` value is reported as ``stderr``.
    """
    if not lam > 0:
        raise ParameterError("the resolvent estimator needs lambda > 0")
    z = np.asarray(z_sequence if z_sequence is not None else [f * lam for f in DEFAULT_Z_FACTORS], dtype=float)
    if z.size < 2 or np.any(z <= 0):
        raise ParameterError("need at least two positive z values")
    kz = 2 * resolvent_pairings(phi, lam, z, temperature, masses, method) / temperature**2
    value, spread = stats.richardson(z, kz)
    params = {"n": phi.n, "bc": phi.bc.value, "lam": lam, "lambda_prime": 0.0, "temperature": temperature, "z_min": float(z.min())}
    return KappaEstimate(value, spread, "resolvent", params, 1, 0, {"z": z.tolist(), "kappa_z": kz.tolist()})


def disorder_averaged_resolvent(
    spec: ChainSpec,
    lam: float,
    n_disorder: int,
    seed: int = 0,
    z_factors: Sequence[float] = DEFAULT_Z_FACTORS,
    temperature: float = 1.0,
    threads: int = 1,
) -> KappaEstimate:
    """Mean over disorder draws of the extrapolated resolvent conductivity."""
    n_draws = spec.draws(n_disorder)
    z = [f * lam for f in z_factors]

    def one(i):
        d = spec.realization(seed, i)
        return estimate_kappa_resolvent(build_phi(d, spec.bc), lam, z, temperature, d.masses)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegeneracyWarning)
        ests = parallel_map(one, list(range(n_draws)), threads)
    values = np.array([e.value for e in ests])
    spreads = np.array([e.stderr for e in ests])
    if n_draws > 1:
        mean, se = stats.jackknife_mean(values)
    else:
        mean, se = float(values[0]), 0.0
    params = {"variant": spec.variant, "n": spec.n, "bc": spec.bc.value, "lam": lam, "lambda_prime": 0.0,
              "temperature": temperature, "z_min": float(min(z))}
    return KappaEstimate(mean, se, "resolvent", params, n_draws, 0,
                         {"extrapolation_spread": float(np.mean(spreads)), "draw_values": values})


def exact_finite_time_kappa(phi: CouplingMatrix, lam: float, t: float, temperature: float = 1.0, masses=None) -> float:
    """Exact ``E[(int_0^t J)^2] / (t T^2)`` from the generator on quadratic forms.

    Integrates ``2 int_0^t (t - s) mu(J e^{sL} J) ds`` with one matrix
    exponential of an augmented dense generator; intended for small chains.
    """
    if not t > 0:
        raise ParameterError("t must be positive")
    a, current = _reduced(phi, masses)
    gen = dense_generator_matrix(a, lam)
    dim = gen.shape[0]
    zero, eye = np.zeros((dim, dim)), np.eye(dim)
    big = np.block([[gen, zero, zero], [eye, zero, zero], [zero, eye, zero]])
    start = np.concatenate([current.pack(), np.zeros(2 * dim)])
    v = sparse_linalg.expm_multiply(big * t, start)[2 * dim :]
    gibbs = GaussianGibbs.from_phi(a, temperature)
    return 2 * gibbs.pairing(current, QuadraticForm.unpack(v, phi.n)) / (t * temperature**2)


# -- scaling sweeps -------------------------------------------------------------------------------


@dataclass
class SweepResult:
    estimates: list
    slope: float
    slope_stderr: float
    intercept: float

    def summary(self) -> dict:
        return {"slope": self.slope, "slope_stderr": self.slope_stderr, "intercept": self.intercept,
                "lambdas": [e.params["lam"] for e in self.estimates]}


def loglog_slope(x, y) -> stats.LinearFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise NumericError("nonpositive values cannot be fitted on a log scale")
    return stats.linear_fit(np.log(x), np.log(y))


def check_grid(lams: Sequence[float]) -> None:
    lams = np.asarray(lams, dtype=float)
    if np.unique(lams).size < 2 or np.any(lams <= 0) or math.log10(lams.max() / lams.min()) < 0.5:
        raise ParameterError("lambda grid must contain positive values spanning at least half a decade")


def scaling_sweep(
    spec: ChainSpec,
    lams: Sequence[float],
    n_disorder: int,
    seed: int = 0,
    method: str = "resolvent",
    z_factors: Sequence[float] = DEFAULT_Z_FACTORS,
    temperature: float = 1.0,
    threads: int = 1,
    mc_options: dict | None = None,
) -> SweepResult:
    """Conductivity over a lambda grid and its log-log slope."""
    check_grid(lams)
    ests = []
    for lam in lams:
        if method == "resolvent":
            ests.append(disorder_averaged_resolvent(spec, lam, n_disorder, seed, z_factors, temperature, threads))
        elif method == "mc":
            opts = dict(mc_options or {})
            ests.append(estimate_kappa_mc(MCConfig(spec, lam, n_disorder=n_disorder, seed=seed,
                                                   temperature=temperature, threads=threads, **opts)))
        else:
            raise ParameterError(f"unknown method {method!r}")
    fit = loglog_slope(lams, [e.value for e in ests])
    return SweepResult(ests, fit.slope, fit.slope_stderr, fit.intercept)


# -- perfect insulator ------------------------------------------------------------------------------


@dataclass
class InsulatorResult:
    t_values: np.ndarray
    variance: np.ndarray
    stderr: np.ndarray
    slope: float
    slope_stderr: float
    max_abs_integral: float
    reference_abs_integral: float
    reference_time: float

    @property
    def growth_ratio(self) -> float:
        return self.max_abs_integral / self.reference_abs_integral

    def table(self):
        header = ["t", "variance", "stderr"]
        return header, [[float(t), float(v), float(e)] for t, v, e in zip(self.t_values, self.variance, self.stderr)]


def insulator_decay(
    spec: ChainSpec,
    t_values: Sequence[float],
    n_disorder: int,
    n_samples: int,
    seed: int = 0,
    lam: float = 0.0,
    lambda_prime: float = 0.0,
    temperature: float = 1.0,
    reference_time: float = 10.0,
    grid_points: int = 301,
    threads: int = 1,
) -> InsulatorResult:
    """Variance of the integrated current without noise or anharmonicity.

    Besides the variance table, records the largest ``|int J|`` over a time
    grid on ``[0, max t]`` across all runs, and the largest value at
    ``reference_time``.
    """
    if lam != 0 or lambda_prime != 0:
        raise ParameterError("the insulator check runs without noise and anharmonicity")
    t_values = np.asarray(t_values, dtype=float)
    grid = np.linspace(0.0, t_values.max(), grid_points)
    n_draws = spec.draws(n_disorder)

    def one(i):
        d = spec.realization(seed, i)
        phi = build_phi(d, spec.bc)
        x0 = sample_gibbs(phi, GibbsParams(temperature), rngmod.stream(seed, rngmod.GIBBS, i), masses=d.masses, size=n_samples)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegeneracyWarning)
            dec = eigendecompose(phi, d.masses)
        var = np.array([np.mean(integrate_current_interval(x0, dec, t) ** 2) / (t * temperature**2) for t in t_values])
        peak = max(float(np.max(np.abs(integrate_current_interval(x0, dec, t)))) for t in grid)
        ref = float(np.max(np.abs(integrate_current_interval(x0, dec, reference_time))))
        return var, peak, ref

    out = parallel_map(one, list(range(n_draws)), threads)
    per_draw = np.stack([o[0] for o in out])
    mean = per_draw.mean(axis=0)
    if n_draws > 1:
        err = np.array([stats.jackknife_mean(per_draw[:, k])[1] for k in range(t_values.size)])
    else:
        err = np.zeros_like(mean)
    fit = loglog_slope(t_values, mean)
    return InsulatorResult(t_values, mean, err, fit.slope, fit.slope_stderr,
                           max(o[1] for o in out), max(o[2] for o in out), reference_time)


# -- variational lower bound ----------------------------------------------------------------------------


@dataclass
class LowerBound:
    bound: float
    a_opt: float
    j_term: float
    s_term: float
    a_term: float

    def objective(self, a: float) -> float:
        """Variational functional at amplitude ``a`` (normalized like ``bound``)."""
        return 2 * a * self.j_term - a * a * (self.s_term + self.a_term)


def rotation_matrix(n: int) -> np.ndarray:
    """``M`` with ``M[i, i+1] = 1``, ``M[i+1, i] = -1`` on the ring."""
    m = np.zeros((n, n))
    i = np.arange(n)
    m[i, (i + 1) % n] += 1.0
    m[(i + 1) % n, i] -= 1.0
    return m


def variational_lower_bound(phi: CouplingMatrix, lam: float, z: float, temperature: float = 1.0) -> LowerBound:
    """Lower bound on ``mu(J (z-L)^{-1} J) / (N T^2)`` from the trial function ``a <q, Phi M p>``.

    All terms are normalized by ``N T^2`` so that ``bound = j^2 / (s + a)``
    and ``objective(a_opt) = bound``.
    """
    if phi.bc is not BoundaryCondition.PERIODIC:
        raise ParameterError("the variational bound is set up for periodic boundaries")
    if not lam > 0 or z < 0:
        raise ParameterError("need lambda > 0 and z >= 0")
    n = phi.n
    if n < 3:
        raise ParameterError("need n >= 3")
    a = phi.matrix
    gibbs = GaussianGibbs.from_phi(a, temperature)
    zero = np.zeros((n, n))
    total_current = math.sqrt(n) * build_current_form(n, phi.bc)
    trial = QuadraticForm(zero, a @ rotation_matrix(n), zero, 0.0)
    norm = n * temperature**2
    j_term = gibbs.pairing(total_current, trial) / norm
    shifted = z * trial - lam * apply_noise(trial)
    s_term = gibbs.pairing(trial, shifted) / norm
    flow = apply_hamiltonian(trial, a)
    a_term = gibbs.pairing(flow, invert_noise_shift(flow, z, lam)) / norm
    denom = s_term + a_term
    return LowerBound(j_term**2 / denom, j_term / denom, j_term, s_term, a_term)


def resolvent_current_pairing(phi: CouplingMatrix, lam: float, z: float, temperature: float = 1.0) -> float:
    """``mu(J (z-L)^{-1} J) / (N T^2)`` for the unscaled total current."""
    return float(resolvent_pairings(phi, lam, [z], temperature)[0]) / temperature**2


# -- boundary-condition convergence and diagnostics ---------------------------------------------------


def bc_gap_table(n_values: Sequence[int], lam: float, z: float, n_disorder: int, seed: int = 0,
                 nu_range=(1.0, 2.0), temperature: float = 1.0) -> list[dict]:
    """Disorder-averaged ``2 mu(J u_z)/T^2`` for fixed and periodic chains at a common ``z``."""
    rows = []
    for n in n_values:
        vals = {}
        for bc in (BoundaryCondition.FIXED, BoundaryCondition.PERIODIC):
            v = []
            for i in range(n_disorder):
                d = sample_disorder(n, *nu_range, seed=seed, index=i)
                v.append(2 * resolvent_pairings(build_phi(d, bc), lam, [z], temperature)[0] / temperature**2)
            vals[bc.value] = float(np.mean(v))
        rows.append({"n": n, "fixed": vals["fixed"], "periodic": vals["periodic"],
                     "gap": abs(vals["fixed"] - vals["periodic"])})
    return rows


@dataclass
class MartingaleCheck:
    correlation: float
    correlation_stderr: float
    martingale_mean: float
    martingale_mean_stderr: float
    martingale_second_moment: float
    martingale_second_moment_stderr: float
    predicted_second_moment: float


def martingale_diagnostics(disorder: DisorderRealization, lam: float, t_end: float, n_runs: int, seed: int = 0,
                           temperature: float = 1.0) -> MartingaleCheck:
    """Decomposition of the integrated current through the Poisson solution (fixed BC).

    With ``-A u = J``: ``int J = u(X_0) - u(X_t) + lam int S u + M_t``. Reports
    the empirical correlation between ``int J`` and ``int S u`` (zero by time
    reversal), the mean of ``M_t`` and its second moment against the exact
    value ``16 lam T^2 t |offdiag gamma|^2``.
    """
    phi = build_phi(disorder, BoundaryCondition.FIXED)
    dec = eigendecompose(phi)
    sol = poisson_closed_form(dec, T=temperature)
    u = sol.u
    su = apply_noise(u)
    x0 = sample_gibbs(phi, GibbsParams(temperature), rngmod.stream(seed, rngmod.GIBBS, 0), size=n_runs)
    res = simulate_harmonic_flip(x0, dec, lam, t_end, rngmod.stream(seed, rngmod.NOISE, 0), forms=[su])
    int_j = res.integrated_current
    int_su = res.extra_integrals[:, 0]
    mart = int_j - u.evaluate(x0.q, x0.p) + u.evaluate(res.final_state.q, res.final_state.p) - lam * int_su
    corr = float(np.corrcoef(int_j, int_su)[0, 1])
    off = u.gamma - np.diag(np.diag(u.gamma))
    predicted = 16 * lam * temperature**2 * t_end * float(np.sum(off**2))
    m2 = mart**2
    return MartingaleCheck(
        corr, (1 - corr**2) / math.sqrt(n_runs - 1),
        float(mart.mean()), float(mart.std(ddof=1) / math.sqrt(n_runs)),
        float(m2.mean()), float(m2.std(ddof=1) / math.sqrt(n_runs)), predicted,
    )
