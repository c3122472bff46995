"""Stochastic dynamics: event-driven exact simulation (harmonic) and a splitting integrator.

Batched inputs (leading axis = trajectory) are simulated together; every
trajectory still follows its own event sequence.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .chain import BoundaryCondition, ChainState, DisorderRealization, hamiltonian, observables
from .errors import NumericError, ParameterError
from .potentials import AnharmonicPotential
from .quadforms import QuadraticForm, build_current_form
from .spectral import EigenDecomposition

EQUAL_FREQUENCY_RTOL = 1e-8
# pairs closer than this (relative) are integrated per interval instead of telescoped
NEAR_RESONANCE_RTOL = 1e-3


@dataclass(frozen=True)
class NoiseParams:
    lam: float
    lambda_prime: float = 0.0

    def __post_init__(self):
        if self.lam < 0 or self.lambda_prime < 0:
            raise ParameterError("noise rates must be nonnegative")

    def require_noise_dominated(self) -> None:
        """Perturbative regime where the noise dominates the anharmonicity."""
        if self.lambda_prime > self.lam:
            raise ParameterError("lambda_prime must not exceed lambda in this regime")


@dataclass
class TrajectoryResult:
    """Outcome of one trajectory, or of a batch when arrays carry a leading axis."""

    final_state: ChainState
    integrated_current: np.ndarray
    flip_count: np.ndarray
    elapsed: float
    extra_integrals: np.ndarray | None = None
    events: list | None = None
    energy_trace: np.ndarray | None = None


def _current_form(decomp: EigenDecomposition) -> QuadraticForm:
    masses = None if decomp.inv_sqrt_mass is None else decomp.inv_sqrt_mass**-2
    return build_current_form(decomp.n, decomp.bc, masses)


def _mode_weights(form: QuadraticForm, decomp: EigenDecomposition) -> tuple[np.ndarray, np.ndarray]:
    """Weights with ``u = Re[x W+ x + x W- conj(x)] / 2`` for mode amplitudes ``x = Q - i P / w``."""
    x = decomp.xi
    w = decomp.omega
    a, b, g = x.T @ form.alpha @ x, x.T @ form.beta @ x, x.T @ form.gamma @ x
    wj, wk = w[:, None], w[None, :]
    plus = a + 1j * b * wk - g * wj * wk
    minus = a - 1j * b * wk + g * wj * wk
    return plus, minus


def _phase_integral(omega_diff: np.ndarray, tau) -> np.ndarray:
    """``int_0^tau exp(i W s) ds``; exact limit used where ``W`` vanishes."""
    tau = np.asarray(tau, dtype=float)
    half = omega_diff * tau / 2
    return tau * np.exp(1j * half) * np.sinc(half / np.pi)


def _amplitudes(state: ChainState, decomp: EigenDecomposition) -> np.ndarray:
    Q, P = decomp.to_modes(state)
    return Q - 1j * P / decomp.omega


def _require_pinned(decomp: EigenDecomposition) -> None:
    if decomp.omega2.min() <= 1e-12 * decomp.omega2.max():
        raise ParameterError("closed-form mode integrals need strictly positive frequencies")


def integrate_form_interval(form: QuadraticForm, state: ChainState, decomp: EigenDecomposition, tau) -> np.ndarray:
    """``int_0^tau u(X^s) ds`` along the harmonic flow started from ``state``."""
    _require_pinned(decomp)
    if np.any(np.asarray(tau) < 0):
        raise ParameterError("tau must be nonnegative")
    w = decomp.omega
    wj, wk = w[:, None], w[None, :]
    plus, minus = _mode_weights(form, decomp)
    c = _amplitudes(state, decomp)
    tau = np.asarray(tau, dtype=float)[..., None, None]
    diff = wj - wk
    e_plus = _phase_integral(wj + wk, tau)
    e_minus = np.where(np.abs(diff) < EQUAL_FREQUENCY_RTOL * (wj + wk), tau + 0j, _phase_integral(diff, tau))
    total = np.einsum("...j,...jk,...k->...", c, plus * e_plus, c) + np.einsum(
        "...j,...jk,...k->...", c, minus * e_minus, np.conj(c)
    )
    return 0.5 * total.real + form.c * tau[..., 0, 0]


def integrate_current_interval(state: ChainState, decomp: EigenDecomposition, tau) -> np.ndarray:
    """Time integral of the rescaled total current along the harmonic flow."""
    return integrate_form_interval(_current_form(decomp), state, decomp, tau)


class _FlowIntegrals:
    """Telescoping antiderivatives of quadratic forms for the event-driven loop.

    Between events every mode amplitude rotates rigidly, so the time integral
    of a quadratic form is a difference of an antiderivative evaluated at the
    interval ends. Near-resonant pairs (and the diagonal) have a slowly
    varying or constant integrand; they are integrated per interval instead.
    """

    def __init__(self, decomp: EigenDecomposition, forms: Sequence[QuadraticForm]):
        _require_pinned(decomp)
        w = decomp.omega
        wj, wk = w[:, None], w[None, :]
        diff = wj - wk
        near = np.abs(diff) < NEAR_RESONANCE_RTOL * (wj + wk) / 2
        self.near_j, self.near_k = np.nonzero(near)
        self.near_diff = diff[near]
        k_plus, k_minus, w_near, consts = [], [], [], []
        for form in forms:
            plus, minus = _mode_weights(form, decomp)
            k_plus.append(plus / (1j * (wj + wk)))
            k_minus.append(np.where(near, 0.0, minus / np.where(near, 1.0, 1j * diff)))
            w_near.append(minus[near])
            consts.append(form.c)
        self.k_plus_t = np.stack([k.T for k in k_plus])
        self.k_minus_t = np.stack([k.T for k in k_minus])
        self.w_near = np.stack(w_near)
        self.consts = np.asarray(consts)

    def antiderivative(self, x: np.ndarray) -> np.ndarray:
        """Shape ``(R, F)`` antiderivative at rotated amplitudes ``x`` of shape ``(R, N)``."""
        plus = np.einsum("rj,frj->rf", x, x @ self.k_plus_t)
        minus = np.einsum("rj,frj->rf", x, np.conj(x) @ self.k_minus_t)
        return 0.5 * (plus + minus).real

    def near_resonant(self, x: np.ndarray, tau: np.ndarray) -> np.ndarray:
        """Per-interval contribution of near-resonant pairs plus constants, shape ``(R, F)``."""
        pair = x[:, self.near_j] * np.conj(x[:, self.near_k])
        phase = _phase_integral(self.near_diff[None, :], tau[:, None])
        return 0.5 * ((pair * phase) @ self.w_near.T).real + tau[:, None] * self.consts[None, :]


def _event_schedule(rng: np.random.Generator, rows: int, n: int, rate: float, t_end: float):
    """Event times ``(R, K)`` (padded with inf past ``t_end``) and sites ``(R, K)``."""
    if rate == 0 or t_end == 0:
        return np.full((rows, 0), np.inf), np.zeros((rows, 0), dtype=np.int64)
    mean = rate * t_end
    chunk = int(math.ceil(mean + 8 * math.sqrt(mean) + 16))
    times = np.cumsum(rng.exponential(1.0 / rate, size=(rows, chunk)), axis=1)
    sites = rng.integers(0, n, size=(rows, chunk))
    while np.any(times[:, -1] < t_end):
        more = times[:, -1:] + np.cumsum(rng.exponential(1.0 / rate, size=(rows, chunk)), axis=1)
        times = np.concatenate([times, more], axis=1)
        sites = np.concatenate([sites, rng.integers(0, n, size=(rows, chunk))], axis=1)
    times[times > t_end] = np.inf
    k = int(np.max(np.sum(np.isfinite(times), axis=1)))
    return times[:, :k], sites[:, :k]


def simulate_harmonic_flip(
    x0: ChainState,
    decomp: EigenDecomposition,
    lam: float,
    t_end: float,
    rng: np.random.Generator,
    *,
    forms: Sequence[QuadraticForm] = (),
    record: bool = False,
) -> TrajectoryResult:
    """Exact harmonic flow interrupted by velocity flips at Poisson times.

    Args:
        x0: initial state, ``(N,)`` or ``(R, N)`` for a batch.
        decomp: eigenmodes of the (mass-reduced) coupling matrix.
        lam: flip rate per site.
        t_end: time horizon.
        rng: random generator driving waiting times and sites.
        forms: extra quadratic forms (reduced coordinates) whose time
            integrals are returned in ``extra_integrals``.
        record: keep an event log ``(t, site, H, J_N)``; single trajectory only.
    """
    if t_end < 0:
        raise ParameterError("t_end must be nonnegative")
    if lam < 0:
        raise ParameterError("lambda must be nonnegative")
    single = x0.q.ndim == 1
    q0 = np.atleast_2d(x0.q)
    p0 = np.atleast_2d(x0.p)
    rows, n = q0.shape
    if record and rows != 1:
        raise ParameterError("event recording supports a single trajectory")
    current = _current_form(decomp)
    flow = _FlowIntegrals(decomp, [current, *forms])
    w = decomp.omega
    xi = decomp.xi
    inv_w = 1.0 / w

    state0 = ChainState(q0, p0)
    amp = _amplitudes(state0, decomp)  # rotated amplitudes at time 0 equal frame amplitudes
    times, sites = _event_schedule(rng, rows, n, n * lam, t_end)
    integral = -flow.antiderivative(amp)
    last_t = np.zeros(rows)
    last_x = amp.copy()
    flips = np.zeros(rows, dtype=np.int64)
    events = [] if record else None
    row_idx = np.arange(rows)

    def to_state(x):
        return decomp.from_modes(x.real, -(w * x.imag))

    for k in range(times.shape[1]):
        t_k = times[:, k]
        active = np.isfinite(t_k)
        if not active.any():
            break
        r = row_idx[active]
        t_a = t_k[active]
        x = amp[r] * np.exp(1j * np.multiply.outer(t_a, w))
        integral[r] += flow.antiderivative(x) + flow.near_resonant(last_x[r], t_a - last_t[r])
        # flip p at the chosen site: reduced momentum changes sign there
        s = sites[r, k]
        big_p = -(w * x.imag)
        row_xi = xi[s]  # (A, N)
        p_site = np.sum(row_xi * big_p, axis=1)
        x = x + 2j * row_xi * p_site[:, None] * inv_w
        integral[r] -= flow.antiderivative(x)
        amp[r] = x * np.exp(-1j * np.multiply.outer(t_a, w))
        last_x[r] = x
        last_t[r] = t_a
        flips[r] += 1
        if record:
            events.append((float(t_a[0]), int(s[0]), to_state(x)))

    x_end = amp * np.exp(1j * t_end * w)
    integral += flow.antiderivative(x_end) + flow.near_resonant(last_x, t_end - last_t)
    final = to_state(x_end)
    if not np.all(np.isfinite(integral)):
        raise NumericError("non-finite integrated current")
    if single:
        final = ChainState(final.q[0], final.p[0])
        result = TrajectoryResult(final, integral[0, 0], flips[0], float(t_end), integral[0, 1:] if forms else None)
    else:
        result = TrajectoryResult(final, integral[:, 0], flips, float(t_end), integral[:, 1:] if forms else None)
    if record:
        result.events = events
    return result


def write_event_log(path, result: TrajectoryResult, decomp: EigenDecomposition, disorder: DisorderRealization) -> None:
    """Dump ``(t_event, site_flipped, H, J_N)`` rows of a recorded trajectory."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t_event", "site_flipped", "H", "J_N"])
        for t, s, st in result.events or []:
            obs = observables(ChainState(np.ravel(st.q), np.ravel(st.p)), disorder, decomp.bc)
            out.writerow([repr(t), s, repr(float(obs.hamiltonian)), repr(float(obs.total_current))])


# -- splitting integrator --------------------------------------------------------------------------


@dataclass
class FlipSchedule:
    """Flip events on the time grid, sorted by step: ``(step, row, site)``."""

    step: np.ndarray
    row: np.ndarray
    site: np.ndarray
    n_steps: int

    def counts(self, rows: int) -> np.ndarray:
        return np.bincount(self.row, minlength=rows)

    def offset(self, rows: int) -> "FlipSchedule":
        return FlipSchedule(self.step, self.row + rows, self.site, self.n_steps)

    @staticmethod
    def concatenate(parts: Sequence["FlipSchedule"]) -> "FlipSchedule":
        step = np.concatenate([p.step for p in parts])
        order = np.argsort(step, kind="stable")
        return FlipSchedule(
            step[order],
            np.concatenate([p.row for p in parts])[order],
            np.concatenate([p.site for p in parts])[order],
            parts[0].n_steps,
        )


def make_flip_schedule(rng: np.random.Generator, rows: int, n: int, lam: float, dt: float, n_steps: int) -> FlipSchedule:
    """Independent per-site flips with probability ``1 - exp(-lam dt)`` after every step (steps ``1..n_steps``)."""
    prob = -math.expm1(-lam * dt)
    empty = np.zeros(0, dtype=np.int64)
    if prob == 0 or n_steps == 0:
        return FlipSchedule(empty, empty, empty, n_steps)
    mean = prob * n_steps
    chunk = int(math.ceil(mean + 8 * math.sqrt(mean) + 8))
    pos = np.cumsum(rng.geometric(prob, size=(rows, n, chunk)), axis=2)
    while np.any(pos[:, :, -1] <= n_steps):
        more = pos[:, :, -1:] + np.cumsum(rng.geometric(prob, size=(rows, n, chunk)), axis=2)
        pos = np.concatenate([pos, more], axis=2)
    r, s, _ = np.nonzero(pos <= n_steps)
    step = pos[pos <= n_steps]
    order = np.argsort(step, kind="stable")
    return FlipSchedule(step[order].astype(np.int64), r[order], s[order], n_steps)


def default_dt(nu_plus: float) -> float:
    return 1e-2 / max(1.0, math.sqrt(nu_plus + 4))


def _as_rows(disorder, rows: int):
    ds = [disorder] * rows if isinstance(disorder, DisorderRealization) else list(disorder)
    if len(ds) != rows:
        raise ParameterError("need one disorder realization per trajectory")
    nu = np.stack([d.nu for d in ds])
    inv_m = np.stack([1.0 / d.mass_vector for d in ds])
    return ds, nu, inv_m


def simulate_anharmonic(
    x0: ChainState,
    disorder: DisorderRealization | Sequence[DisorderRealization],
    bc: BoundaryCondition | str,
    noise: NoiseParams,
    potential: AnharmonicPotential | None,
    dt: float,
    t_end: float,
    rng: np.random.Generator | None,
    *,
    schedule: FlipSchedule | None = None,
    energy_every: int = 0,
    check_every: int = 1000,
) -> TrajectoryResult:
    """Velocity-Verlet for the full force followed by per-site flips, on a uniform grid.

    The step is ``t_end / ceil(t_end / dt)`` so the grid ends exactly at
    ``t_end``. The integrated current uses the trapezoidal rule on each step.
    ``disorder`` may list one realization per batch row. ``schedule``
    overrides drawing flips from ``rng``.
    """
    if not dt > 0:
        raise ParameterError("dt must be positive")
    if t_end < 0:
        raise ParameterError("t_end must be nonnegative")
    bc = BoundaryCondition.parse(bc)
    lp = noise.lambda_prime
    if lp > 0 and potential is None:
        raise ParameterError("lambda_prime > 0 requires a potential")
    single = x0.q.ndim == 1
    q = np.atleast_2d(np.array(x0.q, dtype=float))
    p = np.atleast_2d(np.array(x0.p, dtype=float))
    rows, n = q.shape
    ds, nu, inv_m = _as_rows(disorder, rows)
    n_steps = int(math.ceil(t_end / dt - 1e-9)) if t_end > 0 else 0
    h = t_end / n_steps if n_steps else 0.0
    if schedule is None:
        if rng is None:
            raise ParameterError("either rng or schedule is required")
        schedule = make_flip_schedule(rng, rows, n, noise.lam, h, n_steps)
    elif schedule.n_steps != n_steps:
        raise ParameterError("flip schedule does not match the time grid")
    bounds = np.searchsorted(schedule.step, np.arange(n_steps + 2))
    periodic = bc is BoundaryCondition.PERIODIC
    sqrt_n = math.sqrt(n)

    def neighbours(x):
        if periodic:
            return np.roll(x, 1, axis=1), np.roll(x, -1, axis=1)
        left = np.zeros_like(x)
        right = np.zeros_like(x)
        left[:, 1:] = x[:, :-1]
        right[:, :-1] = x[:, 1:]
        return left, right

    def force(x):
        left, right = neighbours(x)
        f = -(2.0 + nu) * x + left + right
        if lp > 0:
            f = f + lp * (-potential.dU(x) + potential.dV(right - x) - potential.dV(x - left))
        return f

    def scaled_current(x, mom):
        v = mom * inv_m
        if periodic:
            dq = x - np.roll(x, -1, axis=1)
            vs = v + np.roll(v, -1, axis=1)
        else:
            dq = x[:, :-1] - x[:, 1:]
            vs = v[:, :-1] + v[:, 1:]
        flux = dq if lp == 0 else dq + lp * potential.dV(dq)
        return 0.5 * np.sum(vs * flux, axis=1) / sqrt_n

    def energy(x, mom):
        return np.array([hamiltonian(ChainState(x[i], mom[i]), ds[i], bc, lp, potential) for i in range(rows)])

    trace = []
    if energy_every:
        trace.append(energy(q, p))
    integral = np.zeros(rows)
    j_prev = scaled_current(q, p)
    f = force(q)
    try:
        with np.errstate(over="raise", invalid="raise"):
            for step in range(1, n_steps + 1):
                p += 0.5 * h * f
                q += h * p * inv_m
                f = force(q)
                p += 0.5 * h * f
                j_new = scaled_current(q, p)
                lo, hi = bounds[step], bounds[step + 1]
                if hi > lo:
                    rr, ss = schedule.row[lo:hi], schedule.site[lo:hi]
                    p[rr, ss] *= -1.0
                    integral += 0.5 * h * (j_prev + j_new)
                    j_prev = scaled_current(q, p)
                else:
                    integral += 0.5 * h * (j_prev + j_new)
                    j_prev = j_new
                if energy_every and step % energy_every == 0:
                    trace.append(energy(q, p))
                if check_every and step % check_every == 0 and not np.all(np.isfinite(q)):
                    raise NumericError("trajectory diverged")
    except FloatingPointError as exc:
        raise NumericError(f"force evaluation overflow: {exc}") from exc
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
        raise NumericError("trajectory diverged")
    flips = schedule.counts(rows)
    if single:
        return TrajectoryResult(ChainState(q[0], p[0]), integral[0], flips[0], float(t_end),
                                energy_trace=np.array(trace)[:, 0] if energy_every else None)
    return TrajectoryResult(ChainState(q, p), integral, flips, float(t_end),
                            energy_trace=np.array(trace) if energy_every else None)
