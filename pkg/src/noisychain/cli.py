"""Command-line experiment driver.

Every subcommand reads one configuration, writes CSV (and JSON) artifacts
that embed the configuration hash, and finishes with ``manifest.json``.
Exit codes: 0 success, 1 failed ``--check``, 2 usage or configuration
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import platform
import sys
import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from . import __version__
from .chain import BoundaryCondition, build_phi
from .conductivity import (
    ChainSpec,
    MCConfig,
    check_grid,
    disorder_averaged_resolvent,
    estimate_kappa_mc,
    insulator_decay,
    loglog_slope,
    parallel_map,
    resolvent_current_pairing,
    scaling_sweep,
    variational_lower_bound,
)
from .config import ConfigError, ExperimentConfig
from .errors import DegeneracyWarning, NumericError, ParameterError
from .potentials import AnharmonicPotential
from .quadforms import exponential_bound_stats, norm_bounds_u, poisson_closed_form
from .spectral import eigendecompose, mode_overlap_decay, participation_ratio

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST = "manifest.json"

# expected log-log slopes of kappa versus lambda; the unpinned one is a heuristic
SLOPE_EXPECTATIONS = {
    "pinned-disordered": (0.85, 1.15, True),
    "pinned-ordered": (-1.2, -0.8, True),
    "unpinned-mass-disordered": (-0.7, -0.3, False),
}
SWEEP_VARIANTS = tuple(SLOPE_EXPECTATIONS)
BOUND_OVER_LAMBDA = (1.0, 20.0)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    blocking: bool = True

    def __post_init__(self):
        self.passed = bool(self.passed)

    def line(self) -> str:
        status = "PASS" if self.passed else ("FAIL" if self.blocking else "FAIL (informational)")
        return f"{status} {self.name}: {self.detail}"


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


class Run:
    """Artifact sink for one subcommand invocation."""

    def __init__(self, config: ExperimentConfig, out: Path, command: str):
        self.config = config
        self.out = out
        self.command = command
        self.config_hash = config.content_hash()
        self.artifacts: dict[str, str] = {}
        self.started = time.perf_counter()

    def write_csv(self, name: str, header: list[str], rows) -> None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow([*header, "config_hash"])
        for row in rows:
            writer.writerow([*(_cell(v) for v in row), self.config_hash])
        path = self.out / name
        path.write_bytes(buf.getvalue().encode())
        self.artifacts[name] = sha256_file(path)

    def write_json(self, name: str, payload: dict) -> None:
        path = self.out / name
        body = {**_jsonable(payload), "config_hash": self.config_hash}
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        self.artifacts[name] = sha256_file(path)

    def write_manifest(self, checks: list[Check]) -> None:
        manifest = {
            "command": self.command,
            "config": self.config.as_dict(),
            "config_hash": self.config_hash,
            "seeds": {"root": self.config.seed, "stream_key": "(seed, purpose, disorder index)"},
            "versions": {
                "noisychain": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "threads": self.config.threads,
            "wall_time_s": time.perf_counter() - self.started,
            "artifacts": self.artifacts,
            "checks": [{"name": c.name, "passed": c.passed, "blocking": c.blocking, "detail": c.detail} for c in checks],
        }
        (self.out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def chain_spec(cfg: ExperimentConfig, n: int | None = None, variant: str | None = None, bc=None) -> ChainSpec:
    return ChainSpec(n or cfg.n, bc or cfg.bc, variant or cfg.variant, cfg.nu_min, cfg.nu_max, cfg.mass_min, cfg.mass_max)


def _potential(cfg: ExperimentConfig) -> AnharmonicPotential:
    return AnharmonicPotential(cfg.potential_onsite, cfg.potential_bond)


def _slope_check(variant: str, slope: float, stderr: float) -> list[Check]:
    if variant not in SLOPE_EXPECTATIONS:
        return []
    lo, hi, blocking = SLOPE_EXPECTATIONS[variant]
    return [Check(f"slope[{variant}]", lo <= slope <= hi, f"{slope:.4f} +- {stderr:.4f}, expected [{lo}, {hi}]", blocking)]


# -- subcommands ------------------------------------------------------------------------------


def run_spectrum(cfg: ExperimentConfig, run: Run) -> list[Check]:
    spec = chain_spec(cfg)

    def one(i):
        d = spec.realization(cfg.seed, i)
        phi = build_phi(d, spec.bc)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegeneracyWarning)
            dec = eigendecompose(phi, d.masses)
        a = dec.phi_reduced
        resid = float(np.abs(a @ dec.xi - dec.xi * dec.omega2).max() / max(1.0, np.abs(a).max()))
        ortho = float(np.abs(dec.xi.T @ dec.xi - np.eye(spec.n)).max())
        return dec, resid, ortho

    out = parallel_map(one, list(range(spec.draws(cfg.n_disorder))), cfg.threads)
    rows = []
    for i, (dec, _, _) in enumerate(out):
        pr = participation_ratio(dec)
        rows += [[cfg.variant, spec.n, spec.bc.value, i, k, dec.omega2[k], pr[k]] for k in range(spec.n)]
    run.write_csv("spectrum.csv", ["variant", "n", "bc", "draw", "mode", "omega2", "participation_ratio"], rows)
    resid = max(o[1] for o in out)
    ortho = max(o[2] for o in out)
    checks = [
        Check("eigen-residual", resid <= 1e-10, f"max {resid:.2e}"),
        Check("orthonormality", ortho <= 1e-10, f"max {ortho:.2e}"),
    ]
    if cfg.variant.startswith("pinned"):
        lo = min(o[0].omega2.min() for o in out)
        hi = max(o[0].omega2.max() for o in out)
        ok = lo >= cfg.nu_min - 1e-10 and hi <= cfg.nu_max + 4 + 1e-10
        checks.append(Check("spectrum-bounds", ok, f"omega2 in [{lo:.4f}, {hi:.4f}]"))
    return checks


def run_localization(cfg: ExperimentConfig, run: Run) -> list[Check]:
    spec = chain_spec(cfg)

    def one(i):
        d = spec.realization(cfg.seed, i)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegeneracyWarning)
            return eigendecompose(build_phi(d, spec.bc), d.masses)

    decomps = parallel_map(one, list(range(spec.draws(cfg.n_disorder))), cfg.threads)
    overlap = mode_overlap_decay(decomps)
    header, rows = overlap.table()
    run.write_csv("overlap_decay.csv", header, rows)
    summary = {"overlap": overlap.summary()}
    checks = [Check("overlap-decay", overlap.rate > 0 and overlap.rate > 5 * overlap.rate_stderr,
                    f"rate {overlap.rate:.4f} +- {overlap.rate_stderr:.4f}")]

    if cfg.variant == "pinned-disordered":
        fixed = chain_spec(cfg, bc=BoundaryCondition.FIXED)

        def solve(i):
            return poisson_closed_form(eigendecompose(build_phi(fixed.realization(cfg.seed, i), "fixed")),
                                       T=cfg.temperature)

        stats = exponential_bound_stats(parallel_map(solve, list(range(cfg.n_disorder)), cfg.threads))
        g, a = stats.gamma, stats.alpha
        run.write_csv("bond_decay.csv", ["distance", "mean_gamma2", "stderr_gamma2", "mean_alpha2", "stderr_alpha2"],
                      [[int(d), g.mean[d], g.stderr[d], a.mean[d], a.stderr[d]] for d in g.distance])
        summary["bond"] = {"gamma_rate": g.rate, "gamma_rate_stderr": g.rate_stderr, "alpha_rate": a.rate,
                           "alpha_rate_stderr": a.rate_stderr, "max_abs_gamma": stats.max_abs_gamma,
                           "window": list(g.window), "n": stats.n, "n_draws": stats.n_draws}
        checks.append(Check("bond-decay", g.rate > 0 and g.rate > 5 * g.rate_stderr,
                            f"rate {g.rate:.4f} +- {g.rate_stderr:.4f}"))
        checks.append(Check("bond-entries-bounded", stats.max_abs_gamma <= 1 + 1e-12,
                            f"max |gamma| {stats.max_abs_gamma:.6f}"))
    run.write_json("localization.json", summary)
    return checks


def run_poisson_check(cfg: ExperimentConfig, run: Run) -> list[Check]:
    rows = []
    for n in cfg.chain_sizes:
        spec = chain_spec(cfg, n=n, bc=BoundaryCondition.FIXED)

        def one(i):
            d = spec.realization(cfg.seed, i)
            sol = poisson_closed_form(eigendecompose(build_phi(d, "fixed")), T=cfg.temperature)
            return [n, i, sol.relative_residual, sol.commutator_error(), float(np.abs(sol.gamma_l[1:]).max(initial=0.0))]

        rows += parallel_map(one, list(range(spec.draws(cfg.n_disorder))), cfg.threads)
    run.write_csv("poisson_residuals.csv", ["n", "draw", "relative_residual", "commutator_error", "max_abs_gamma"], rows)
    resid = max(r[2] for r in rows)
    comm = max(r[3] for r in rows)
    checks = [
        Check("poisson-residual", resid <= 1e-8, f"max relative {resid:.2e}"),
        Check("commutator", comm <= 1e-10, f"max relative {comm:.2e}"),
    ]
    if cfg.n_disorder >= 2 and len(cfg.chain_sizes) >= 2 and cfg.variant == "pinned-disordered":
        lp = cfg.lambda_prime_for(max(cfg.lambdas))
        norms = norm_bounds_u(cfg.chain_sizes, cfg.n_disorder, cfg.seed, (cfg.nu_min, cfg.nu_max), cfg.temperature,
                              lp, _potential(cfg) if lp > 0 else None, burn_in=cfg.burn_in)
        run.write_csv("poisson_norms.csv", ["n", "u_norm2", "u_norm2_stderr", "anh_norm2", "anh_norm2_stderr"],
                      [[r.n, r.u_norm2, r.u_norm2_stderr, r.anh_norm2, r.anh_norm2_stderr] for r in norms.rows])
        checks.append(Check("norm-bounded", norms.bounded,
                            f"relative change over the last two sizes {norms.relative_change:.3f}", blocking=False))
    return checks


def run_kappa_mc(cfg: ExperimentConfig, run: Run) -> list[Check]:
    spec = chain_spec(cfg)
    rows, ests = [], []
    for lam in cfg.lambdas:
        lp = cfg.lambda_prime_for(lam)
        mc = MCConfig(spec, lam, cfg.t_end, cfg.n_disorder, cfg.n_trajectories, lp, cfg.temperature, cfg.seed,
                      _potential(cfg) if lp > 0 else None, cfg.dt, cfg.burn_in, cfg.threads)
        est = estimate_kappa_mc(mc)
        ests.append(est)
        rows.append([cfg.variant, spec.n, spec.bc.value, lam, lp, cfg.temperature, cfg.t_end, "mc", est.value,
                     est.stderr, est.extras["between_var"], est.extras["within_var"], est.n_disorder,
                     est.n_trajectories])
    run.write_csv("kappa_mc.csv", ["variant", "n", "bc", "lam", "lambda_prime", "temperature", "t", "method", "value",
                                   "stderr", "between_var", "within_var", "n_disorder", "n_trajectories"], rows)
    checks = [Check("finite-estimates", all(math.isfinite(e.value) and e.stderr >= 0 for e in ests), "all rows")]
    if len(cfg.lambdas) >= 2 and min(cfg.lambdas) > 0 and cfg.lambda_prime_for(max(cfg.lambdas)) > 0:
        lo, hi = int(np.argmin(cfg.lambdas)), int(np.argmax(cfg.lambdas))
        ratio = ests[hi].value / ests[lo].value
        limit = 1.5 * cfg.lambdas[hi] / cfg.lambdas[lo]
        checks.append(Check("no-superlinear-growth", ratio <= limit, f"kappa ratio {ratio:.3f}, limit {limit:.3f}"))
    return checks


def _sweep_rows(variant: str, n: int, bc: str, ests) -> list:
    return [[variant, n, bc, e.params["lam"], e.value, e.stderr, e.extras.get("extrapolation_spread", 0.0),
             e.params.get("z_min", 0.0), e.n_disorder] for e in ests]


SWEEP_HEADER = ["variant", "n", "bc", "lam", "value", "stderr", "extrapolation_spread", "z_min", "n_disorder"]


def run_kappa_resolvent(cfg: ExperimentConfig, run: Run) -> list[Check]:
    spec = chain_spec(cfg)
    ests = [disorder_averaged_resolvent(spec, lam, cfg.n_disorder, cfg.seed, cfg.z_factors, cfg.temperature, cfg.threads)
            for lam in cfg.lambdas]
    run.write_csv("kappa_resolvent.csv", SWEEP_HEADER, _sweep_rows(cfg.variant, spec.n, spec.bc.value, ests))
    try:
        check_grid(cfg.lambdas)
    except ParameterError:
        return [Check("finite-estimates", all(math.isfinite(e.value) for e in ests), "no slope: grid too narrow")]
    fit = loglog_slope(cfg.lambdas, [e.value for e in ests])
    run.write_json("kappa_resolvent_slope.json", {"variant": cfg.variant, "n": spec.n, "bc": spec.bc.value,
                                                  "lambdas": list(cfg.lambdas), "slope": fit.slope,
                                                  "slope_stderr": fit.slope_stderr, "intercept": fit.intercept})
    return _slope_check(cfg.variant, fit.slope, fit.slope_stderr)


def run_scaling_sweep(cfg: ExperimentConfig, run: Run) -> list[Check]:
    rows, slopes, checks = [], {}, []
    mc_options = {"t_end": cfg.t_end, "n_trajectories": cfg.n_trajectories, "dt": cfg.dt, "burn_in": cfg.burn_in}
    for variant in SWEEP_VARIANTS:
        spec = chain_spec(cfg, variant=variant)
        res = scaling_sweep(spec, cfg.lambdas, cfg.n_disorder, cfg.seed, cfg.sweep_method, cfg.z_factors,
                            cfg.temperature, cfg.threads, mc_options)
        rows += _sweep_rows(variant, spec.n, spec.bc.value, res.estimates)
        slopes[variant] = res.summary()
        checks += _slope_check(variant, res.slope, res.slope_stderr)
    run.write_csv("scaling_sweep.csv", SWEEP_HEADER, rows)
    run.write_json("scaling_sweep.json", {"method": cfg.sweep_method, "slopes": slopes})
    return checks


def run_lower_bound(cfg: ExperimentConfig, run: Run) -> list[Check]:
    spec = chain_spec(cfg)
    z_factor = min(cfg.z_factors)
    rows = []
    for lam in cfg.lambdas:
        z = z_factor * lam

        def one(i):
            phi = build_phi(spec.realization(cfg.seed, i), spec.bc)
            lb = variational_lower_bound(phi, lam, z, cfg.temperature)
            value = resolvent_current_pairing(phi, lam, z, cfg.temperature)
            return [lam, i, z, lb.bound, lb.j_term, lb.s_term, lb.a_term, value, lb.bound / lam]

        rows += parallel_map(one, list(range(spec.draws(cfg.n_disorder))), cfg.threads)
    run.write_csv("lower_bound.csv", ["lam", "draw", "z", "bound", "j_term", "s_term", "a_term", "resolvent",
                                      "bound_over_lam"], rows)
    j_err = max(abs(r[4] - 1.0) for r in rows)
    gap = min(r[7] - r[3] for r in rows)
    ratios = [r[8] for r in rows]
    lo, hi = BOUND_OVER_LAMBDA
    return [
        Check("current-term", j_err <= 1e-12, f"max |j_term - 1| {j_err:.2e}"),
        Check("resolvent-dominates-bound", gap >= 0, f"min(resolvent - bound) {gap:.3e}"),
        Check("bound-over-lambda", lo <= min(ratios) and max(ratios) <= hi,
              f"bound/lambda in [{min(ratios):.3f}, {max(ratios):.3f}], expected within [{lo}, {hi}]"),
    ]


def run_insulator(cfg: ExperimentConfig, run: Run) -> list[Check]:
    spec = chain_spec(cfg)
    res = insulator_decay(spec, cfg.t_values, cfg.n_disorder, cfg.n_trajectories, cfg.seed,
                          temperature=cfg.temperature, threads=cfg.threads)
    header, rows = res.table()
    run.write_csv("insulator.csv", header, rows)
    run.write_json("insulator.json", {"variant": cfg.variant, "n": spec.n, "bc": spec.bc.value, "slope": res.slope,
                                      "slope_stderr": res.slope_stderr, "growth_ratio": res.growth_ratio,
                                      "max_abs_integral": res.max_abs_integral,
                                      "reference_abs_integral": res.reference_abs_integral})
    if cfg.variant == "pinned-disordered":
        return [
            Check("variance-slope", -1.2 <= res.slope <= -0.8, f"{res.slope:.4f} +- {res.slope_stderr:.4f}"),
            Check("integral-bounded", res.growth_ratio <= 10, f"growth ratio {res.growth_ratio:.3f}"),
        ]
    return [Check("ordered-growth", res.slope > -0.5, f"{res.slope:.4f}", blocking=False)]


@dataclass(frozen=True)
class Subcommand:
    run: Callable[[ExperimentConfig, Run], list]
    validate: Callable[[ExperimentConfig], None] | None = None
    help: str = ""


def _require_positive_lambdas(cfg):
    if min(cfg.lambdas) <= 0:
        raise ConfigError("this subcommand needs lambda > 0")


def _validate_poisson(cfg):
    if not cfg.variant.startswith("pinned"):
        raise ConfigError("poisson-check needs a pinned variant with unit masses")


def _validate_localization(cfg):
    if cfg.variant == "pinned-disordered" and cfg.n_disorder < 20:
        raise ConfigError("localization needs at least 20 disorder draws")
    if ChainSpec(cfg.n, cfg.bc, cfg.variant).draws(cfg.n_disorder) < 2:
        raise ConfigError("localization needs a disordered variant")


def _validate_mc(cfg):
    if any(cfg.lambda_prime_for(l) > 0 for l in cfg.lambdas) and BoundaryCondition.parse(cfg.bc) is not BoundaryCondition.FIXED:
        raise ConfigError("anharmonic runs use fixed boundaries")


def _validate_sweep(cfg):
    try:
        check_grid(cfg.lambdas)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc


def _validate_lower_bound(cfg):
    _require_positive_lambdas(cfg)
    if BoundaryCondition.parse(cfg.bc) is not BoundaryCondition.PERIODIC or cfg.n < 3:
        raise ConfigError("lower-bound needs periodic boundaries and n >= 3")
    if not cfg.variant.startswith("pinned"):
        raise ConfigError("lower-bound needs a pinned variant")


def _validate_insulator(cfg):
    if any(l != 0 for l in cfg.lambdas) or cfg.lambda_prime != 0 or cfg.lambda_prime_ratio:
        raise ConfigError("insulator runs need lambdas = 0 and lambda_prime = 0")
    if cfg.variant.startswith("unpinned") and BoundaryCondition.parse(cfg.bc) is BoundaryCondition.PERIODIC:
        raise ConfigError("unpinned insulator runs need fixed boundaries (no zero mode)")


SUBCOMMANDS: dict[str, Subcommand] = {
    "spectrum": Subcommand(run_spectrum, None, "eigenmodes and participation ratios"),
    "localization": Subcommand(run_localization, _validate_localization, "mode-overlap and bond-matrix decay"),
    "poisson-check": Subcommand(run_poisson_check, _validate_poisson, "closed-form Poisson solution residuals"),
    "kappa-mc": Subcommand(run_kappa_mc, _validate_mc, "Monte Carlo conductivity per lambda"),
    "kappa-resolvent": Subcommand(run_kappa_resolvent, _require_positive_lambdas, "resolvent conductivity and slope"),
    "lower-bound": Subcommand(run_lower_bound, _validate_lower_bound, "variational lower bound vs resolvent"),
    "insulator": Subcommand(run_insulator, _validate_insulator, "integrated-current variance without noise"),
    "scaling-sweep": Subcommand(run_scaling_sweep, _validate_sweep, "slopes for the three chain variants"),
}


# -- verification ------------------------------------------------------------------------------


def verify(out: Path) -> list[Check]:
    """Re-hash the config echo and every artifact listed in the manifest."""
    manifest = json.loads((out / MANIFEST).read_text())
    cfg = ExperimentConfig.from_dict(manifest["config"])
    expected = cfg.content_hash()
    checks = [Check("config-hash", expected == manifest["config_hash"], expected)]
    for name, digest in sorted(manifest["artifacts"].items()):
        path = out / name
        if not path.exists():
            checks.append(Check(name, False, "missing"))
            continue
        ok = sha256_file(path) == digest
        if name.endswith(".csv"):
            with open(path, newline="") as fh:
                embedded = {row["config_hash"] for row in csv.DictReader(fh)}
            ok = ok and embedded <= {expected}
        else:
            ok = ok and json.loads(path.read_text()).get("config_hash") == expected
        checks.append(Check(name, ok, "digest and embedded hash"))
    return checks


# -- entry point ------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noisychain", description="Disordered harmonic chain experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, cmd in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=cmd.help)
        p.add_argument("--config", type=Path, help="INI-style configuration file")
        p.add_argument("--out", type=Path, help="output directory (overrides [output] out_dir)")
        p.add_argument("--seed", type=int, help="root seed (overrides [ensemble] seed)")
        p.add_argument("--threads", type=int, help="worker threads (overrides [ensemble] threads)")
        p.add_argument("--check", action="store_true", help="exit 1 if an acceptance check fails")
    p = sub.add_parser("verify", help="re-hash the artifacts of a finished run")
    p.add_argument("--out", type=Path, required=True)
    return parser


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {k: v for k, v in (("seed", args.seed), ("threads", args.threads)) if v is not None}
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    return cfg.replace(**overrides) if overrides else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify":
        try:
            checks = verify(args.out)
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        for c in checks:
            print(c.line())
        return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK

    cmd = SUBCOMMANDS[args.command]
    try:
        cfg = load_config(args)
        if cmd.validate:
            cmd.validate(cfg)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
    except (ParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    run = Run(cfg, out, args.command)
    try:
        checks = cmd.run(cfg, run)
    except NumericError as exc:
        detail = f" (residual {exc.residual:.3e})" if getattr(exc, "residual", None) is not None else ""
        print(f"numeric failure: {exc}{detail}", file=sys.stderr)
        return EXIT_NUMERIC
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    run.write_manifest(checks)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if c.blocking and not c.passed]
    return EXIT_CHECK if args.check and failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
