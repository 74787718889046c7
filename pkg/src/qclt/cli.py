"""Command-line front end: ``qclt measure | verify | sweep | dynamics | schema``.

Exit codes: 0 success, 1 usage or parse error, 2 a hypothesis of the limit
theorem fails for the input (degenerate variance), 3 numeric failure
(including a failed verification check).
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clt import (
    block_decompose,
    char_fn_factorization_check,
    check_factorization,
    convergence_sweep,
    default_k,
    gaussian_comparison,
    lyapunov_sum,
    truncation_error_bound,
    truncation_residuals,
)
from .config import DEFAULT_TOLERANCES, DENSE_THRESHOLD, Tolerances
from .dynamics import fidelity_trace, ground_energy, transition_bound, transition_trace
from .io import (
    MODEL_SCHEMA,
    ModelFileError,
    atomic_write_text,
    canonical_json,
    load_model,
    measure_csv,
    measure_json,
    model_from_dict,
    spec_hash,
    state_from_dict,
    state_hash,
    trace_csv,
    transition_csv,
)
from .krylov import KrylovConvergenceError
from .model import assemble, check_locality
from .spectrum import (
    CharFnSample,
    SpectralBoundError,
    char_fn_values,
    spectral_density_kpm,
    spectral_measure_exact,
    standardize,
)
from .state import DegenerateVarianceError, MomentMismatchError, energy_stats

__all__ = ["RunConfig", "UsageError", "build_parser", "parse_config", "parse_grid", "main"]

STATE_BUILDERS = ("all-up", "all-down", "all-plus", "random")
DEFAULT_SEED = 0
DEFAULT_M = 2048
VERIFY_R_GRID = "-3:3:25"
# Slack for comparing a measured residual with an analytic bound that can be 0.
BOUND_SLACK = 1e-12


class UsageError(Exception):
    """Bad command line or configuration (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunConfig:
    """Everything a command needs, validated at parse time.

    ``state`` is a builder name, a path to a JSON state section, or None to
    use the model file's own ``state`` section (``all-up`` if absent).
    ``seed`` defaults to 0 and only affects ``random`` states and the power
    iteration start vector of the KPM path.
    """

    command: str
    model_path: Path | None = None
    state: str | None = None
    state_b: str | None = None
    seed: int = DEFAULT_SEED
    n: int | None = None
    n_list: list[int] = field(default_factory=list)
    k: int | None = None
    M: int = DEFAULT_M
    method: str = "auto"
    out_dir: Path = Path(".")
    json: bool = False
    r_grid: np.ndarray | None = None
    t_grid: np.ndarray | None = None
    tolerances: Tolerances = DEFAULT_TOLERANCES
    tolerance_overrides: dict = field(default_factory=dict)


def parse_grid(text: str) -> np.ndarray:
    """``start:stop:num`` (inclusive, evenly spaced) or a comma-separated list."""
    try:
        if ":" in text:
            start, stop, num = text.split(":")
            grid = np.linspace(float(start), float(stop), int(num))
        else:
            grid = np.array([float(x) for x in text.split(",") if x.strip()])
    except ValueError as exc:
        raise UsageError(f"cannot parse grid {text!r}: {exc}") from exc
    if grid.size == 0:
        raise UsageError(f"grid {text!r} is empty")
    if np.any(np.diff(grid) <= 0):
        raise UsageError(f"grid {text!r} is not strictly increasing")
    return grid


def parse_n_list(text: str) -> list[int]:
    """``4,6,8`` or ``lo:hi[:step]`` (inclusive)."""
    try:
        if ":" in text:
            parts = [int(x) for x in text.split(":")]
            lo, hi = parts[0], parts[1]
            step = parts[2] if len(parts) > 2 else 1
            if step <= 0:
                raise ValueError("step must be positive")
            values = list(range(lo, hi + 1, step))
        else:
            values = [int(x) for x in text.split(",") if x.strip()]
    except (ValueError, IndexError) as exc:
        raise UsageError(f"cannot parse n list {text!r}: {exc}") from exc
    if not values:
        raise UsageError("n_list is empty: give e.g. --n-list 4,6,8 or --n-list 4:12:2")
    if min(values) < 1:
        raise UsageError("chain lengths must be positive")
    return values


def _parse_tolerances(items) -> tuple[Tolerances, dict]:
    overrides = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"tolerance override {item!r} must look like name=value")
        name, value = item.split("=", 1)
        if not hasattr(DEFAULT_TOLERANCES, name):
            raise UsageError(f"unknown tolerance {name!r}")
        kind = type(getattr(DEFAULT_TOLERANCES, name))
        try:
            overrides[name] = kind(value)
        except ValueError as exc:
            raise UsageError(f"bad value for {name}: {value!r}") from exc
    return DEFAULT_TOLERANCES.updated(**overrides), overrides


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qclt", description="Spectral measures of product states and Gaussian-limit checks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--model", required=True, help="model file (JSON)")
    common.add_argument(
        "--state", help="all-up, all-down, all-plus, random, or a JSON state file (default: model file section)"
    )
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help="seed for random states (default 0)")
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    common.add_argument("--json", action="store_true", help="print the report as canonical JSON")
    common.add_argument("--tol", action="append", metavar="NAME=VALUE", help="override a tolerance")

    p = sub.add_parser("measure", parents=[common], help="spectral measure and Gaussian report")
    p.add_argument("--n", type=int, help="chain length (overrides the model file)")
    p.add_argument("--M", type=int, default=DEFAULT_M, help="Chebyshev moments for the KPM path")
    p.add_argument("--method", choices=["auto", "exact", "kpm"], default="auto")
    p.add_argument("--r-grid", help="characteristic-function grid, start:stop:num or list (default -4:4:81)")

    p = sub.add_parser("verify", parents=[common], help="check the blocking identities and bounds")
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int, help="block length (default floor(n^(3/4)))")
    p.add_argument("--r-grid", help=f"grid for the characteristic-function checks (default {VERIFY_R_GRID})")

    p = sub.add_parser("sweep", parents=[common], help="Gaussian-convergence table over chain lengths")
    p.add_argument("--n-list", required=True, help="4,6,8 or 4:12:2")
    p.add_argument("--k", type=int, help="fixed block length instead of floor(n^(3/4))")
    p.add_argument("--M", type=int, default=DEFAULT_M)

    p = sub.add_parser("dynamics", parents=[common], help="fidelity trace and optional transition bound")
    p.add_argument("--n", type=int)
    p.add_argument("--t-grid", help="time grid, start:stop:num or list (default 0:2/sigma:201)")
    p.add_argument("--state-b", help="second product state for the transition probability")

    sub.add_parser("schema", help="print the model-file JSON schema")
    return parser


def _check_state_arg(value: str | None, flag: str) -> None:
    if value is None or value in STATE_BUILDERS:
        return
    if not Path(value).is_file():
        raise UsageError(f"{flag} must be one of {', '.join(STATE_BUILDERS)} or an existing file, got {value!r}")


def parse_config(argv=None) -> RunConfig:
    args = build_parser().parse_args(argv)
    cfg = RunConfig(command=args.command)
    if args.command == "schema":
        return cfg
    cfg.model_path = Path(args.model)
    if not cfg.model_path.is_file():
        raise UsageError(f"model file {args.model} does not exist")
    _check_state_arg(args.state, "--state")
    cfg.state = args.state
    cfg.seed = args.seed
    cfg.out_dir = Path(args.out)
    cfg.json = args.json
    cfg.tolerances, cfg.tolerance_overrides = _parse_tolerances(args.tol)
    cfg.n = getattr(args, "n", None)
    if cfg.n is not None and cfg.n < 1:
        raise UsageError("--n must be positive")
    cfg.k = getattr(args, "k", None)
    if cfg.k is not None and cfg.k < 2:
        raise UsageError("--k must be at least 2")
    cfg.M = getattr(args, "M", DEFAULT_M)
    if cfg.M < DEFAULT_TOLERANCES.kpm_min_moments:
        raise UsageError(f"--M must be at least {DEFAULT_TOLERANCES.kpm_min_moments}")
    cfg.method = getattr(args, "method", "auto")
    if getattr(args, "r_grid", None):
        cfg.r_grid = parse_grid(args.r_grid)
    if getattr(args, "t_grid", None):
        cfg.t_grid = parse_grid(args.t_grid)
    if args.command == "sweep":
        cfg.n_list = parse_n_list(args.n_list)
    if args.command == "dynamics":
        _check_state_arg(args.state_b, "--state-b")
        cfg.state_b = args.state_b
    return cfg


def _resolve_state(spec, doc, choice, seed):
    if choice is None:
        section = doc.get("state", {"builder": "all-up"})
        if "builder" in section and "seed" not in section:
            section = dict(section, seed=seed)
        return state_from_dict(section, spec), section
    if choice in STATE_BUILDERS:
        section = {"builder": choice, "seed": seed}
    else:
        try:
            section = json.loads(Path(choice).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ModelFileError(f"cannot read state file {choice}: {exc}") from exc
        if isinstance(section, dict) and "state" in section:
            section = section["state"]
    if not isinstance(section, dict):
        raise ModelFileError("state file must contain a JSON object")
    return state_from_dict(section, spec), section


def _load(cfg: RunConfig, n=None):
    spec, doc = load_model(cfg.model_path, n=n if n is not None else cfg.n)
    state, section = _resolve_state(spec, doc, cfg.state, cfg.seed)
    return spec, doc, state, section


def _emit(cfg: RunConfig, report: dict, lines) -> None:
    text = canonical_json(report)
    atomic_write_text(cfg.out_dir / "report.json", text)
    if cfg.json:
        sys.stdout.write(text)
    else:
        for line in lines:
            print(line)


def _header(cfg, spec, state) -> dict:
    return {
        "command": cfg.command,
        "model_file": str(cfg.model_path),
        "model_hash": spec_hash(spec),
        "state_hash": state_hash(state),
        "n": spec.n,
        "seed": cfg.seed,
        "tolerance_overrides": cfg.tolerance_overrides,
    }


def cmd_measure(cfg: RunConfig) -> int:
    spec, _, state, _ = _load(cfg)
    H = assemble(spec)
    stats = energy_stats(spec, state, H=H)
    stats.require_variance(cfg.tolerances.degenerate_variance)
    method = cfg.method
    fallback = None
    if method == "auto":
        method = "exact" if H.has_dense else "kpm"
        if method == "kpm":
            fallback = f"total_dim {spec.total_dim} exceeds dense threshold {DENSE_THRESHOLD}: exact -> kpm"
    if method == "exact":
        if not H.has_dense:
            raise UsageError(f"--method exact needs total_dim <= {DENSE_THRESHOLD}")
        measure = spectral_measure_exact(H, state, tol=cfg.tolerances.weight_sum)
    else:
        measure = spectral_density_kpm(H, state, cfg.M, seed=cfg.seed)
    z = standardize(measure, stats)
    rs = cfg.r_grid if cfg.r_grid is not None else np.linspace(-4, 4, 81)
    charfn = None
    if method == "kpm":
        # the characteristic function is taken from Lanczos, not from the smoothed density
        values = char_fn_values(
            H, state, stats, rs, method="krylov",
            tol=cfg.tolerances.krylov_residual, max_dim=cfg.tolerances.krylov_max_dim,
        )
        charfn = [CharFnSample(float(r), complex(v)) for r, v in zip(rs, values)]
    report = gaussian_comparison(z, charfn=charfn, r_grid=rs, n=spec.n)

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(cfg.out_dir / "measure.csv", measure_csv(measure))
    atomic_write_text(
        cfg.out_dir / "measure.json",
        measure_json(measure, spec, state, tolerances=cfg.tolerances.__dict__),
    )
    doc = _header(cfg, spec, state)
    doc.update(
        method=method,
        fallback=fallback,
        M=cfg.M if method == "kpm" else None,
        mean_energy=stats.mean_energy,
        variance=stats.variance,
        cprime=stats.cprime,
        cprime_signed=stats.cprime_signed,
        c_estimate=stats.c_estimate,
        gaussian=report.as_dict(),
    )
    lines = [
        f"method      {method}" + (f" ({fallback})" if fallback else ""),
        f"mean energy {stats.mean_energy:.12g}",
        f"variance    {stats.variance:.12g}",
        f"KS distance {report.ks_distance:.6g}",
        f"|m4 - 3|    {report.moment_devs[3]:.6g}",
        f"charfn dev  {report.charfn_dev:.6g}",
    ]
    _emit(cfg, doc, lines)
    return 0


def _check(name, residual, tol, passed=None):
    ok = bool(residual <= tol) if passed is None else bool(passed)
    return {"name": name, "passed": ok, "residual": float(residual), "tolerance": float(tol)}


def cmd_verify(cfg: RunConfig) -> int:
    spec, _, state, _ = _load(cfg)
    if spec.total_dim > DENSE_THRESHOLD:
        raise UsageError(f"verify needs total_dim <= {DENSE_THRESHOLD} for full-space cross checks")
    if spec.n < 2:
        raise UsageError("verify needs at least two sites")
    tol = cfg.tolerances
    H = assemble(spec)
    stats = energy_stats(spec, state, H=H, cross_check=True, tol=tol.moment_methods)
    stats.require_variance(tol.degenerate_variance)
    k = default_k(spec.n) if cfg.k is None else cfg.k
    if not 2 <= k <= spec.n:
        raise UsageError(f"--k must lie in [2, {spec.n}]")
    rs = cfg.r_grid if cfg.r_grid is not None else parse_grid(VERIFY_R_GRID)

    checks = []
    loc = check_locality(spec)
    checks.append(_check("locality_commutator", loc.max_residual, tol.commutator))
    checks.append(_check("moments_local_vs_global", stats.global_residual, tol.moment_methods))
    blocks = block_decompose(spec, state, k, stats=stats)
    fac = check_factorization(blocks, (2, 2))
    checks.append(_check("block_factorization", fac.max_residual, tol.factorization))
    checks.append(_check("block_commutator", fac.max_commutator, tol.factorization))
    checks.append(_check("charfn_factorization", char_fn_factorization_check(blocks, rs), tol.charfn_factorization))
    lyap = lyapunov_sum(blocks)
    checks.append(_check("lyapunov_bound", max(lyap.value - lyap.bound, 0.0), 0.0, lyap.within_bound))
    res = truncation_residuals(blocks, rs, H=H)
    bounds = np.array([truncation_error_bound(spec.n, k, stats.c_estimate, stats.cprime, r) for r in rs])
    excess = float(np.max(res - bounds))
    checks.append(_check("truncation_bound", max(excess, 0.0), BOUND_SLACK))

    passed = all(c["passed"] for c in checks)
    doc = _header(cfg, spec, state)
    doc.update(
        k=k,
        q=blocks.q,
        big_blocks=[list(b) for b in blocks.big_blocks],
        small_blocks=list(blocks.small_blocks),
        lyapunov_sum=lyap.value,
        lyapunov_bound=lyap.bound,
        factorization_pairs=fac.n_pairs,
        checks=checks,
        passed=passed,
    )
    lines = [f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']:<26} residual {c['residual']:.3e}" for c in checks]
    lines.append(f"n={spec.n} k={k} q={blocks.q}: {'all checks passed' if passed else 'some checks failed'}")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    _emit(cfg, doc, lines)
    return 0 if passed else 3


def cmd_sweep(cfg: RunConfig) -> int:
    try:
        doc = json.loads(cfg.model_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"cannot read model file {cfg.model_path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelFileError("model file must contain a JSON object")
    if doc.get("builder") == "custom":
        raise UsageError("sweep needs a builder model (ising or harmonic), not custom terms")
    model_from_dict(doc, n=cfg.n_list[0])  # validate once before the sweep starts
    if cfg.state is None:
        section = doc.get("state", {"builder": "all-up"})
    elif cfg.state in STATE_BUILDERS:
        section = {"builder": cfg.state}
    else:
        raise UsageError("sweep needs a named state builder, not a state file")
    if "builder" not in section:
        raise UsageError("sweep needs a named state builder, not explicit local vectors")
    section = dict(section, seed=section.get("seed", cfg.seed))

    def model_family(n):
        return model_from_dict(doc, n=n)

    def state_family(spec):
        return state_from_dict(section, spec)

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"model_file": str(cfg.model_path), "state": section, "k_override": cfg.k}
    rows = convergence_sweep(
        model_family, state_family, cfg.n_list, output=cfg.out_dir / "sweep",
        k_override=cfg.k, kpm_moments=cfg.M, metadata=meta,
    )
    if cfg.json:
        sys.stdout.write((cfg.out_dir / "sweep.json").read_text())
    else:
        print(f"{'n':>4} {'k':>4} {'sigma2':>12} {'ks':>10} {'|m4-3|':>10} {'charfn':>10} {'lyapunov':>10}")
        for r in rows:
            print(
                f"{r['n']:>4} {r['k']:>4} {r['sigma2']:>12.6g} {r['ks']:>10.6f} "
                f"{abs(r['m4'] - 3):>10.5g} {r['charfn_dev']:>10.5f} {r['lyapunov_sum']:>10.5g}"
            )
    return 0


def cmd_dynamics(cfg: RunConfig) -> int:
    spec, doc, state, _ = _load(cfg)
    H = assemble(spec)
    stats = energy_stats(spec, state, H=H)
    sigma = stats.require_variance(cfg.tolerances.degenerate_variance)
    times = cfg.t_grid if cfg.t_grid is not None else np.linspace(0.0, 2.0 / sigma, 201)
    trace = fidelity_trace(H, state, times, stats)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(cfg.out_dir / "trace.csv", trace_csv(trace))
    report = _header(cfg, spec, state)
    report.update(
        method=trace.method,
        mean_energy=stats.mean_energy,
        sigma2=stats.variance,
        max_deviation=trace.max_deviation(),
    )
    lines = [
        f"sigma^2              {stats.variance:.12g}",
        f"max |F - exp(-s2t2)| {trace.max_deviation():.6g}",
    ]
    if cfg.state_b is not None:
        state_b, _ = _resolve_state(spec, doc, cfg.state_b, cfg.seed)
        stats_b = energy_stats(spec, state_b, H=H)
        e0 = ground_energy(H)
        bound = transition_bound(stats, stats_b, ground_energy=e0)
        probs = transition_trace(H, state, state_b, times)
        atomic_write_text(cfg.out_dir / "transition.csv", transition_csv(times, probs))
        measured = float(np.max(probs))
        report["transition"] = {
            "state_b_hash": state_hash(state_b),
            "ground_energy": e0,
            "bound": bound.value,
            "regime_ok": bound.regime_ok,
            "shifted_mean_a": bound.shifted_mean_a,
            "shifted_mean_b": bound.shifted_mean_b,
            "max_probability": measured,
            "within_bound": measured <= bound.value,
        }
        lines.append(f"transition max {measured:.6g} bound {bound.value:.6g} regime_ok={bound.regime_ok}")
    _emit(cfg, report, lines)
    return 0


def cmd_schema(cfg: RunConfig) -> int:
    sys.stdout.write(canonical_json(MODEL_SCHEMA))
    return 0


COMMANDS = {
    "measure": cmd_measure,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
    "dynamics": cmd_dynamics,
    "schema": cmd_schema,
}


def _error_json(cfg, kind, message, code):
    doc = {"error": kind, "message": message, "exit_code": code}
    text = canonical_json(doc)
    sys.stdout.write(text)
    if cfg is not None:
        try:
            cfg.out_dir.mkdir(parents=True, exist_ok=True)
            atomic_write_text(cfg.out_dir / "error.json", text)
        except OSError:
            pass


def main(argv=None) -> int:
    cfg = None
    try:
        cfg = parse_config(argv)
        return COMMANDS[cfg.command](cfg)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (UsageError, ModelFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DegenerateVarianceError as exc:
        _error_json(cfg, "degenerate variance", str(exc), 2)
        return 2
    except (
        KrylovConvergenceError,
        SpectralBoundError,
        MomentMismatchError,
        np.linalg.LinAlgError,
        FloatingPointError,
        RuntimeError,
        ValueError,
    ) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
