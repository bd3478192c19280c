"""Command-line interface: data generation, fitting, sampling, densities.

Subcommands: gen-data, fit, sample, density, loss-study, eigen-report.
Every run is deterministic given (config, seed) and writes a provenance JSON
sidecar next to its output. Exit codes: 0 ok, 2 config error, 3 solver
error, 4 domain error, 5 unsupported target.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .basis import (
    OU,
    TRUNCATED_BM,
    hermite_univariate_basis,
    product_table,
    trig_basis_1d,
    trig_basis_nd,
)
from .errors import (
    ConfigError,
    DomainError,
    EigenScoreError,
    IllConditionedError,
    InvalidInputError,
    NonConvergenceError,
    UnsupportedTargetError,
)
from .generate import sample_pf_ode, sample_reverse_sde, log_density
from .odeint import IntegratorConfig
from .moments import analytic_moments, modulation_shrink, sample_moments
from .process import Schedule, noise_at, wrap_torus
from .solver import (
    QuadraticSystem,
    SystemAssembler,
    dataset_hash,
    load_model,
    presolve_grid,
    save_model,
    solve_coefficients,
    trapezoid_grid,
    QuadratureSpec,
)
from .targets import (
    AnalyticReference,
    DomainMap,
    bart_simpson,
    sample_gaussian_mixture,
    toy2d,
    _TOYS,
)

WORKERS_ENV = "EIGENSCORE_WORKERS"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_DOMAIN = 4
EXIT_UNSUPPORTED = 5


def _default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _write_provenance(out_path, payload):
    side = out_path + ".provenance.json"
    with open(side, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    return side


def _file_hash(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]


def _cfg_dict(args):
    d = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    return {k: (v if not isinstance(v, np.ndarray) else v.tolist()) for k, v in d.items()}


def _save_csv(path, data, header):
    data = np.atleast_2d(np.asarray(data, dtype=float))
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def _load_csv(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2))


def _coord_header(d):
    return ",".join(f"x{i + 1}" for i in range(d))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    rng = np.random.default_rng(args.seed)
    if args.target == "bart-simpson":
        pts = sample_gaussian_mixture(bart_simpson(), args.n, rng)
    elif args.target in _TOYS:
        pts = toy2d(args.target, args.n, rng).points
    else:
        raise ConfigError(f"unknown target {args.target!r}")
    _save_csv(args.out, pts, _coord_header(pts.shape[1]))
    _write_provenance(args.out, {
        "command": "gen-data",
        "seed": args.seed,
        "cfg": _cfg_dict(args),
        "dataset_hash": dataset_hash(pts),
    })
    return EXIT_OK


def _build_basis(process, dimension, args):
    if process == TRUNCATED_BM:
        if dimension == 1:
            return trig_basis_1d(args.max_freq)
        return trig_basis_nd(dimension, args.eigenvalue_floor)
    return hermite_univariate_basis(dimension, args.order)


def _build_schedule(args):
    if args.schedule == "VE":
        return Schedule.ve(args.sigma_min, args.sigma_max)
    if args.schedule == "VP":
        return Schedule.vp(args.beta0, args.beta1)
    raise ConfigError(f"unknown schedule {args.schedule!r}")


def cmd_fit(args):
    data = _load_csv(args.data)
    if not np.all(np.isfinite(data)):
        raise DomainError("dataset contains non-finite values")
    d = data.shape[1]
    process = args.process
    if process == TRUNCATED_BM:
        outside = int(np.count_nonzero(np.any(np.abs(data) > math.pi, axis=1)))
        if outside:
            print(f"wrapped {outside} points into [-pi, pi]^{d}", file=sys.stderr)
            data = wrap_torus(data)
    basis = _build_basis(process, d, args)
    table = product_table(basis)
    moments = sample_moments(basis, data)
    if args.shrinkage == "modulation":
        moments = modulation_shrink(moments)
    elif args.shrinkage != "none":
        raise ConfigError(f"unknown shrinkage mode {args.shrinkage!r}")
    schedule = _build_schedule(args)
    model = presolve_grid(
        basis, table, moments, schedule, n_times=args.grid_size,
        domain_map=DomainMap.identity(d),
        provenance={
            "seed": args.seed,
            "dataset_hash": dataset_hash(data),
            "shrinkage": args.shrinkage,
            "n_samples": int(data.shape[0]),
        },
    )
    save_model(model, args.out)
    conds = model.diagnostics["condition"]
    print(f"fit complete: {len(model.grid)} grid nodes, "
          f"max condition {conds.max():.3e}, "
          f"max residual {model.diagnostics['residual'].max():.3e}, "
          f"{int(model.diagnostics['regularized'].sum())} regularized")
    _write_provenance(args.out, {
        "command": "fit",
        "seed": args.seed,
        "cfg": _cfg_dict(args),
        "model_hash": _file_hash(args.out),
    })
    return EXIT_OK


def cmd_sample(args):
    model = load_model(args.model)
    rng = np.random.default_rng(args.seed)
    cfg = IntegratorConfig(rtol=args.rtol, atol=args.atol)
    if args.method == "pf-ode":
        pts = sample_pf_ode(model, args.n, cfg, rng, prior=args.prior)
    elif args.method == "reverse-sde":
        pts = sample_reverse_sde(model, args.n, args.n_steps, rng, prior=args.prior)
    else:
        raise ConfigError(f"unknown method {args.method!r}")
    if not model.domain_map.is_identity:
        pts = model.domain_map.inverse(pts)
    _save_csv(args.out, pts, _coord_header(pts.shape[1]))
    _write_provenance(args.out, {
        "command": "sample",
        "seed": args.seed,
        "cfg": _cfg_dict(args),
        "model_hash": _file_hash(args.model),
    })
    return EXIT_OK


def cmd_density(args):
    model = load_model(args.model)
    d = model.basis.dimension
    cfg = IntegratorConfig(rtol=args.rtol, atol=args.atol)
    spec = QuadratureSpec(kind="trapezoid", n_nodes=args.grid_n,
                          lower=args.lower, upper=args.upper)
    nodes, _ = trapezoid_grid(spec, d)
    ld = np.empty(nodes.shape[0])
    chunk = max(1, args.chunk)
    for s in range(0, nodes.shape[0], chunk):
        ld[s:s + chunk] = log_density(model, nodes[s:s + chunk], cfg)
    _save_csv(args.out, np.column_stack([nodes, ld]),
              _coord_header(d) + ",log_density")
    _write_provenance(args.out, {
        "command": "density",
        "seed": args.seed,
        "cfg": _cfg_dict(args),
        "model_hash": _file_hash(args.model),
    })
    return EXIT_OK


# ---------------------------------------------------------------------------
# Shrinkage loss study
# ---------------------------------------------------------------------------

def tau_for_internal_time(schedule, t_target):
    """The normalized tau whose internal time t(tau) equals t_target."""
    if schedule.kind == "VE":
        sigma = math.sqrt(2.0 * t_target)
        tau = math.log(sigma / schedule.sigma_min) / math.log(
            schedule.sigma_max / schedule.sigma_min)
    else:
        # t = b0 tau/2 + (b1-b0) tau^2/4: positive root of the quadratic
        a = (schedule.beta1 - schedule.beta0) / 4.0
        b = schedule.beta0 / 2.0
        tau = (-b + math.sqrt(b * b + 4.0 * a * t_target)) / (2.0 * a) if a else t_target / b
    if not (0.0 <= tau <= 1.0):
        raise InvalidInputError(f"t={t_target} is outside the schedule's range")
    return tau


def _loss_at_tau(basis, table, moments, schedule, tau, reference, n_quad):
    """Fit at a single tau and return the weighted L2 score error."""
    t = noise_at(schedule, tau)[2]
    assembler = SystemAssembler(basis, table, moments)
    alpha, _ = solve_coefficients(assembler.system(t))
    spec = QuadratureSpec(kind="trapezoid", n_nodes=n_quad)
    nodes, weights = trapezoid_grid(spec, basis.dimension)
    diff = basis.weighted_eval(nodes, alpha)[1] - reference.relative_score(nodes, tau)
    dens = reference.pdf(nodes, tau)
    return float(weights @ (dens * (diff * diff).sum(axis=1)))


def _loss_study_rep(payload):
    (rep, seed, n, sizes, taus, sched_dict, n_quad) = payload
    schedule = Schedule.from_dict(sched_dict)
    gm = bart_simpson()
    reference = AnalyticReference(gm, schedule, TRUNCATED_BM)
    rng = np.random.default_rng([seed, rep])
    data = wrap_torus(sample_gaussian_mixture(gm, n, rng))
    out = []
    for size in sizes:
        basis = trig_basis_1d(size)
        table = product_table(basis)
        raw = sample_moments(basis, data)
        shrunk = modulation_shrink(raw)
        for tau in taus:
            for name, m in (("sample-mean", raw), ("shrinkage", shrunk)):
                out.append((rep, size, tau, name,
                            _loss_at_tau(basis, table, m, schedule, tau,
                                         reference, n_quad)))
    return out


def cmd_loss_study(args):
    if args.target != "bart-simpson":
        raise UnsupportedTargetError(
            f"loss study needs an analytic reference; {args.target!r} has none")
    schedule = _build_schedule(args)
    sizes = [int(s) for s in args.basis_sizes.split(",")]
    if args.taus:
        taus = [float(s) for s in args.taus.split(",")]
    else:
        taus = [0.0, tau_for_internal_time(schedule, 0.02)]
    payloads = [(rep, args.seed, args.n, sizes, taus, schedule.to_dict(),
                 args.n_quad) for rep in range(args.reps)]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_loss_study_rep, payloads))
    else:
        results = [_loss_study_rep(p) for p in payloads]
    rows = [r for rep_rows in results for r in rep_rows]
    # aggregate per (size, tau, estimator) cell, canonical ordering
    cells = {}
    for rep, size, tau, name, loss in rows:
        cells.setdefault((size, tau, name), []).append(loss)
    lines = ["basis_size,tau,estimator,mean,se,replications"]
    for (size, tau, name) in sorted(cells):
        v = np.asarray(cells[(size, tau, name)])
        se = v.std(ddof=1) / math.sqrt(len(v)) if len(v) > 1 else 0.0
        lines.append(f"{size},{tau:.10g},{name},{v.mean():.17g},{se:.17g},{len(v)}")
    with open(args.out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_provenance(args.out, {
        "command": "loss-study",
        "seed": args.seed,
        "cfg": _cfg_dict(args),
    })
    return EXIT_OK


def cmd_eigen_report(args):
    basis = _build_basis(args.process, args.dimension, args)
    lines = [f"process={basis.process} dimension={basis.dimension}",
             f"active functions (excl. constant): {basis.n_active}",
             f"extended functions: {len(basis.extended)}",
             "idx\tkind\teigenvalue\tindex"]
    for i, f in enumerate(basis.functions):
        lines.append(f"{i}\t{f.kind}\t{f.eigenvalue:g}\t{f.index}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(p, out_required=True):
    p.add_argument("--config", default=None, help="JSON file of option defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=out_required)
    p.add_argument("--workers", type=int, default=_default_workers())


def _add_basis_flags(p):
    p.add_argument("--max-freq", type=int, default=25)
    p.add_argument("--eigenvalue-floor", type=float, default=-125.0)
    p.add_argument("--order", type=int, default=2)


def _add_schedule_flags(p, default="VE"):
    p.add_argument("--schedule", choices=["VE", "VP"], default=default)
    p.add_argument("--sigma-min", type=float, default=0.01)
    p.add_argument("--sigma-max", type=float, default=50.0)
    p.add_argument("--beta0", type=float, default=0.1)
    p.add_argument("--beta1", type=float, default=20.0)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="eigenscore",
        description="Operator-spectrum score models: fit, sample, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="draw a dataset and write it as CSV")
    _add_common(p)
    p.add_argument("--target", required=True,
                   choices=["bart-simpson"] + sorted(_TOYS))
    p.add_argument("--n", type=int, default=2000)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("fit", help="fit a score model to a dataset")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--process", choices=[TRUNCATED_BM, OU], default=TRUNCATED_BM)
    p.add_argument("--basis", choices=["trig", "hermite"], default="trig")
    _add_basis_flags(p)
    _add_schedule_flags(p)
    p.add_argument("--shrinkage", choices=["none", "modulation"], default="modulation")
    p.add_argument("--grid-size", type=int, default=1000)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sample", help="draw samples from a fitted model")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--method", choices=["pf-ode", "reverse-sde"], default="pf-ode")
    p.add_argument("--n-steps", type=int, default=1000)
    p.add_argument("--prior", choices=["uniform", "wrapped-normal"], default="uniform")
    p.add_argument("--rtol", type=float, default=1e-5)
    p.add_argument("--atol", type=float, default=1e-6)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("density", help="evaluate the model log-density on a grid")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--grid-n", type=int, default=4096)
    p.add_argument("--lower", type=float, default=-math.pi)
    p.add_argument("--upper", type=float, default=math.pi)
    p.add_argument("--chunk", type=int, default=4096)
    p.add_argument("--rtol", type=float, default=1e-5)
    p.add_argument("--atol", type=float, default=1e-6)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("loss-study",
                       help="score-matching loss vs basis size, with and without shrinkage")
    _add_common(p)
    p.add_argument("--target", default="bart-simpson")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--basis-sizes", default="5,10,15,20,25")
    p.add_argument("--taus", default=None,
                   help="comma list of tau values; default: smallest grid tau and t=0.02")
    p.add_argument("--n-quad", type=int, default=4096)
    _add_schedule_flags(p)
    p.set_defaults(func=cmd_loss_study)

    p = sub.add_parser("eigen-report", help="print the basis enumeration and counts")
    _add_common(p, out_required=False)
    p.add_argument("--process", choices=[TRUNCATED_BM, OU], default=TRUNCATED_BM)
    p.add_argument("--dimension", type=int, default=1)
    _add_basis_flags(p)
    p.set_defaults(func=cmd_eigen_report)
    return parser


_KNOWN_ERRORS = (
    (ConfigError, EXIT_CONFIG),
    (UnsupportedTargetError, EXIT_UNSUPPORTED),
    (DomainError, EXIT_DOMAIN),
    (IllConditionedError, EXIT_SOLVER),
    (NonConvergenceError, EXIT_SOLVER),
    (InvalidInputError, EXIT_CONFIG),
)


def _apply_config_file(parser, argv):
    """Seed parser defaults from --config JSON; explicit flags still win."""
    if "--config" not in argv:
        return
    path = argv[argv.index("--config") + 1]
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    known = {a.dest for sp in parser._subparsers._group_actions
             for sp_parser in sp.choices.values()
             for a in sp_parser._actions}
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for sp in parser._subparsers._group_actions:
        for sp_parser in sp.choices.values():
            sp_parser.set_defaults(**{k: v for k, v in cfg.items()
                                      if k in {a.dest for a in sp_parser._actions}})


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return EXIT_CONFIG if exc.code not in (0, None) else 0
        return args.func(args)
    except EigenScoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for cls, code in _KNOWN_ERRORS:
            if isinstance(exc, cls):
                return code
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
