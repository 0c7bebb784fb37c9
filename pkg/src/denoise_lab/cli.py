"""Command-line front end: ``denoise-lab <subcommand> [flags]``.

Exit status is 0 on success, 2 on a usage error (bad flags or config) and 1
on a runtime failure.  Output files are written through a temporary file and
renamed into place, so a failed run never leaves a partial file.  The seed
defaults to ``$DENOISE_LAB_SEED`` and then to 0; ``--seed`` wins over both.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys

import numpy as np

from . import config as cfg
from .denoise import denoise_batch
from .errors import ConfigError, DenoiseLabError
from .flow import Schedule, extract_alpha_schedule, multistep_sample
from .lab import (
    SweepConfig,
    atomic_write_text,
    audit_bounds,
    fit_rate,
    lemma4_fd_check,
    mixture_decay_check,
    persist_curves,
    read_curves,
    run_sweep,
)
from .targets import NoisedScoreOracle, add_noise, sample_target, spec_from_items

SEED_ENV = "DENOISE_LAB_SEED"
DEFAULT_SEED = 0
PROG = "denoise-lab"


class UsageError(Exception):
    pass


def _sig(x: float) -> str:
    return f"{x:.4g}"


def _grid(text: str) -> tuple[float, float, int]:
    try:
        return cfg.parse_geometric_grid(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _floats(text: str) -> tuple[float, ...]:
    try:
        return cfg.parse_floats(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _window(text: str) -> tuple[float, float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None


# --------------------------------------------------------------------------
# shared flags


def _add_target_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("target (inline flags override --config)")
    g.add_argument("--config", metavar="PATH", help="key-value config file with target (and sweep) keys")
    g.add_argument(
        "--target",
        metavar="FAMILY",
        help="gaussian | diagonal_gaussian | subspace_gaussian | dirac_mixture | gaussian_mixture | bump",
    )
    g.add_argument("--tau", metavar="STD", help="target standard deviation (data units)")
    g.add_argument("--taus", metavar="STD,...", help="per-coordinate or per-component standard deviations (data units)")
    g.add_argument("--mean", metavar="X,...", help="mean vector of a diagonal Gaussian (data units)")
    g.add_argument("--ambient-dim", metavar="D", help="ambient dimension d of a subspace Gaussian (count)")
    g.add_argument("--intrinsic-dim", metavar="M", help="subspace dimension m (count, 1 <= m <= d)")
    g.add_argument("--locations", metavar="PTS", help="Dirac locations, ';' between points, ',' between coordinates (data units)")
    g.add_argument("--means", metavar="PTS", help="mixture component means, same format as --locations (data units)")
    g.add_argument("--weights", metavar="W,...", help="mixture weights (probabilities summing to 1)")


_TARGET_KEYS = {
    "target": "family",
    "tau": "tau",
    "taus": "taus",
    "mean": "mean",
    "ambient_dim": "ambient_dim",
    "intrinsic_dim": "intrinsic_dim",
    "locations": "locations",
    "means": "means",
    "weights": "weights",
}


def _items(args) -> dict[str, str]:
    items = cfg.read_kv(args.config) if args.config else {}
    for attr, key in _TARGET_KEYS.items():
        v = getattr(args, attr, None)
        if v is not None:
            items[key] = v
    if "family" not in items:
        raise UsageError("no target given; use --target or --config")
    return items


def _target(args):
    items = _items(args)
    return spec_from_items({k: v for k, v in items.items() if k in _TARGET_KEYS.values()})


def _add_run_flags(p: argparse.ArgumentParser, *, workers: bool = True) -> None:
    p.add_argument("--seed", type=int, default=None, help=f"base RNG seed (integer >= 0; default ${SEED_ENV} or {DEFAULT_SEED})")
    if workers:
        p.add_argument(
            "--workers", type=int, default=None, help="worker processes (count; default: available cores)"
        )


def _seed(args) -> int:
    if args.seed is not None:
        seed = args.seed
    elif os.environ.get(SEED_ENV, "").strip():
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {os.environ[SEED_ENV]!r}") from None
    else:
        seed = DEFAULT_SEED
    if seed < 0:
        raise UsageError("seed must be >= 0")
    return seed


def _workers(args) -> int:
    w = args.workers if args.workers is not None else (os.cpu_count() or 1)
    if w < 1:
        raise UsageError("--workers must be >= 1")
    return w


def _matrix_csv(data: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{j + 1}" for j in range(data.shape[1])])
    for row in data:
        w.writerow([f"{v:.17g}" for v in row])
    return buf.getvalue()


# --------------------------------------------------------------------------
# subcommands


def cmd_curves(args) -> int:
    items = _items(args)
    overrides = {
        "alphas": args.alphas,
        "sigma": args.sigma,
        "estimator": args.estimator,
        "n": None if args.n is None else str(args.n),
        "bandwidth": None if args.bandwidth is None else repr(args.bandwidth),
    }
    for k, v in overrides.items():
        if v is not None:
            items[k] = v
    items["seed"] = str(_seed(args))
    items["workers"] = str(_workers(args))
    if "sigma" not in items:
        raise UsageError("no sigma grid given; use --sigma min:max:count")
    sweep = SweepConfig.from_items(items)
    table = run_sweep(sweep)
    persist_curves(table, args.out)
    print(f"wrote {len(table)} rows to {args.out}")
    for a in sweep.alphas:
        sub = table.select(alpha=a)
        vals = sub.column("value")
        print(f"alpha={_sig(a)}: distance from {_sig(vals.min())} to {_sig(vals.max())} ({sub.rows[0].method})")
    return 0


def cmd_rates(args) -> int:
    table = read_curves(args.inp)
    if args.method:
        table = table.select(method=args.method)
    fit = fit_rate(table, args.window, alpha=args.alpha)
    print(f"slope={_sig(fit.slope)} intercept={_sig(fit.intercept)} r2={_sig(fit.r2)} points={len(fit.points)}")
    return 0


def cmd_bounds(args) -> int:
    spec = _target(args)
    lo, hi, count = args.sigma
    sigmas = np.geomspace(lo, hi, count) if count > 1 else np.array([lo])
    table = audit_bounds(
        spec,
        args.alphas,
        sigmas,
        args.n,
        _seed(args),
        kind=args.kind,
        estimator=args.estimator,
        bandwidth=args.bandwidth,
        workers=_workers(args),
    )
    atomic_write_text(args.out, table.to_csv())
    applicable = [r for r in table.rows if r.holds is not None]
    held = sum(bool(r.holds) for r in applicable)
    print(f"wrote {len(table.rows)} rows to {args.out}; bound holds on {held}/{len(applicable)} applicable rows")
    if not applicable:
        print("bound not applicable to this target (infinite constant)")
    return 0


def cmd_sample(args) -> int:
    spec = _target(args)
    seed = _seed(args)
    batch = sample_target(spec, args.n, seed)
    if args.sigma is not None:
        batch = add_noise(batch, args.sigma, seed + 1)
        if args.alpha is not None:
            batch = denoise_batch(NoisedScoreOracle(spec), batch, args.sigma, args.alpha)
    elif args.alpha is not None:
        raise UsageError("--alpha needs --sigma")
    atomic_write_text(args.out, _matrix_csv(batch.data))
    mean = batch.data.mean(axis=0)
    print(f"wrote {batch.n} samples of dimension {batch.dim} to {args.out}; |mean|={_sig(float(np.linalg.norm(mean)))}")
    return 0


def cmd_flow(args) -> int:
    spec = _target(args)
    if args.schedule:
        schedule = Schedule.from_items(cfg.read_kv(args.schedule))
    else:
        if args.count is None or args.t_max is None:
            raise UsageError("give --schedule PATH or both --count and --t-max")
        try:
            schedule = Schedule.make(args.count, args.t_max, args.t_min, args.spacing, args.sigma_fn, args.scale_fn)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    batch = multistep_sample(NoisedScoreOracle(spec), schedule, args.method, args.n, _seed(args))
    alphas = extract_alpha_schedule(schedule, args.method)
    atomic_write_text(args.out, _matrix_csv(batch.data))
    std = batch.data.std(axis=0)
    print(f"wrote {batch.n} samples to {args.out}; per-coordinate std {', '.join(_sig(s) for s in std)}")
    print(f"alpha schedule: first {_sig(alphas[0])}, last {_sig(alphas[-1])}, steps {alphas.size}")
    return 0


def cmd_mixture_decay(args) -> int:
    lo, hi, count = args.sigma
    sigmas = np.geomspace(lo, hi, count) if count > 1 else np.array([lo])
    check = mixture_decay_check(args.mu, sigmas, args.alpha)
    if args.out:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sigma", "w2"])
        for s, v in zip(check.sigmas, check.values):
            w.writerow([f"{s:.17g}", f"{v:.17g}"])
        atomic_write_text(args.out, buf.getvalue())
    if check.fit is not None:
        print(f"slope of log W2 against 1/sigma^2: {_sig(check.fit.slope)} (r2={_sig(check.fit.r2)})")
    print(f"super-polynomial decay: {'yes' if check.super_polynomial else 'no'}")
    if check.underflow:
        print(f"below quadrature floor at sigma = {', '.join(_sig(s) for s in check.underflow)}")
    return 0


def cmd_lemma4(args) -> int:
    spec = _target(args)
    rows = lemma4_fd_check(spec, args.t, args.n, _seed(args))
    if args.out:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "empirical", "stderr", "bound", "margin", "holds"])
        for r in rows:
            w.writerow([f"{r.t:.17g}", f"{r.empirical:.17g}", f"{r.stderr:.17g}", f"{r.bound:.17g}", f"{r.margin:.17g}", str(r.holds).lower()])
        atomic_write_text(args.out, buf.getvalue())
    for r in rows:
        extra = "" if r.max_rel_error is None else f" fd-vs-exact={_sig(r.max_rel_error)}"
        print(f"t={_sig(r.t)}: mean square {_sig(r.empirical)} +- {_sig(r.stderr)}, bound {_sig(r.bound)}, margin {_sig(r.margin)}x{extra}")
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description="alpha-denoising laboratory")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", required=True)

    p = sub.add_parser("curves", help="distance after denoising over a sigma grid, as CSV")
    _add_target_flags(p)
    p.add_argument("--alphas", metavar="A,...", help="denoising coefficients (dimensionless; default 0,0.5,1)")
    p.add_argument("--sigma", metavar="MIN:MAX:COUNT", help="geometric noise grid (standard deviations, data units)")
    p.add_argument(
        "--estimator",
        help="auto | gaussian_closed_form | dirac_quadrature | empirical_1d_sorted | empirical_assignment | mmd_ustat",
    )
    p.add_argument("--n", type=int, help="Monte Carlo samples per sigma (count; default 100000)")
    p.add_argument("--bandwidth", type=float, help="MMD kernel bandwidth (data units; default 1)")
    p.add_argument("--out", required=True, metavar="PATH", help="output CSV")
    _add_run_flags(p)
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("rates", help="log-log slope of a curve CSV inside a sigma window")
    p.add_argument("--in", dest="inp", required=True, metavar="PATH", help="curve CSV written by 'curves'")
    p.add_argument("--alpha", type=float, help="select this denoising coefficient (dimensionless)")
    p.add_argument("--window", type=_window, required=True, metavar="LO:HI", help="sigma window (standard deviations, data units)")
    p.add_argument("--method", help="select rows with this method tag")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("bounds", help="audit distances against the theoretical envelopes")
    _add_target_flags(p)
    p.add_argument("--kind", choices=("prop3", "prop4", "cor2"), default="prop3", help="which envelope (default prop3)")
    p.add_argument("--alphas", type=_floats, default=(0.0, 0.5, 1.0), metavar="A,...", help="denoising coefficients (dimensionless)")
    p.add_argument("--sigma", type=_grid, required=True, metavar="MIN:MAX:COUNT", help="geometric noise grid (standard deviations, data units)")
    p.add_argument("--estimator", default="auto", help="distance estimator for W2 audits (default auto)")
    p.add_argument("--bandwidth", type=float, default=1.0, help="MMD kernel bandwidth for cor2 (data units)")
    p.add_argument("--n", type=int, default=10**5, help="Monte Carlo samples per sigma (count)")
    p.add_argument("--out", required=True, metavar="PATH", help="output CSV")
    _add_run_flags(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("sample", help="draw target samples, optionally noised and denoised")
    _add_target_flags(p)
    p.add_argument("--n", type=int, required=True, help="number of samples (count)")
    p.add_argument("--sigma", type=float, help="add Gaussian noise of this standard deviation (data units)")
    p.add_argument("--alpha", type=float, help="then denoise with this coefficient (dimensionless)")
    p.add_argument("--out", required=True, metavar="PATH", help="output CSV, one row per sample")
    _add_run_flags(p, workers=False)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("flow", help="sample with the DDIM or Euler stepper on a noise schedule")
    _add_target_flags(p)
    p.add_argument("--schedule", metavar="PATH", help="schedule config (count, t_max, t_min, spacing, sigma_fn, scale_fn)")
    p.add_argument("--count", type=int, help="number of steps (count)")
    p.add_argument("--t-max", type=float, help="initial time (time units; sigma = sqrt(t) or t)")
    p.add_argument("--t-min", type=float, help="smallest nonzero time for geometric grids (time units; default 1e-3 t_max)")
    p.add_argument("--spacing", choices=("geometric", "uniform"), default="geometric", help="grid spacing")
    p.add_argument("--sigma-fn", choices=("sqrt_t", "linear_t"), default="sqrt_t", help="noise level as a function of time")
    p.add_argument("--scale-fn", choices=("unit",), default="unit", help="scale as a function of time")
    p.add_argument("--method", choices=("ddim", "euler"), default="ddim", help="stepper")
    p.add_argument("--n", type=int, default=10**4, help="number of trajectories (count)")
    p.add_argument("--out", required=True, metavar="PATH", help="output CSV of terminal samples")
    _add_run_flags(p, workers=False)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("mixture-decay", help="W2 decay of the symmetric two-Dirac mixture as sigma shrinks")
    p.add_argument("--mu", type=float, default=1.0, help="half distance between the two points (data units)")
    p.add_argument("--sigma", type=_grid, required=True, metavar="MIN:MAX:COUNT", help="geometric noise grid within (0, mu/2] (data units)")
    p.add_argument("--alpha", type=float, default=1.0, help="denoising coefficient (dimensionless)")
    p.add_argument("--out", metavar="PATH", help="optional CSV of sigma,w2")
    p.set_defaults(func=cmd_mixture_decay)

    p = sub.add_parser("lemma4", help="finite-difference audit of the score time derivative along the flow")
    _add_target_flags(p)
    p.add_argument("--t", type=_floats, default=(0.01, 0.1), metavar="T,...", help="times to probe (variance units)")
    p.add_argument("--n", type=int, default=10**5, help="number of trajectories (count, >= 100)")
    p.add_argument("--out", metavar="PATH", help="optional CSV report")
    _add_run_flags(p, workers=False)
    p.set_defaults(func=cmd_lemma4)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 2 on bad flags, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2
    except (DenoiseLabError, ValueError, ArithmeticError, OSError, RuntimeError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"{PROG}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
