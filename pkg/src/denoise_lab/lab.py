"""Experiments: noise sweeps, rate fits, bound audits and two targeted checks.

Monte Carlo distances use a coupled pair of samples.  For each noise level
one noisy batch ``Y`` is drawn and denoised with every alpha (common random
numbers), and the clean batch is the exact transport of ``Y`` back to the
target where one is available: the linear flow map for Gaussians, the
quantile map for 1-D Dirac mixtures and the probability-flow ODE for
Gaussian mixtures.  Each clean batch is an exact (or ODE-accurate) sample of
the target, so the empirical distance is a valid estimate whose sampling
noise scales with the distance itself.  Targets without a transport (the bump
density, Dirac mixtures in d > 1) fall back to an independent target batch.
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from . import config as cfg
from ._rng import derive_seed
from .bounds import (
    bound_constants,
    constant_C,
    cor2_prefactors,
    lemma4_constant,
    prop3_prefactor,
    prop4_prefactor,
    smoothed_constants_for,
    subspace_w2_decomposition,
)
from .denoise import denoise_all_alphas
from .errors import ConfigError, IncompatibleEstimatorError, PersistError
from .flow import _integrate, pf_ode_integrate
from .metrics import (
    ASSIGNMENT_CAP,
    DistanceReport,
    KernelSpec,
    dirac_mixture_w2_full,
    empirical_w2_assignment,
    empirical_wp_1d,
    gaussian_w2_alpha,
    mmd_ustat,
)
from .targets import (
    BumpDensity1D,
    DiagonalGaussian,
    DiracMixture,
    Gaussian1D,
    GaussianMixture,
    NoisedScoreOracle,
    SampleBatch,
    SubspaceGaussian,
    TargetSpec,
    add_noise,
    sample_target,
    spec_from_items,
    spec_to_items,
)

ESTIMATORS = (
    "auto",
    "gaussian_closed_form",
    "dirac_quadrature",
    "empirical_1d_sorted",
    "empirical_assignment",
    "mmd_ustat",
)
CSV_HEADER = ("target", "alpha", "sigma", "method", "value", "stderr", "n")
AUDIT_HEADER = ("target", "sigma", "alpha", "empirical", "bound", "holds")
ODE_STEPS = 64
MC_RESAMPLES = 200


def target_label(spec: TargetSpec) -> str:
    """Short comma-free description used in CSV files."""
    if isinstance(spec, Gaussian1D):
        return f"gaussian tau={spec.tau!r}"
    if isinstance(spec, DiagonalGaussian):
        return f"diagonal_gaussian d={spec.dim}"
    if isinstance(spec, SubspaceGaussian):
        return f"subspace_gaussian d={spec.ambient_dim} m={spec.intrinsic_dim} tau={spec.tau!r}"
    if isinstance(spec, DiracMixture):
        return f"dirac_mixture k={len(spec.locations)} d={spec.dim}"
    if isinstance(spec, GaussianMixture):
        return f"gaussian_mixture k={len(spec.weights)} d={spec.dim}"
    return spec.family


# --------------------------------------------------------------------------
# sweep configuration


@dataclass(frozen=True)
class SweepConfig:
    """One sigma sweep of one target.

    Attributes:
        target: The target law.
        alphas: Denoising coefficients, evaluated on a shared noisy batch.
        sigma_min, sigma_max, sigma_count: Geometric sigma grid.
        estimator: One of :data:`ESTIMATORS`.
        n: Samples per sigma for Monte Carlo estimators.
        seed: Base seed.
        workers: Process count; results do not depend on it.
        bandwidth: Kernel bandwidth for ``mmd_ustat``.
    """

    target: TargetSpec
    alphas: tuple[float, ...]
    sigma_min: float
    sigma_max: float
    sigma_count: int
    estimator: str = "auto"
    n: int = 10**5
    seed: int = 0
    workers: int = 1
    bandwidth: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if not self.alphas or not all(math.isfinite(a) for a in self.alphas):
            raise ValueError("alphas must be a non-empty list of finite numbers")
        if not (0 < self.sigma_min and math.isfinite(self.sigma_max)):
            raise ValueError("sigma grid must be positive and finite")
        if self.sigma_count < 1:
            raise ValueError("sigma_count must be >= 1")
        if self.sigma_count == 1 and self.sigma_max != self.sigma_min:
            raise ValueError("a one-point sigma grid needs sigma_min == sigma_max")
        if self.sigma_count > 1 and not self.sigma_max > self.sigma_min:
            raise ValueError("sigma grid must be strictly increasing")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}; expected one of {ESTIMATORS}")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def sigmas(self) -> np.ndarray:
        if self.sigma_count == 1:
            return np.array([self.sigma_min])
        return np.geomspace(self.sigma_min, self.sigma_max, self.sigma_count)

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "SweepConfig":
        spec = spec_from_items({k: v for k, v in items.items() if k not in _SWEEP_KEYS})
        lo, hi, count = cfg.parse_geometric_grid(cfg.require(items, "sigma"))
        try:
            return cls(
                target=spec,
                alphas=cfg.parse_floats(items.get("alphas", "0, 0.5, 1"), "alphas"),
                sigma_min=lo,
                sigma_max=hi,
                sigma_count=count,
                estimator=items.get("estimator", "auto"),
                n=cfg.parse_int(items.get("n", "100000"), "n"),
                seed=cfg.parse_int(items.get("seed", "0"), "seed"),
                workers=cfg.parse_int(items.get("workers", "1"), "workers"),
                bandwidth=cfg.parse_float(items.get("bandwidth", "1.0"), "bandwidth"),
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"invalid sweep: {exc}") from None

    @classmethod
    def from_config(cls, text: str) -> "SweepConfig":
        return cls.from_items(cfg.parse_kv(text))

    def to_config(self) -> str:
        items = spec_to_items(self.target)
        items.update(
            alphas=cfg.fmt_floats(self.alphas),
            sigma=f"{self.sigma_min!r}:{self.sigma_max!r}:{self.sigma_count}",
            estimator=self.estimator,
            n=str(self.n),
            seed=str(self.seed),
            workers=str(self.workers),
            bandwidth=repr(self.bandwidth),
        )
        return cfg.dump_kv(items)


_SWEEP_KEYS = frozenset({"alphas", "sigma", "estimator", "n", "seed", "workers", "bandwidth"})


# --------------------------------------------------------------------------
# curve tables


@dataclass(frozen=True)
class CurveRow:
    target: str
    alpha: float
    sigma: float
    method: str
    value: float
    stderr: float | None
    n: int

    @property
    def report(self) -> DistanceReport:
        return DistanceReport(self.method, self.value, self.stderr, self.n)


@dataclass
class CurveTable:
    rows: list[CurveRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __eq__(self, other) -> bool:
        return isinstance(other, CurveTable) and self.rows == other.rows

    def alphas(self) -> list[float]:
        return sorted({r.alpha for r in self.rows})

    def select(self, alpha: float | None = None, method: str | None = None) -> "CurveTable":
        rows = [
            r
            for r in self.rows
            if (alpha is None or r.alpha == alpha) and (method is None or r.method == method)
        ]
        return CurveTable(rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow(
                [
                    r.target,
                    _fmt17(r.alpha),
                    _fmt17(r.sigma),
                    r.method,
                    _fmt17(r.value),
                    "" if r.stderr is None else _fmt17(r.stderr),
                    str(r.n),
                ]
            )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CurveTable":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise ValueError(f"expected CSV header {','.join(CSV_HEADER)}")
        rows = []
        for line in reader:
            if not line:
                continue
            t, a, s, m, v, se, n = line
            rows.append(CurveRow(t, float(a), float(s), m, float(v), float(se) if se else None, int(n)))
        return cls(rows)


def _fmt17(x: float) -> str:
    return f"{float(x):.17g}"


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and an atomic rename."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=f".{path.name}.")
    except OSError as exc:
        raise PersistError(exc.errno, f"cannot write {path}: {exc.strerror}") from None
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise PersistError(exc.errno, f"cannot write {path}: {exc.strerror}") from None


def persist_curves(table: CurveTable, path: str | os.PathLike) -> None:
    """Write ``table`` as CSV (17 significant digits) atomically."""
    atomic_write_text(path, table.to_csv())


def read_curves(path: str | os.PathLike) -> CurveTable:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise PersistError(exc.errno, f"cannot read {path}: {exc.strerror}") from None
    try:
        return CurveTable.from_csv(text)
    except ValueError as exc:
        raise PersistError(0, f"{path}: malformed curve file: {exc}") from None


# --------------------------------------------------------------------------
# exact forms and coupled Monte Carlo


def _gaussian_coordinates(spec: TargetSpec):
    """``(taus, mean, subspace_dims)`` for Gaussian families, else ``None``."""
    if isinstance(spec, Gaussian1D):
        return np.array([spec.tau]), np.zeros(1), 1
    if isinstance(spec, DiagonalGaussian):
        return np.asarray(spec.taus), np.asarray(spec.mean), spec.dim
    if isinstance(spec, SubspaceGaussian):
        return np.full(spec.intrinsic_dim, spec.tau), np.zeros(spec.ambient_dim), spec.intrinsic_dim
    return None


def closed_form_w2(spec: TargetSpec, sigma: float, alpha: float) -> float:
    """Exact W2 after alpha-denoising for the Gaussian families.

    Raises:
        IncompatibleEstimatorError: for non-Gaussian targets.
    """
    g = _gaussian_coordinates(spec)
    if g is None:
        raise IncompatibleEstimatorError(f"no closed-form W2 for a {spec.family} target")
    taus, _, m = g
    on_subspace = math.sqrt(sum(gaussian_w2_alpha(float(t), sigma, alpha) ** 2 for t in taus))
    if isinstance(spec, SubspaceGaussian):
        return subspace_w2_decomposition(on_subspace, spec.ambient_dim, m, sigma, alpha)
    return on_subspace


def symmetric_two_dirac_mu(spec: TargetSpec) -> float | None:
    """``mu`` if ``spec`` is ``(delta_-mu + delta_mu)/2`` on the line, else ``None``."""
    if not isinstance(spec, DiracMixture) or spec.dim != 1 or len(spec.locations) != 2:
        return None
    (a,), (b,) = spec.locations
    if a != -b or spec.weights[0] != spec.weights[1]:
        return None
    return abs(a)


def coupled_clean(spec: TargetSpec, noisy: SampleBatch, sigma: float, seed: int, ode_steps: int = ODE_STEPS):
    """A target sample coupled to ``noisy`` by transporting it back to noise level 0.

    Returns ``(batch, exact)``; ``exact`` is ``False`` when no transport is
    available and an independent target batch was drawn instead.
    """
    y = noisy.data
    g = _gaussian_coordinates(spec)
    if g is not None:
        taus, mean, m = g
        x = np.zeros_like(y)
        r = np.sqrt(taus**2 + sigma**2)
        x[:, :m] = mean[:m] + (taus / r) * (y[:, :m] - mean[:m])
        x[:, m:] = mean[m:]
        return noisy.with_data(x, label=spec.family), True
    if isinstance(spec, DiracMixture) and spec.dim == 1:
        locs = np.array([p[0] for p in spec.locations])
        order = np.argsort(locs)
        locs, w = locs[order], np.asarray(spec.weights)[order]
        cdf = ndtr((y[:, :1] - locs[None, :]) / sigma) @ w
        idx = np.minimum(np.searchsorted(np.cumsum(w), cdf, side="left"), locs.size - 1)
        return noisy.with_data(locs[idx][:, None], label=spec.family), True
    if isinstance(spec, GaussianMixture):
        oracle = NoisedScoreOracle(spec)
        out = pf_ode_integrate(oracle, noisy, sigma**2, 0.0, ode_steps, "rk4")
        return out.with_data(out.data, label=spec.family), True
    return sample_target(spec, noisy.n, seed), False


def _mc_reports(spec, sigma, alphas, estimator, n, seed, i_sigma, bandwidth):
    oracle = NoisedScoreOracle(spec)
    x0 = sample_target(spec, n, derive_seed(seed, i_sigma, 0))
    noisy = add_noise(x0, sigma, derive_seed(seed, i_sigma, 1))
    clean, _ = coupled_clean(spec, noisy, sigma, derive_seed(seed, i_sigma, 2))
    out = []
    for i_alpha, den in enumerate(denoise_all_alphas(oracle, noisy, sigma, alphas)):
        bseed = derive_seed(seed, i_sigma, 3, i_alpha)
        if estimator == "empirical_1d_sorted":
            rep = empirical_wp_1d(clean, den, 2.0, paired=True, resamples=MC_RESAMPLES, seed=bseed)
        elif estimator == "empirical_assignment":
            rep = empirical_w2_assignment(clean, den, resamples=MC_RESAMPLES, seed=bseed)
        else:
            rep = mmd_ustat(clean, den, KernelSpec(bandwidth), paired=True, resamples=MC_RESAMPLES, seed=bseed)
        out.append(rep)
    return out


def resolve_estimator(spec: TargetSpec, estimator: str, n: int) -> str:
    """Pick (for ``auto``) or validate the estimator for ``spec``.

    Raises:
        IncompatibleEstimatorError: when the estimator cannot handle the target.
    """
    if estimator == "auto":
        if _gaussian_coordinates(spec) is not None:
            return "gaussian_closed_form"
        if symmetric_two_dirac_mu(spec) is not None:
            return "dirac_quadrature"
        return "empirical_1d_sorted" if spec.dim == 1 else "empirical_assignment"
    if estimator == "gaussian_closed_form" and _gaussian_coordinates(spec) is None:
        raise IncompatibleEstimatorError(f"closed-form estimator needs a Gaussian target, got {spec.family}")
    if estimator == "dirac_quadrature" and symmetric_two_dirac_mu(spec) is None:
        raise IncompatibleEstimatorError("dirac_quadrature needs a symmetric two-point mixture on the line")
    if estimator == "empirical_1d_sorted" and spec.dim != 1:
        raise IncompatibleEstimatorError(f"empirical_1d_sorted needs d = 1, target has d = {spec.dim}")
    if estimator == "empirical_assignment" and n > ASSIGNMENT_CAP:
        raise IncompatibleEstimatorError(f"empirical_assignment is capped at n = {ASSIGNMENT_CAP}, got {n}")
    return estimator


def _sigma_cell(args) -> list[DistanceReport]:
    spec, sigma, alphas, estimator, n, seed, i_sigma, bandwidth = args
    if estimator == "gaussian_closed_form":
        return [DistanceReport(estimator, closed_form_w2(spec, sigma, a), None, 1) for a in alphas]
    if estimator == "dirac_quadrature":
        mu = symmetric_two_dirac_mu(spec)
        out = []
        for a in alphas:
            res = dirac_mixture_w2_full(mu, sigma, a)
            out.append(DistanceReport(estimator, res.value, None, res.n_evals))
        return out
    return _mc_reports(spec, sigma, alphas, estimator, n, seed, i_sigma, bandwidth)


def _map_cells(cells, workers: int):
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as pool:
            return list(pool.map(_sigma_cell, cells))
    return [_sigma_cell(c) for c in cells]


def run_sweep(config: SweepConfig) -> CurveTable:
    """Distance after alpha-denoising at every (sigma, alpha) of the sweep.

    Rows are sorted by sigma, then alpha.  The output depends only on the
    config minus ``workers``: each sigma cell derives its seeds from
    ``(seed, sigma index)`` and is evaluated independently.

    Raises:
        IncompatibleEstimatorError: if the estimator does not fit the target.
    """
    est = resolve_estimator(config.target, config.estimator, config.n)
    label = target_label(config.target)
    sigmas = config.sigmas
    cells = [
        (config.target, float(s), config.alphas, est, config.n, config.seed, i, config.bandwidth)
        for i, s in enumerate(sigmas)
    ]
    results = _map_cells(cells, config.workers)
    rows = []
    for s, reps in zip(sigmas, results):
        for a, rep in zip(config.alphas, reps):
            rows.append(CurveRow(label, a, float(s), rep.method, rep.value, rep.stderr, rep.n))
    rows.sort(key=lambda r: (r.sigma, r.alpha))
    return CurveTable(rows)


# --------------------------------------------------------------------------
# rate fits


@dataclass(frozen=True)
class SlopeFit:
    """Least-squares line through ``points``; ``r2`` from the same points."""

    slope: float
    intercept: float
    r2: float
    points: tuple[tuple[float, float], ...]


def fit_line(x, y) -> SlopeFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 4:
        raise ValueError(f"a rate fit needs at least 4 points, got {x.size}")
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return SlopeFit(float(slope), float(intercept), r2, tuple(zip(x.tolist(), y.tolist())))


def fit_rate(curve: CurveTable, sigma_window: tuple[float, float], alpha: float | None = None) -> SlopeFit:
    """Fit ``log(distance) = slope * log(sigma) + intercept`` inside the window.

    Raises:
        ValueError: if the curve mixes several alphas (and ``alpha`` is not
            given), has fewer than 4 points in the window, or a non-positive
            distance there.
    """
    if alpha is not None:
        curve = curve.select(alpha=alpha)
    if len(set(curve.alphas())) > 1:
        raise ValueError("curve holds several alphas; pass alpha=")
    lo, hi = sigma_window
    pad = 1e-12
    rows = [r for r in curve.rows if lo * (1 - pad) <= r.sigma <= hi * (1 + pad)]
    if len(rows) < 4:
        raise ValueError(f"need at least 4 grid points in [{lo}, {hi}], got {len(rows)}")
    vals = np.array([r.value for r in rows])
    if np.any(vals <= 0):
        raise ValueError("distances in the fit window must be > 0")
    return fit_line(np.log([r.sigma for r in rows]), np.log(vals))


# --------------------------------------------------------------------------
# bound audits


@dataclass(frozen=True)
class AuditRow:
    target: str
    sigma: float
    alpha: float
    empirical: float
    stderr: float
    bound: float
    holds: bool | None  # None: bound not applicable

    def csv_fields(self) -> list[str]:
        holds = "na" if self.holds is None else ("true" if self.holds else "false")
        return [self.target, _fmt17(self.sigma), _fmt17(self.alpha), _fmt17(self.empirical), _fmt17(self.bound), holds]


@dataclass
class AuditTable:
    rows: list[AuditRow] = field(default_factory=list)

    def all_hold(self) -> bool:
        return all(r.holds for r in self.rows if r.holds is not None)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(AUDIT_HEADER)
        for r in self.rows:
            w.writerow(r.csv_fields())
        return buf.getvalue()


AUDIT_KINDS = ("prop3", "prop4", "cor2")


def _audit_constants(spec: TargetSpec, kind: str, n_const: int, seed: int):
    """``(C_upper, BoundConstants or None)``; infinite when not applicable."""
    c = constant_C(spec, n=n_const, seed=seed)
    c_up = c.upper(3.0) if c.finite else math.inf
    if kind != "prop4":
        return c_up, None
    if isinstance(spec, GaussianMixture):
        return c_up, smoothed_constants_for(spec)
    return c_up, bound_constants(spec)


def audit_bounds(
    target: TargetSpec,
    alphas,
    sigma_grid,
    n: int,
    seed: int = 0,
    *,
    kind: str = "prop3",
    estimator: str = "auto",
    bandwidth: float = 1.0,
    n_const: int = 10**6,
    workers: int = 1,
) -> AuditTable:
    """Compare distances after denoising with a theoretical envelope.

    ``prop3``: W2 <= sqrt((1 + 4 alpha^2) C / 2) sigma^2.  ``prop4``: W2 at
    alpha = 1/2 <= K sigma^4 (other alphas are skipped).  ``cor2``: MMD <=
    K1 sigma^2, and <= K2 sigma^4 at alpha = 1/2.  A Monte Carlo constant
    enters the bound as ``value + 3 stderr``; a row holds when
    ``empirical <= bound + 3 stderr``.  Infinite constants give rows with an
    infinite bound and ``holds = None``.
    """
    if kind not in AUDIT_KINDS:
        raise ValueError(f"unknown audit kind {kind!r}; expected one of {AUDIT_KINDS}")
    alphas = tuple(float(a) for a in alphas)
    if kind == "prop4":
        alphas = tuple(a for a in alphas if a == 0.5)
        if not alphas:
            raise ValueError("the prop4 audit only covers alpha = 0.5")
    sigmas = np.asarray(sigma_grid, dtype=float)
    if sigmas.size == 0 or np.any(sigmas <= 0):
        raise ValueError("sigma grid must be non-empty and positive")
    c_up, k = _audit_constants(target, kind, n_const, seed)
    if kind == "cor2":
        est = "mmd_ustat"
    else:
        est = resolve_estimator(target, estimator, n)
    label = target_label(target)
    cells = [(target, float(s), alphas, est, n, seed, i, bandwidth) for i, s in enumerate(sigmas)]
    results = _map_cells(cells, workers)
    rows = []
    for s, reps in zip(sigmas, results):
        for a, rep in zip(alphas, reps):
            if kind == "prop3":
                bound = prop3_prefactor(c_up, a) * s**2 if math.isfinite(c_up) else math.inf
            elif kind == "prop4":
                bound = prop4_prefactor(k) * s**4
            else:
                if math.isfinite(c_up):
                    k1, k2 = cor2_prefactors(c_up, a, KernelSpec(bandwidth), target.dim)
                    bound = min(k1 * s**2, k2 * s**4) if a == 0.5 else k1 * s**2
                else:
                    bound = math.inf
            se = rep.stderr or 0.0
            holds = None if not math.isfinite(bound) else bool(rep.value <= bound + 3.0 * se)
            rows.append(AuditRow(label, float(s), a, rep.value, se, bound, holds))
    rows.sort(key=lambda r: (r.sigma, r.alpha))
    return AuditTable(rows)


# --------------------------------------------------------------------------
# two-Dirac decay


@dataclass(frozen=True)
class DecayCheck:
    """Decay of W2 for the symmetric two-Dirac mixture as sigma shrinks.

    ``fit`` regresses ``log W2`` on ``1/sigma^2``.  ``super_polynomial`` holds
    when every pair ``s1 < s2`` of the grid has
    ``W2(s1)/W2(s2) < (s1/s2)^6``.  ``underflow`` lists sigmas whose distance
    fell below the quadrature floor; they are left out of the fit and pairs.
    """

    fit: SlopeFit | None
    super_polynomial: bool
    sigmas: tuple[float, ...]
    values: tuple[float, ...]
    underflow: tuple[float, ...]


POLY_EXPONENT = 6


def mixture_decay_check(target, sigma_grid, alpha: float = 1.0) -> DecayCheck:
    """Check that W2 decays faster than any fixed power of sigma.

    Args:
        target: ``mu > 0`` or a symmetric two-point ``DiracMixture`` on the line.
        sigma_grid: Noise levels in ``(0, mu/2]``.
        alpha: Denoising coefficient.
    """
    if isinstance(target, DiracMixture):
        mu = symmetric_two_dirac_mu(target)
        if mu is None:
            raise ValueError("decay check needs a symmetric two-point mixture on the line")
    else:
        mu = float(target)
    if not mu > 0:
        raise ValueError("mu must be > 0")
    sigmas = np.sort(np.asarray(sigma_grid, dtype=float))
    if sigmas.size < 2 or sigmas[0] <= 0 or sigmas[-1] > mu / 2:
        raise ValueError("need at least 2 sigmas in (0, mu/2]")
    res = [dirac_mixture_w2_full(mu, float(s), alpha) for s in sigmas]
    ok = [not r.underflow and r.value > 0 for r in res]
    keep_s = sigmas[ok]
    keep_v = np.array([r.value for r, good in zip(res, ok) if good])
    fit = fit_line(1.0 / keep_s**2, np.log(keep_v)) if keep_s.size >= 4 else None
    superpoly = keep_s.size >= 2 and all(
        keep_v[i] / keep_v[j] < (keep_s[i] / keep_s[j]) ** POLY_EXPONENT
        for i in range(keep_s.size)
        for j in range(i + 1, keep_s.size)
    )
    return DecayCheck(
        fit,
        bool(superpoly),
        tuple(keep_s.tolist()),
        tuple(keep_v.tolist()),
        tuple(float(s) for s, good in zip(sigmas, ok) if not good),
    )


# --------------------------------------------------------------------------
# finite-difference check of the score time derivative


@dataclass(frozen=True)
class Lemma4Row:
    """Mean square of ``d/dt grad log p_t(x_t)`` along flow trajectories at time ``t``.

    ``analytic`` and ``max_rel_error`` are set for Gaussian targets, where the
    derivative is known in closed form; the error is the largest per-sample
    deviation relative to the root mean square of the exact derivative.
    ``margin`` is ``bound / empirical``.
    """

    t: float
    empirical: float
    stderr: float
    bound: float
    margin: float
    holds: bool
    analytic: float | None = None
    max_rel_error: float | None = None


FD_REL_STEP = 1e-4
MIN_LEMMA4_SAMPLES = 100


def lemma4_fd_check(target: TargetSpec, t_grid, n: int, seed: int = 0, *, rel_step: float = FD_REL_STEP):
    """Estimate ``E|d/dt grad log p_t(x_t)|^2`` by central differences in ``t``.

    Trajectories start from exact samples of the noised law at ``t + h`` and
    are carried by the probability-flow ODE (one RK4 step per interval) to
    ``t`` and ``t - h``, with ``h = rel_step * t``.  The bound is the constant
    of the time-derivative lemma built from the target's constants (exact for
    Gaussians, the smoothing bounds for Gaussian mixtures).
    """
    if n < MIN_LEMMA4_SAMPLES:
        raise ValueError(f"need n >= {MIN_LEMMA4_SAMPLES} for a meaningful standard error")
    if isinstance(target, GaussianMixture):
        k = smoothed_constants_for(target)
    elif isinstance(target, (Gaussian1D, DiagonalGaussian)) or (
        isinstance(target, SubspaceGaussian) and target.intrinsic_dim == target.ambient_dim
    ):
        k = bound_constants(target)
    else:
        raise ValueError(f"{target.family} is not a Gaussian smoothing of another law")
    bound = lemma4_constant(k)
    oracle = NoisedScoreOracle(target)
    gauss = _gaussian_coordinates(target) if not isinstance(target, GaussianMixture) else None
    rows = []
    for i, t in enumerate(np.asarray(t_grid, dtype=float)):
        h = rel_step * t
        if not (t > 0 and t - h > 0 and h > 1e-14 * t):
            raise FloatingPointError(f"finite-difference step underflows at t={t!r}")
        x0 = sample_target(target, n, derive_seed(seed, i, 0))
        xp = add_noise(x0, math.sqrt(t + h), derive_seed(seed, i, 1)).data
        xm_t = _integrate(oracle, xp, t + h, t, 1, "rk4")
        xm = _integrate(oracle, xm_t, t, t - h, 1, "rk4")
        deriv = (oracle.score(xp, t + h) - oracle.score(xm, t - h)) / (2.0 * h)
        sq = np.sum(deriv**2, axis=1)
        emp = float(sq.mean())
        se = float(sq.std(ddof=1) / math.sqrt(n))
        analytic = max_rel = None
        if gauss is not None:
            taus, mean, m = gauss
            exact = np.zeros_like(xm_t)
            exact[:, :m] = (xm_t[:, :m] - mean[:m]) / (2.0 * (taus**2 + t) ** 2)
            analytic = float(np.sum(1.0 / (4.0 * (taus**2 + t) ** 3)))
            scale = math.sqrt(float(np.mean(np.sum(exact**2, axis=1))))
            max_rel = float(np.max(np.linalg.norm(deriv - exact, axis=1)) / scale)
        margin = bound / emp if emp > 0 else math.inf
        rows.append(Lemma4Row(float(t), emp, se, bound, margin, emp + 3.0 * se <= bound, analytic, max_rel))
    return rows
