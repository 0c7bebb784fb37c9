"""Tractable target distributions, samplers and exact noised-score oracles.

Every family except the bump density is handled as a mixture of
axis-aligned Gaussians whose per-coordinate variances may be zero
(a Dirac location, or the flat directions of a subspace Gaussian).
Convolving with N(0, sigma2 I) only adds sigma2 to those variances, so the
noised score of every such family comes out of one log-space softmax.

The bump density ``exp(-1/(1 - x^2)) / Z`` on (-1, 1) has no closed-form
convolution; its noised score is a ratio of two integrals evaluated by
adaptive Simpson.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cache
from typing import ClassVar, Union

import numpy as np
from scipy.special import logsumexp

from . import config as cfg
from ._rng import make_rng
from .errors import (
    ConfigError,
    DimensionError,
    OutOfSupportError,
    UndefinedDensityError,
)
from .quadrature import adaptive_simpson

_WEIGHT_TOL = 1e-12
_LOG_2PI = math.log(2.0 * math.pi)


def _positive(name: str, x: float) -> float:
    x = float(x)
    if not (math.isfinite(x) and x > 0):
        raise ValueError(f"{name} must be finite and > 0, got {x}")
    return x


def _weights(ws, k: int) -> tuple[float, ...]:
    ws = tuple(float(w) for w in ws)
    if len(ws) != k:
        raise ValueError(f"expected {k} weights, got {len(ws)}")
    if any(not math.isfinite(w) or w < 0 for w in ws):
        raise ValueError("weights must be finite and nonnegative")
    if abs(math.fsum(ws) - 1.0) > _WEIGHT_TOL:
        raise ValueError(f"weights must sum to 1 within {_WEIGHT_TOL:g}, sum is {math.fsum(ws)!r}")
    return ws


def _points(pts) -> tuple[tuple[float, ...], ...]:
    arr = np.atleast_1d(np.asarray(pts, dtype=float))
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("expected a non-empty list of points")
    if not np.all(np.isfinite(arr)):
        raise ValueError("points must be finite")
    return tuple(tuple(float(v) for v in row) for row in arr)


# --------------------------------------------------------------------------
# target specs


@dataclass(frozen=True)
class Gaussian1D:
    """N(0, tau^2) on the real line."""

    tau: float
    family: ClassVar[str] = "gaussian"

    def __post_init__(self):
        object.__setattr__(self, "tau", _positive("tau", self.tau))

    @property
    def dim(self) -> int:
        return 1


@dataclass(frozen=True)
class DiagonalGaussian:
    """N(mean, diag(taus^2)); ``mean`` defaults to the origin."""

    taus: tuple[float, ...]
    mean: tuple[float, ...] | None = None
    family: ClassVar[str] = "diagonal_gaussian"

    def __post_init__(self):
        taus = tuple(_positive("taus", t) for t in np.atleast_1d(self.taus))
        if not taus:
            raise ValueError("taus must be non-empty")
        mean = (0.0,) * len(taus) if self.mean is None else tuple(float(m) for m in np.atleast_1d(self.mean))
        if len(mean) != len(taus):
            raise ValueError("mean and taus must have the same length")
        if not all(math.isfinite(m) for m in mean):
            raise ValueError("mean must be finite")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "mean", mean)

    @property
    def dim(self) -> int:
        return len(self.taus)


@dataclass(frozen=True)
class SubspaceGaussian:
    """N(0, tau^2 I_m) embedded in R^m x {0}^(d-m)."""

    ambient_dim: int
    intrinsic_dim: int
    tau: float
    family: ClassVar[str] = "subspace_gaussian"

    def __post_init__(self):
        d, m = int(self.ambient_dim), int(self.intrinsic_dim)
        if d < 1 or not 1 <= m <= d:
            raise ValueError(f"need 1 <= intrinsic_dim <= ambient_dim, got m={m}, d={d}")
        object.__setattr__(self, "ambient_dim", d)
        object.__setattr__(self, "intrinsic_dim", m)
        object.__setattr__(self, "tau", _positive("tau", self.tau))

    @property
    def dim(self) -> int:
        return self.ambient_dim


@dataclass(frozen=True)
class DiracMixture:
    """Finite mixture of point masses."""

    locations: tuple[tuple[float, ...], ...]
    weights: tuple[float, ...] | None = None
    family: ClassVar[str] = "dirac_mixture"

    def __post_init__(self):
        locs = _points(self.locations)
        if len(set(locs)) != len(locs):
            raise ValueError("Dirac locations must be pairwise distinct")
        k = len(locs)
        ws = (1.0 / k,) * k if self.weights is None else _weights(self.weights, k)
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "weights", ws)

    @property
    def dim(self) -> int:
        return len(self.locations[0])


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of isotropic Gaussians ``sum_i w_i N(mean_i, tau_i^2 I)``."""

    weights: tuple[float, ...]
    means: tuple[tuple[float, ...], ...]
    taus: tuple[float, ...]
    family: ClassVar[str] = "gaussian_mixture"

    def __post_init__(self):
        means = _points(self.means)
        taus = tuple(_positive("taus", t) for t in np.atleast_1d(self.taus))
        if len(taus) != len(means):
            raise ValueError("need one tau per component")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "weights", _weights(self.weights, len(means)))

    @classmethod
    def from_components(cls, components) -> "GaussianMixture":
        """Build from ``[(weight, mean, tau), ...]``."""
        ws, ms, ts = zip(*components)
        return cls(weights=ws, means=[np.atleast_1d(m) for m in ms], taus=ts)

    @property
    def dim(self) -> int:
        return len(self.means[0])


@dataclass(frozen=True)
class BumpDensity1D:
    """The smooth compactly supported density ``exp(-1/(1-x^2)) / Z`` on (-1, 1)."""

    family: ClassVar[str] = "bump"

    @property
    def dim(self) -> int:
        return 1


TargetSpec = Union[Gaussian1D, DiagonalGaussian, SubspaceGaussian, DiracMixture, GaussianMixture, BumpDensity1D]

FAMILIES = {
    cls.family: cls
    for cls in (Gaussian1D, DiagonalGaussian, SubspaceGaussian, DiracMixture, GaussianMixture, BumpDensity1D)
}


def has_density(spec: TargetSpec) -> bool:
    if isinstance(spec, DiracMixture):
        return False
    if isinstance(spec, SubspaceGaussian):
        return spec.intrinsic_dim == spec.ambient_dim
    return True


# --------------------------------------------------------------------------
# config serialization


def spec_to_items(spec: TargetSpec) -> dict[str, str]:
    items = {"family": spec.family}
    if isinstance(spec, Gaussian1D):
        items["tau"] = cfg.fmt_float(spec.tau)
    elif isinstance(spec, DiagonalGaussian):
        items["taus"] = cfg.fmt_floats(spec.taus)
        items["mean"] = cfg.fmt_floats(spec.mean)
    elif isinstance(spec, SubspaceGaussian):
        items["ambient_dim"] = str(spec.ambient_dim)
        items["intrinsic_dim"] = str(spec.intrinsic_dim)
        items["tau"] = cfg.fmt_float(spec.tau)
    elif isinstance(spec, DiracMixture):
        items["locations"] = cfg.fmt_points(spec.locations)
        items["weights"] = cfg.fmt_floats(spec.weights)
    elif isinstance(spec, GaussianMixture):
        items["weights"] = cfg.fmt_floats(spec.weights)
        items["means"] = cfg.fmt_points(spec.means)
        items["taus"] = cfg.fmt_floats(spec.taus)
    return items


def spec_to_config(spec: TargetSpec) -> str:
    """Render ``spec`` as key-value config text."""
    return cfg.dump_kv(spec_to_items(spec))


def spec_from_items(items: dict[str, str]) -> TargetSpec:
    family = cfg.require(items, "family")
    try:
        if family == "gaussian":
            return Gaussian1D(cfg.parse_float(cfg.require(items, "tau"), "tau"))
        if family == "diagonal_gaussian":
            mean = cfg.parse_floats(items["mean"], "mean") if "mean" in items else None
            return DiagonalGaussian(cfg.parse_floats(cfg.require(items, "taus"), "taus"), mean)
        if family == "subspace_gaussian":
            return SubspaceGaussian(
                cfg.parse_int(cfg.require(items, "ambient_dim"), "ambient_dim"),
                cfg.parse_int(cfg.require(items, "intrinsic_dim"), "intrinsic_dim"),
                cfg.parse_float(cfg.require(items, "tau"), "tau"),
            )
        if family == "dirac_mixture":
            ws = cfg.parse_floats(items["weights"], "weights") if "weights" in items else None
            return DiracMixture(cfg.parse_points(cfg.require(items, "locations"), "locations"), ws)
        if family == "gaussian_mixture":
            return GaussianMixture(
                cfg.parse_floats(cfg.require(items, "weights"), "weights"),
                cfg.parse_points(cfg.require(items, "means"), "means"),
                cfg.parse_floats(cfg.require(items, "taus"), "taus"),
            )
        if family == "bump":
            return BumpDensity1D()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid {family} target: {exc}") from None
    raise ConfigError(f"unknown target family {family!r}; expected one of {sorted(FAMILIES)}")


def spec_from_config(text: str) -> TargetSpec:
    """Parse key-value config text into a target spec."""
    return spec_from_items(cfg.parse_kv(text))


# --------------------------------------------------------------------------
# sample batches


@dataclass(frozen=True)
class SampleBatch:
    """An ``(n, d)`` matrix of samples with provenance.

    ``data`` is stored read-only.
    """

    data: np.ndarray
    seed: int = 0
    label: str = ""

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"batch data must be a non-empty (n, d) matrix, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("batch data must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray, label: str | None = None) -> "SampleBatch":
        return SampleBatch(data, self.seed, self.label if label is None else label)


# --------------------------------------------------------------------------
# mixture view


@dataclass(frozen=True)
class _Mixture:
    log_weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    variances: np.ndarray  # (K, d), zero allowed


@cache
def _mixture_view(spec: TargetSpec) -> _Mixture:
    if isinstance(spec, Gaussian1D):
        means, var, w = np.zeros((1, 1)), np.array([[spec.tau**2]]), np.ones(1)
    elif isinstance(spec, DiagonalGaussian):
        means = np.array([spec.mean])
        var = np.array([spec.taus]) ** 2
        w = np.ones(1)
    elif isinstance(spec, SubspaceGaussian):
        d, m = spec.ambient_dim, spec.intrinsic_dim
        means = np.zeros((1, d))
        var = np.zeros((1, d))
        var[0, :m] = spec.tau**2
        w = np.ones(1)
    elif isinstance(spec, DiracMixture):
        means = np.array(spec.locations)
        var = np.zeros_like(means)
        w = np.array(spec.weights)
    elif isinstance(spec, GaussianMixture):
        means = np.array(spec.means)
        var = np.repeat(np.array(spec.taus)[:, None] ** 2, means.shape[1], axis=1)
        w = np.array(spec.weights)
    else:
        raise TypeError(f"{type(spec).__name__} has no mixture representation")
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    for arr in (logw, means, var):
        arr.setflags(write=False)
    return _Mixture(logw, means, var)


def _as_points(y, d: int) -> tuple[np.ndarray, tuple[int, ...]]:
    """Coerce ``y`` to ``(n, d)``; also return the shape to restore."""
    arr = np.asarray(y, dtype=float)
    shape = arr.shape
    if d == 1 and (arr.ndim == 0 or (arr.ndim == 1 and shape != (1,))):
        return arr.reshape(-1, 1), shape
    if arr.ndim == 1 and shape[0] == d:
        return arr[None, :], shape
    if arr.ndim == 2 and shape[1] == d:
        return arr, shape
    raise DimensionError(f"expected points of dimension {d}, got array of shape {shape}")


def _component_terms(mix: _Mixture, y: np.ndarray, sigma2: float):
    """Log joint weights ``(n, K)``, offsets ``m - y`` and total variances."""
    var = mix.variances + sigma2  # (K, d)
    diff = mix.means[None, :, :] - y[:, None, :]  # (n, K, d)
    logw = (
        mix.log_weights[None, :]
        - 0.5 * np.sum(diff**2 / var[None], axis=2)
        - 0.5 * np.sum(np.log(var), axis=1)[None, :]
        - 0.5 * y.shape[1] * _LOG_2PI
    )
    return logw, diff, var


def _softmax(logw: np.ndarray) -> np.ndarray:
    z = logw - np.max(logw, axis=1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=1, keepdims=True)


_CHUNK_ELEMS = 1 << 22


def _chunks(n: int, per_row: int):
    step = max(1, _CHUNK_ELEMS // max(per_row, 1))
    for lo in range(0, n, step):
        yield slice(lo, min(n, lo + step))


def _mixture_score(mix: _Mixture, y: np.ndarray, sigma2: float) -> np.ndarray:
    out = np.empty_like(y)
    K, d = mix.means.shape
    for sl in _chunks(y.shape[0], K * d):
        logw, diff, var = _component_terms(mix, y[sl], sigma2)
        r = _softmax(logw)
        out[sl] = np.einsum("nk,nkd->nd", r, diff / var[None])
    return out


def _mixture_posterior_mean(mix: _Mixture, y: np.ndarray, sigma2: float) -> np.ndarray:
    out = np.empty_like(y)
    K, d = mix.means.shape
    for sl in _chunks(y.shape[0], K * d):
        logw, _, var = _component_terms(mix, y[sl], sigma2)
        r = _softmax(logw)
        comp_mean = (mix.variances[None] * y[sl][:, None, :] + sigma2 * mix.means[None]) / var[None]
        out[sl] = np.einsum("nk,nkd->nd", r, comp_mean)
    return out


def _mixture_log_density(mix: _Mixture, y: np.ndarray, sigma2: float) -> np.ndarray:
    out = np.empty(y.shape[0])
    K, d = mix.means.shape
    for sl in _chunks(y.shape[0], K * d):
        logw, _, _ = _component_terms(mix, y[sl], sigma2)
        out[sl] = logsumexp(logw, axis=1)
    return out


# --------------------------------------------------------------------------
# bump density


def _bump_unnormalized(x: float) -> float:
    if abs(x) >= 1.0:
        return 0.0
    return math.exp(-1.0 / (1.0 - x * x))


@cache
def bump_normalizer() -> float:
    """Z = integral of exp(-1/(1-x^2)) over (-1, 1), to about 1e-12."""
    return adaptive_simpson(_bump_unnormalized, -1.0, 1.0, tol=1e-13, points=(0.0,))


def bump_density(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) < 1.0
    safe = np.where(inside, x, 0.0)
    return np.where(inside, np.exp(-1.0 / (1.0 - safe**2)), 0.0) / bump_normalizer()


def _check_bump_support(x: np.ndarray) -> None:
    if np.any(np.abs(x) >= 1.0):
        raise OutOfSupportError("the bump log density is only defined on (-1, 1)")


def bump_score(x) -> np.ndarray:
    """d/dx log p = -2x / (1 - x^2)^2."""
    x = np.asarray(x, dtype=float)
    _check_bump_support(x)
    return -2.0 * x / (1.0 - x**2) ** 2


def bump_hessian(x) -> np.ndarray:
    """d^2/dx^2 log p = -2(3x^2 + 1) / (1 - x^2)^3."""
    x = np.asarray(x, dtype=float)
    _check_bump_support(x)
    return -2.0 * (3.0 * x**2 + 1.0) / (1.0 - x**2) ** 3


def bump_third_derivative(x) -> np.ndarray:
    """d^3/dx^3 log p = -24x(x^2 + 1) / (1 - x^2)^4 (the gradient of the Laplacian in 1-D)."""
    x = np.asarray(x, dtype=float)
    _check_bump_support(x)
    return -24.0 * x * (x**2 + 1.0) / (1.0 - x**2) ** 4


_BUMP_CHUNK = 1024
_BISECT_ITERS = 64
# the posterior weight outside each window is below exp(-WINDOW_DROP) of its peak
WINDOW_DROP = 60.0
_WINDOW_PANELS = tuple(np.linspace(0.0, 1.0, 9)[1:-1])


def _bump_exponent(x: np.ndarray, y: np.ndarray, sigma2: float) -> np.ndarray:
    """``log p(x) + log Z - (y - x)^2 / (2 sigma2)``, -inf outside (-1, 1)."""
    inside = np.abs(x) < 1.0
    safe = np.where(inside, x, 0.0)
    h = -1.0 / (1.0 - safe * safe) - (y - safe) ** 2 / (2.0 * sigma2)
    return np.where(inside, h, -np.inf)


def _bump_drop(mode: np.ndarray, delta: np.ndarray, y: np.ndarray, sigma2: float) -> np.ndarray:
    """``h(mode + delta) - h(mode)`` without cancelling the two large exponents."""
    x = mode + delta
    inside = np.abs(x) < 1.0
    safe = np.where(inside, x, 0.0)
    one_x = (1.0 - safe) * (1.0 + safe)
    one_m = (1.0 - mode) * (1.0 + mode)
    drop = -delta * ((mode + safe) / (one_m * one_x) - (2.0 * y - safe - mode) / (2.0 * sigma2))
    return np.where(inside, drop, -np.inf)


def _bisect(f, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Elementwise root of an increasing ``f`` on ``[lo, hi]``."""
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        up = f(mid) > 0
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    return 0.5 * (lo + hi)


def _bump_windows(y: np.ndarray, sigma2: float):
    """Posterior mode, peak exponent and ``[a, b]`` with ``h >= peak - WINDOW_DROP``.

    The exponent is strictly concave on (-1, 1), so the mode and both window
    ends are single roots found by bisection.
    """
    ones = np.ones_like(y)

    def slope(x):
        # -h'(x), increasing in x
        return 2.0 * x / ((1.0 - x) * (1.0 + x)) ** 2 + (x - y) / sigma2

    mode = _bisect(slope, -ones, ones)
    peak = _bump_exponent(mode, y, sigma2)
    a = _bisect(lambda x: _bump_exponent(x, y, sigma2) - (peak - WINDOW_DROP), -ones, mode)
    b = _bisect(lambda x: (peak - WINDOW_DROP) - _bump_exponent(x, y, sigma2), mode, ones)
    return mode, peak, a, b


def _gauss_legendre_nodes(panels: int, order: int = 16):
    """Composite Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    h = 1.0 / panels
    left = np.arange(panels) * h
    return (left[:, None] + 0.5 * h * (x + 1.0)).ravel(), np.tile(0.5 * h * w, panels)


# successively halved panels; each level's error estimate is its gap to the previous level
_GL_LEVELS = tuple(_gauss_legendre_nodes(p) for p in (8, 16, 32, 64, 128))


def _bump_window_moments(v, w, mode, lead, width, y, sigma2):
    """``(int w, int x w)`` over the unit window for every point, by the rule ``(v, w)``."""
    delta = lead[:, None] + width[:, None] * v[None, :]
    f = np.exp(_bump_drop(mode[:, None], delta, y[:, None], sigma2))
    return f @ w, (f * (mode[:, None] + delta)) @ w


def _bump_integrals(y: np.ndarray, sigma2: float, tol: float):
    """Shifted integrals of the posterior over x given Y=y.

    Returns ``(shift, I0, I1)`` with
    ``I_k = int x^k exp(log p(x) - (y-x)^2/(2 sigma2) - shift) dx``.
    Each point is integrated over its own window, mapped onto [0, 1], so
    posteriors of any width look alike.  Composite Gauss-Legendre rules with
    halving panels are applied until two successive levels agree to ``tol``;
    points that never settle go through adaptive Simpson.
    """
    y = np.asarray(y, dtype=float)
    shift = np.empty_like(y)
    i0 = np.empty_like(y)
    i1 = np.empty_like(y)
    for lo in range(0, y.size, _BUMP_CHUNK):
        yc = y[lo : lo + _BUMP_CHUNK]
        mode, peak, a, b = _bump_windows(yc, sigma2)
        width, lead = b - a, a - mode
        f0, f1 = _bump_window_moments(*_GL_LEVELS[0], mode, lead, width, yc, sigma2)
        todo = np.arange(yc.size)
        for rule in _GL_LEVELS[1:]:
            c0, c1 = f0[todo], f1[todo]
            t = todo
            f0[t], f1[t] = _bump_window_moments(*rule, mode[t], lead[t], width[t], yc[t], sigma2)
            todo = t[np.maximum(np.abs(f0[t] - c0), np.abs(f1[t] - c1)) > tol]
            if todo.size == 0:
                break
        for j in todo:

            def integrand(v, j=j):
                delta = lead[j] + width[j] * v
                wv = math.exp(_bump_drop(mode[j], delta, yc[j], sigma2))
                return np.array([wv, (mode[j] + delta) * wv])

            f0[j], f1[j] = adaptive_simpson(integrand, 0.0, 1.0, tol=tol, points=_WINDOW_PANELS)
        shift[lo : lo + yc.size] = peak
        i0[lo : lo + yc.size] = width * f0
        i1[lo : lo + yc.size] = width * f1
    return shift, i0, i1


# --------------------------------------------------------------------------
# oracle


class NoisedScoreOracle:
    """Exact score and posterior mean of ``X + N(0, sigma2 I)`` for a target.

    ``score`` is the gradient of the log density of the noised variable;
    ``posterior_mean`` is ``y + sigma2 * score`` (Tweedie), while
    ``posterior_mean_direct`` computes E[X | Y=y] from the posterior weights
    without going through the score, as an independent route.

    Points may be given as ``(d,)``, ``(n, d)`` or, in 1-D, as scalars or
    ``(n,)`` arrays; results keep the input shape.
    """

    def __init__(self, target: TargetSpec, *, quad_tol: float = 1e-10):
        self.target = target
        self.dim = target.dim
        self.quad_tol = quad_tol
        self._mix = None if isinstance(target, BumpDensity1D) else _mixture_view(target)

    def __repr__(self) -> str:
        return f"NoisedScoreOracle({self.target!r})"

    def _check(self, y, sigma2):
        if not (sigma2 > 0 and math.isfinite(sigma2)):
            raise ValueError(f"sigma2 must be finite and > 0, got {sigma2}")
        return _as_points(y, self.dim)

    def score(self, y, sigma2: float) -> np.ndarray:
        pts, shape = self._check(y, sigma2)
        if self._mix is not None:
            out = _mixture_score(self._mix, pts, float(sigma2))
        else:
            _, i0, i1 = _bump_integrals(pts[:, 0], float(sigma2), self.quad_tol)
            out = ((i1 / i0 - pts[:, 0]) / sigma2)[:, None]
        return out.reshape(shape)

    def posterior_mean(self, y, sigma2: float) -> np.ndarray:
        y_arr = np.asarray(y, dtype=float)
        return y_arr + sigma2 * self.score(y_arr, sigma2)

    def posterior_mean_direct(self, y, sigma2: float) -> np.ndarray:
        pts, shape = self._check(y, sigma2)
        if self._mix is not None:
            out = _mixture_posterior_mean(self._mix, pts, float(sigma2))
        else:
            _, i0, i1 = _bump_integrals(pts[:, 0], float(sigma2), self.quad_tol)
            out = (i1 / i0)[:, None]
        return out.reshape(shape)

    def log_density(self, y, sigma2: float) -> np.ndarray:
        """log p(y; sigma2), one value per point."""
        pts, shape = self._check(y, sigma2)
        if self._mix is not None:
            out = _mixture_log_density(self._mix, pts, float(sigma2))
        else:
            s, i0, _ = _bump_integrals(pts[:, 0], float(sigma2), self.quad_tol)
            out = s + np.log(i0) - math.log(bump_normalizer()) - 0.5 * math.log(2.0 * math.pi * sigma2)
        if self.dim == 1 and len(shape) <= 1 and shape != (1,):
            return out.reshape(shape)
        return out if len(shape) == 2 else out[0]


def score(oracle: NoisedScoreOracle, y, sigma2: float) -> np.ndarray:
    return oracle.score(y, sigma2)


def posterior_mean(oracle: NoisedScoreOracle, y, sigma2: float) -> np.ndarray:
    return oracle.posterior_mean(y, sigma2)


def score_of_clean_density(spec: TargetSpec, x) -> np.ndarray:
    """Gradient of log p_X at ``x`` for targets that have a density.

    Raises:
        UndefinedDensityError: for Dirac mixtures and subspace Gaussians with m < d.
        OutOfSupportError: for the bump density outside (-1, 1).
    """
    if isinstance(spec, BumpDensity1D):
        x = np.asarray(x, dtype=float)
        return bump_score(x)
    if not has_density(spec):
        raise UndefinedDensityError(f"{spec.family} target has no Lebesgue density")
    pts, shape = _as_points(x, spec.dim)
    return _mixture_score(_mixture_view(spec), pts, 0.0).reshape(shape)


def clean_log_density(spec: TargetSpec, x) -> np.ndarray:
    if isinstance(spec, BumpDensity1D):
        x = np.asarray(x, dtype=float)
        _check_bump_support(x)
        return -1.0 / (1.0 - x**2) - math.log(bump_normalizer())
    if not has_density(spec):
        raise UndefinedDensityError(f"{spec.family} target has no Lebesgue density")
    pts, _ = _as_points(x, spec.dim)
    return _mixture_log_density(_mixture_view(spec), pts, 0.0)


# --------------------------------------------------------------------------
# sampling

BUMP_MAX_ROUNDS = 200
# distinct streams, so equal seeds for targets and noise do not correlate them
_SAMPLE_STREAM = 1
_NOISE_STREAM = 2


def _sample_bump(n: int, rng: np.random.Generator) -> np.ndarray:
    # envelope Uniform(-1,1) x Uniform(0, p(0)); acceptance rate Z e / 2 ~ 0.6
    out = np.empty(n)
    filled = 0
    for _ in range(BUMP_MAX_ROUNDS):
        m = max(64, int(1.8 * (n - filled)) + 16)
        x = rng.uniform(-1.0, 1.0, size=m)
        u = rng.uniform(0.0, 1.0, size=m)
        accept = x[np.log(u) < 1.0 - 1.0 / (1.0 - x**2)]
        take = min(accept.size, n - filled)
        out[filled : filled + take] = accept[:take]
        filled += take
        if filled == n:
            return out[:, None]
    raise RuntimeError(f"bump rejection sampler did not fill {n} samples in {BUMP_MAX_ROUNDS} rounds")


def sample_target(spec: TargetSpec, n: int, seed: int) -> SampleBatch:
    """Draw ``n`` i.i.d. samples from ``spec``; deterministic in ``seed``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed, _SAMPLE_STREAM)
    if isinstance(spec, BumpDensity1D):
        data = _sample_bump(n, rng)
    else:
        mix = _mixture_view(spec)
        K, d = mix.means.shape
        comp = np.zeros(n, dtype=int) if K == 1 else rng.choice(K, size=n, p=np.exp(mix.log_weights))
        z = rng.standard_normal((n, d))
        data = mix.means[comp] + np.sqrt(mix.variances[comp]) * z
    return SampleBatch(data, seed, spec.family)


def add_noise(batch: SampleBatch, sigma: float, seed: int) -> SampleBatch:
    """Return ``X + eps`` with ``eps ~ N(0, sigma^2 I)`` drawn row by row from ``seed``."""
    sigma = _positive("sigma", sigma)
    rng = make_rng(seed, _NOISE_STREAM)
    noisy = batch.data + sigma * rng.standard_normal(batch.data.shape)
    return SampleBatch(noisy, batch.seed, f"{batch.label}+N(0,{sigma!r}^2)")
