"""Regularity constants of a target and the prefactors of the denoising bounds.

An infinite constant (e.g. the score energy of a point mass) is kept as
``math.inf`` and every prefactor built from it is ``math.inf`` too; callers
treat an infinite bound as "not applicable" rather than as a huge number.

Notation: ``C = E|grad log p(X)|^2``, ``C1 = E|grad log p(X)|^6``,
``C2 = E|hess log p(X)|_op^3`` and ``C3 = E|grad Laplacian log p(X)|^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cache

import numpy as np
from scipy import integrate

from .metrics import KernelSpec
from .targets import (
    BumpDensity1D,
    DiagonalGaussian,
    DiracMixture,
    Gaussian1D,
    GaussianMixture,
    SubspaceGaussian,
    TargetSpec,
    bump_hessian,
    bump_normalizer,
    bump_score,
    bump_third_derivative,
    sample_target,
    score_of_clean_density,
)

MC_SAMPLES = 10**6


@dataclass(frozen=True)
class ConstantEstimate:
    """A constant with its Monte Carlo standard error (0 when exact)."""

    value: float
    stderr: float = 0.0
    exact: bool = True

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)

    def upper(self, k: float = 3.0) -> float:
        """``value + k * stderr``; the value used when a bound must be certified."""
        return self.value + k * self.stderr


@dataclass(frozen=True)
class BoundConstants:
    """The constants entering the second-order (half-denoising) bounds."""

    C: float
    C1: float
    C2: float
    C3: float
    d: int

    def __post_init__(self):
        for name in ("C", "C1", "C2", "C3"):
            v = getattr(self, name)
            if math.isnan(v) or v < 0:
                raise ValueError(f"{name} must be >= 0 or inf, got {v}")
        if self.d < 1:
            raise ValueError("d must be >= 1")

    @property
    def finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.C, self.C1, self.C2, self.C3))


def _diag_inverse_variances(spec) -> np.ndarray | None:
    if isinstance(spec, Gaussian1D):
        return np.array([spec.tau**-2])
    if isinstance(spec, DiagonalGaussian):
        return np.asarray(spec.taus) ** -2.0
    if isinstance(spec, SubspaceGaussian) and spec.intrinsic_dim == spec.ambient_dim:
        return np.full(spec.ambient_dim, spec.tau**-2)
    return None


def _mc_mean(values: np.ndarray) -> ConstantEstimate:
    n = values.size
    return ConstantEstimate(float(values.mean()), float(values.std(ddof=1) / math.sqrt(n)), exact=False)


def constant_C(spec: TargetSpec, n: int = MC_SAMPLES, seed: int = 0) -> ConstantEstimate:
    """``E|grad log p_X(X)|^2``.

    Exact (``sum 1/tau_i^2``) for Gaussians, quadrature for the bump density,
    Monte Carlo over ``n`` target samples for Gaussian mixtures; ``inf`` for targets
    without a density (Dirac mixtures, subspace Gaussians with m < d).
    """
    a = _diag_inverse_variances(spec)
    if a is not None:
        return ConstantEstimate(float(a.sum()))
    if isinstance(spec, (DiracMixture, SubspaceGaussian)):
        return ConstantEstimate(math.inf)
    if isinstance(spec, BumpDensity1D):
        return ConstantEstimate(_bump_constants().C)
    x = sample_target(spec, n, seed).data
    return _mc_mean(np.sum(score_of_clean_density(spec, x) ** 2, axis=1))


def _gaussian_quadratic_moment3(a: np.ndarray) -> float:
    """``E (sum_i a_i z_i^2)^3`` for standard normal ``z``, from the cumulants of the quadratic form."""
    k1, k2, k3 = a.sum(), 2.0 * np.sum(a**2), 8.0 * np.sum(a**3)
    return float(k3 + 3.0 * k2 * k1 + k1**3)


@cache
def _bump_constants() -> BoundConstants:
    z = bump_normalizer()

    def moment(f):
        def g(x):
            if abs(x) >= 1.0:
                return 0.0
            return f(x) * math.exp(-1.0 / (1.0 - x * x)) / z

        val, _ = integrate.quad(g, -1.0, 1.0, points=(0.0,), epsabs=0.0, epsrel=1e-12, limit=400)
        return val

    def third(x):
        return float(bump_third_derivative(x))

    return BoundConstants(
        C=moment(lambda x: float(bump_score(x)) ** 2),
        C1=moment(lambda x: float(bump_score(x)) ** 6),
        C2=moment(lambda x: abs(float(bump_hessian(x))) ** 3),
        C3=moment(lambda x: third(x) ** 2),
        d=1,
    )


def bound_constants(spec: TargetSpec) -> BoundConstants:
    """All four constants of ``spec`` itself (not the smoothed upper bounds).

    Gaussians: ``C1`` from the moments of a Gaussian quadratic form,
    ``C2 = 1/tau_min^6`` and ``C3 = 0``.  The bump density: quadrature of
    its closed-form derivatives (Monte Carlo is useless here, as the sixth
    power of the score lives near the edges of the support).  Targets without a density: all ``inf``.
    Gaussian mixtures have no closed form here; use
    :func:`smoothed_constants_for` instead.
    """
    a = _diag_inverse_variances(spec)
    if a is not None:
        return BoundConstants(
            C=float(a.sum()),
            C1=_gaussian_quadratic_moment3(a),
            C2=float(a.max() ** 3),
            C3=0.0,
            d=a.size,
        )
    if isinstance(spec, (DiracMixture, SubspaceGaussian)):
        return BoundConstants(math.inf, math.inf, math.inf, math.inf, spec.dim)
    if isinstance(spec, BumpDensity1D):
        return _bump_constants()
    raise TypeError(f"no direct constants for {type(spec).__name__}; use smoothed_constants_for")


def constants_smoothed(moment6: float, tau: float, d: int) -> BoundConstants:
    """Upper bounds on the constants of ``X = Z + eps0`` with ``eps0 ~ N(0, tau^2 I_d)``.

    Args:
        moment6: ``E|Z|^6`` (for Z supported in a ball of radius R, ``R^6`` will do).
        tau: Smoothing standard deviation, > 0.
        d: Dimension.

    ``C1 <= 243 (2 m6 + 15 d tau^6) / tau^12``, ``C2 <= 9 (1/tau^6 + 2 m6 / tau^12)``
    and ``C3 <= 40 m6 / tau^12``.  ``C <= d / tau^2`` because the score of X is
    ``-E[eps0 | X] / tau^2``.
    """
    if not tau > 0:
        raise ValueError("tau must be > 0")
    if moment6 < 0:
        raise ValueError("moment6 must be >= 0")
    if d < 1:
        raise ValueError("d must be >= 1")
    t6 = tau**6
    t12 = t6 * t6
    return BoundConstants(
        C=d / tau**2,
        C1=243.0 * (2.0 * moment6 + 15.0 * d * t6) / t12,
        C2=9.0 * (1.0 / t6 + 2.0 * moment6 / t12),
        C3=40.0 * moment6 / t12,
        d=d,
    )


def gaussian_moment6(mean, s: float) -> float:
    """``E|m + s z|^6`` for ``z ~ N(0, I_d)``."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    d, M, v = mean.size, float(mean @ mean), s * s
    k1 = d * v + M
    return k1**3 + 6.0 * v * k1 * (d * v + 2.0 * M) + 8.0 * v * v * (d * v + 3.0 * M)


def smoothed_representation(spec: TargetSpec) -> tuple[float, float, int]:
    """Write ``spec`` as ``Z + N(0, tau^2 I)``; return ``(tau, E|Z|^6, d)``.

    ``tau`` is the smallest component standard deviation; each component of
    ``Z`` keeps the remaining variance.
    """
    if isinstance(spec, Gaussian1D):
        return spec.tau, 0.0, 1
    if isinstance(spec, DiagonalGaussian):
        taus = np.asarray(spec.taus)
        tau = float(taus.min())
        z_var = taus**2 - tau**2
        a = z_var
        m = np.asarray(spec.mean)
        M = float(m @ m)
        # E|m + D z|^6 with the quadratic-form cumulants shifted by the mean
        k1 = a.sum() + M
        k2 = 2.0 * np.sum(a**2) + 4.0 * float(np.sum(a * m**2))
        k3 = 8.0 * np.sum(a**3) + 24.0 * float(np.sum(a**2 * m**2))
        return tau, float(k3 + 3.0 * k2 * k1 + k1**3), spec.dim
    if isinstance(spec, SubspaceGaussian) and spec.intrinsic_dim == spec.ambient_dim:
        return spec.tau, 0.0, spec.dim
    if isinstance(spec, GaussianMixture):
        tau = min(spec.taus)
        m6 = sum(
            w * gaussian_moment6(m, math.sqrt(max(t * t - tau * tau, 0.0)))
            for w, m, t in zip(spec.weights, spec.means, spec.taus)
        )
        return tau, float(m6), spec.dim
    raise TypeError(f"{type(spec).__name__} is not a Gaussian smoothing of another law")


def smoothed_constants_for(spec: TargetSpec) -> BoundConstants:
    tau, m6, d = smoothed_representation(spec)
    return constants_smoothed(m6, tau, d)


# --------------------------------------------------------------------------
# prefactors


def prop3_prefactor(C: float, alpha: float) -> float:
    """``sqrt((1 + 4 alpha^2) C / 2)``: W2 after alpha-denoising is at most this times sigma^2."""
    if C < 0:
        raise ValueError("C must be >= 0")
    return math.sqrt((1.0 + 4.0 * alpha * alpha) * C / 2.0)


def _lemma4_sum(k: BoundConstants) -> float:
    if not (math.isfinite(k.C1) and math.isfinite(k.C2) and math.isfinite(k.C3)):
        return math.inf
    return 4.0 * k.C1 + (2.0 * k.d**2 + 5.0) * k.C1 ** (1.0 / 3.0) * k.C2 ** (2.0 / 3.0) + k.C3


def lemma4_constant(k: BoundConstants) -> float:
    """Bound on ``E|d/dt grad log p_t(x_t)|^2`` along the probability-flow ODE."""
    return 2.25 * _lemma4_sum(k)


def prop4_prefactor(k: BoundConstants) -> float:
    """K with ``W2(X, phi_1/2(Y)) <= K sigma^4``; equals ``sqrt(lemma4_constant / 12)``."""
    return math.sqrt(3.0) / 4.0 * math.sqrt(_lemma4_sum(k))


def cor2_prefactors(C: float, alpha: float, kernel: KernelSpec, d: int) -> tuple[float, float]:
    """MMD prefactors ``(K1, K2)``: MMD <= K1 sigma^2 for any alpha, <= K2 sigma^4 at alpha = 1/2."""
    if C < 0:
        raise ValueError("C must be >= 0")
    c2, c4, c8 = kernel.spectral_moment2(d), kernel.spectral_moment4(d), kernel.spectral_moment8(d)
    k1 = math.sqrt(4.0 * alpha * alpha * C * c2 + c4) / math.sqrt(2.0)
    k2 = math.sqrt(C * C * c4 + c8) / (4.0 * math.sqrt(2.0))
    return k1, k2


def prop_p_prefactors(C_p: float, alpha: float, p: float, k: BoundConstants) -> tuple[float, float]:
    """W_p prefactors ``(general alpha, alpha = 1/2)``.

    ``C_p`` is ``E|grad log p_X(X)|^p``.  The first is
    ``((1 + 2^p |alpha|^p) C_p / 2)^(1/p)`` (times sigma^2), the second
    ``9^((p-1)/p) / (4 (p+1)^(1/p)) * S^(1/p)`` (times sigma^4) with ``S`` the
    same sum as in :func:`prop4_prefactor`.
    """
    if not p >= 1:
        raise ValueError("p must be >= 1")
    if C_p < 0:
        raise ValueError("C_p must be >= 0")
    first = ((1.0 + (2.0 * abs(alpha)) ** p) * C_p / 2.0) ** (1.0 / p)
    s = _lemma4_sum(k)
    second = 9.0 ** ((p - 1.0) / p) / (4.0 * (p + 1.0) ** (1.0 / p)) * s ** (1.0 / p)
    return first, second


def subspace_w2_decomposition(w2_on_subspace: float, d: int, m: int, sigma: float, alpha: float) -> float:
    """Total W2 for a law on an m-dimensional subspace of R^d.

    The orthogonal coordinates of Y are pure noise and are scaled by
    ``1 - alpha``, adding ``(d - m)(1 - alpha)^2 sigma^2`` to W2^2.
    """
    if not 1 <= m <= d:
        raise ValueError(f"need 1 <= m <= d, got m={m}, d={d}")
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    return math.sqrt(w2_on_subspace**2 + (d - m) * (1.0 - alpha) ** 2 * sigma**2)


def prop1_charfn_bound(C: float, alpha: float, sigma: float, xi_norm) -> np.ndarray | float:
    """``sigma^2 (2 |alpha| sqrt(C) |xi| + |xi|^2) / 2`` on the characteristic function gap."""
    xi = np.asarray(xi_norm, dtype=float)
    out = sigma**2 * (2.0 * abs(alpha) * math.sqrt(C) * xi + xi**2) / 2.0
    return float(out) if out.ndim == 0 else out


def prop1_charfn_bound_half(C: float, sigma: float, xi_norm) -> np.ndarray | float:
    """``sigma^4 (C |xi|^2 + |xi|^4) / 8`` on the gap at alpha = 1/2."""
    xi = np.asarray(xi_norm, dtype=float)
    out = sigma**4 * (C * xi**2 + xi**4) / 8.0
    return float(out) if out.ndim == 0 else out
