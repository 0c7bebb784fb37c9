"""Probability-flow ODE and the DDIM / Euler discrete samplers.

The noising process is ``x_t = X + B_t``, so the noised density at time ``t``
is the target convolved with ``N(0, t I)``.  Its probability-flow ODE is
``dx/dt = -grad log p_t(x) / 2``.

The discrete samplers work on a grid ``t_0 > t_1 > ... > t_N = 0`` with a
noise level ``sigma(t)`` and a scale ``s(t)``; the score is queried at
``x / s(t_k)`` and noise variance ``sigma(t_k)^2``.  At unit scale both
samplers are alpha-denoising steps between consecutive noise levels,
``x + alpha_k (sigma_k^2 - sigma_{k+1}^2) score(x; sigma_k^2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import config as cfg
from ._rng import make_rng
from .errors import ConfigError, UnsupportedError
from .targets import NoisedScoreOracle, SampleBatch

SIGMA_FNS = ("sqrt_t", "linear_t", "table")
SCALE_FNS = ("unit", "table")
SPACINGS = ("geometric", "uniform")

RK4_CLAMP = 1e-12


@dataclass(frozen=True)
class Schedule:
    """A decreasing time grid with its noise levels and scales.

    Attributes:
        grid: ``t_0 > t_1 > ... > t_N = 0``.
        sigma_fn: ``"sqrt_t"`` (sigma = sqrt(t)), ``"linear_t"`` (sigma = t)
            or ``"table"`` (``sigma_table`` gives sigma per node).
        scale_fn: ``"unit"`` (s = 1) or ``"table"`` (``scale_table`` per node).
    """

    grid: tuple[float, ...]
    sigma_fn: str = "sqrt_t"
    scale_fn: str = "unit"
    sigma_table: tuple[float, ...] | None = None
    scale_table: tuple[float, ...] | None = None

    def __post_init__(self):
        grid = tuple(float(t) for t in self.grid)
        if len(grid) < 2:
            raise ValueError("a schedule needs at least 2 nodes")
        if grid[-1] != 0.0:
            raise ValueError("the last grid node must be t = 0")
        if not all(a > b for a, b in zip(grid[:-1], grid[1:])):
            raise ValueError("grid times must be strictly decreasing")
        if not all(math.isfinite(t) for t in grid):
            raise ValueError("grid times must be finite")
        object.__setattr__(self, "grid", grid)
        if self.sigma_fn not in SIGMA_FNS:
            raise ValueError(f"unknown sigma_fn {self.sigma_fn!r}; expected one of {SIGMA_FNS}")
        if self.scale_fn not in SCALE_FNS:
            raise ValueError(f"unknown scale_fn {self.scale_fn!r}; expected one of {SCALE_FNS}")
        if self.sigma_fn == "table":
            sig = self._table(self.sigma_table, "sigma_table")
            if sig[-1] < 0 or any(s <= 0 for s in sig[:-1]):
                raise ValueError("sigma must be > 0 at every node but the last, and >= 0 there")
            if not all(a > b for a, b in zip(sig[:-1], sig[1:])):
                raise ValueError("sigma must increase strictly with t")
            object.__setattr__(self, "sigma_table", sig)
        if self.scale_fn == "table":
            sc = self._table(self.scale_table, "scale_table")
            if any(s <= 0 for s in sc):
                raise ValueError("scales must be > 0")
            object.__setattr__(self, "scale_table", sc)

    def _table(self, values, name):
        if values is None or len(values) != len(self.grid):
            raise ValueError(f"{name} needs one value per grid node")
        out = tuple(float(v) for v in values)
        if not all(math.isfinite(v) for v in out):
            raise ValueError(f"{name} must be finite")
        return out

    @classmethod
    def make(
        cls,
        count: int,
        t_max: float,
        t_min: float | None = None,
        spacing: str = "geometric",
        sigma_fn: str = "sqrt_t",
        scale_fn: str = "unit",
    ) -> "Schedule":
        """A grid of ``count`` steps ending at ``t = 0``.

        Geometric spacing puts ``count`` nodes log-uniformly on
        ``[t_min, t_max]`` (``t_min`` defaults to ``1e-3 t_max``) and then
        adds the terminal node 0; uniform spacing splits ``[0, t_max]`` evenly.
        """
        if count < 1:
            raise ValueError("count must be >= 1")
        if not t_max > 0:
            raise ValueError("t_max must be > 0")
        if sigma_fn == "table" or scale_fn == "table":
            raise ValueError("table schedules must be built with explicit tables")
        if spacing == "geometric":
            t_min = 1e-3 * t_max if t_min is None else float(t_min)
            if not 0 < t_min <= t_max:
                raise ValueError("need 0 < t_min <= t_max")
            if count == 1:
                nodes = np.array([t_max])
            else:
                if t_min == t_max:
                    raise ValueError("need t_min < t_max for more than one step")
                nodes = np.geomspace(t_max, t_min, count)
            grid = (*nodes.tolist(), 0.0)
        elif spacing == "uniform":
            grid = tuple(np.linspace(t_max, 0.0, count + 1).tolist())
        else:
            raise ValueError(f"unknown spacing {spacing!r}; expected one of {SPACINGS}")
        return cls(grid, sigma_fn, scale_fn)

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "Schedule":
        try:
            return cls.make(
                count=cfg.parse_int(cfg.require(items, "count"), "count"),
                t_max=cfg.parse_float(cfg.require(items, "t_max"), "t_max"),
                t_min=cfg.parse_float(items["t_min"], "t_min") if "t_min" in items else None,
                spacing=items.get("spacing", "geometric"),
                sigma_fn=items.get("sigma_fn", "sqrt_t"),
                scale_fn=items.get("scale_fn", "unit"),
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"invalid schedule: {exc}") from None

    @classmethod
    def from_config(cls, text: str) -> "Schedule":
        return cls.from_items(cfg.parse_kv(text))

    @property
    def steps(self) -> int:
        return len(self.grid) - 1

    def sigma(self, k: int) -> float:
        if self.sigma_fn == "table":
            return self.sigma_table[k]
        t = self.grid[k]
        return math.sqrt(t) if self.sigma_fn == "sqrt_t" else t

    def sigma2(self, k: int) -> float:
        """sigma^2 at node k; exact (``t`` itself) for ``sqrt_t``."""
        if self.sigma_fn == "sqrt_t":
            return self.grid[k]
        s = self.sigma(k)
        return s * s

    def sigma_dot_sigma(self, k: int) -> float:
        """``sigma'(t) sigma(t)`` at node k."""
        if self.sigma_fn == "sqrt_t":
            return 0.5
        if self.sigma_fn == "linear_t":
            return self.grid[k]
        raise UnsupportedError("table noise schedules have no analytic derivative")

    def scale(self, k: int) -> float:
        return 1.0 if self.scale_fn == "unit" else self.scale_table[k]

    def scale_dot(self, k: int) -> float:
        if self.scale_fn == "unit":
            return 0.0
        raise UnsupportedError("table scale schedules have no analytic derivative")

    def sigmas(self) -> np.ndarray:
        return np.array([self.sigma(k) for k in range(len(self.grid))])


# --------------------------------------------------------------------------
# probability-flow ODE


def _field(oracle: NoisedScoreOracle, x: np.ndarray, t: float) -> np.ndarray:
    return -0.5 * oracle.score(x, t)


def _integrate(oracle: NoisedScoreOracle, x: np.ndarray, t_start: float, t_end: float, steps: int, method: str):
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if method not in ("euler", "rk4"):
        raise ValueError(f"unknown method {method!r}; expected 'euler' or 'rk4'")
    ts = np.linspace(t_start, t_end, steps + 1)
    ts[0], ts[-1] = t_start, t_end
    if abs(ts[1] - ts[0]) <= 1e-15 * max(abs(t_start), abs(t_end)):
        raise FloatingPointError("ODE step size underflows")
    floor = RK4_CLAMP * max(t_start, t_end)
    x = np.array(x, dtype=float)
    for j in range(steps):
        t, h = ts[j], ts[j + 1] - ts[j]
        if method == "euler" or ts[j + 1] == 0.0:
            # x + h * (-score / 2), h < 0 backward; a substep landing on t = 0
            # uses only its left endpoint since the field may be singular there
            x = x + (0.5 * (t - ts[j + 1])) * oracle.score(x, t)
        else:
            th = max(t + 0.5 * h, floor)
            t1 = max(ts[j + 1], floor)
            k1 = _field(oracle, x, t)
            k2 = _field(oracle, x + 0.5 * h * k1, th)
            k3 = _field(oracle, x + 0.5 * h * k2, th)
            k4 = _field(oracle, x + h * k3, t1)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite ODE state at t={ts[j + 1]!r}")
    return x


def pf_ode_integrate(
    oracle: NoisedScoreOracle,
    start: SampleBatch,
    t_start: float,
    t_end: float,
    steps: int,
    method: str = "rk4",
) -> SampleBatch:
    """Integrate ``dx/dt = -grad log p_t(x) / 2`` from ``t_start`` down to ``t_end``.

    Uses ``steps`` uniform steps in ``t``.  The score is never evaluated at
    ``t = 0``: a substep that ends at ``t = 0`` is an Euler step from its
    left endpoint (with either method), and the other RK4 stages clamp their
    time to at least ``1e-12 * t_start``.

    Raises:
        ValueError: if ``steps < 1`` or the interval is not ``t_start > t_end >= 0``.
        FloatingPointError: on step-size underflow or a non-finite state.
    """
    if not (t_start > t_end >= 0):
        raise ValueError(f"need t_start > t_end >= 0, got {t_start}, {t_end}")
    x = _integrate(oracle, start.data, float(t_start), float(t_end), steps, method)
    return start.with_data(x)


def gaussian_flow_factor(tau: float, t_from: float, t_to: float) -> float:
    """Exact flow map of a N(0, tau^2 I) target: ``x_to = factor * x_from``."""
    return math.sqrt((tau * tau + t_to) / (tau * tau + t_from))


# --------------------------------------------------------------------------
# discrete samplers


def alpha_step(oracle: NoisedScoreOracle, x, sig_k: float, sig_k1: float, alpha: float) -> np.ndarray:
    """``x + alpha (sig_k^2 - sig_k1^2) score(x; sig_k^2)``: alpha-denoising from ``sig_k`` to ``sig_k1``."""
    x = np.asarray(x, dtype=float)
    s2 = sig_k * sig_k
    return x + alpha * (s2 - sig_k1 * sig_k1) * oracle.score(x, s2)


def ddim_step(oracle: NoisedScoreOracle, x, s_k: float, s_k1: float, sig_k: float, sig_k1: float) -> np.ndarray:
    """One DDIM update from noise level ``sig_k`` (scale ``s_k``) to ``sig_k1`` (scale ``s_k1``)."""
    if not sig_k > 0:
        raise ValueError("sig_k must be > 0")
    if sig_k1 < 0 or not (s_k > 0 and s_k1 > 0):
        raise ValueError("need sig_k1 >= 0 and positive scales")
    x = np.asarray(x, dtype=float)
    s2 = sig_k * sig_k
    return (s_k1 / s_k) * x + s_k1 * (s2 - sig_k * sig_k1) * oracle.score(x / s_k, s2)


def _ddim_node_step(oracle, x, schedule: Schedule, k: int):
    return ddim_step(
        oracle, x, schedule.scale(k), schedule.scale(k + 1), schedule.sigma(k), schedule.sigma(k + 1)
    )


def euler_step(oracle: NoisedScoreOracle, x, schedule: Schedule, k: int) -> np.ndarray:
    """Euler update from node ``k`` to ``k + 1`` with exact ``s'`` and ``sigma'``.

    Raises:
        UnsupportedError: for table schedules.
    """
    x = np.asarray(x, dtype=float)
    dt = schedule.grid[k + 1] - schedule.grid[k]
    if dt == 0.0:
        return x.copy()
    s_k, s_k1 = schedule.scale(k), schedule.scale(k + 1)
    sds = schedule.sigma_dot_sigma(k)
    sdot = schedule.scale_dot(k)
    if not schedule.sigma(k) > 0:
        raise ValueError("sigma must be > 0 at the left node")
    score = oracle.score(x / s_k, schedule.sigma2(k))
    return (1.0 + sdot * dt / s_k) * x - (s_k1 * dt * sds) * score


def extract_alpha_schedule(schedule: Schedule, method: str) -> np.ndarray:
    """The per-step alpha that each discrete update applies between noise levels.

    DDIM: ``sigma_k / (sigma_{k+1} + sigma_k)``.  Euler (unit scale only):
    ``-(t_{k+1} - t_k) sigma'(t_k) sigma(t_k) / (sigma_k^2 - sigma_{k+1}^2)``.
    """
    n = schedule.steps
    if method == "ddim":
        sig = schedule.sigmas()
        return sig[:-1] / (sig[1:] + sig[:-1])
    if method == "euler":
        if schedule.scale_fn != "unit":
            raise UnsupportedError("the Euler alpha interpretation needs a unit scale")
        out = np.empty(n)
        for k in range(n):
            dt = schedule.grid[k + 1] - schedule.grid[k]
            out[k] = -dt * schedule.sigma_dot_sigma(k) / (schedule.sigma2(k) - schedule.sigma2(k + 1))
        return out
    raise ValueError(f"unknown method {method!r}; expected 'ddim' or 'euler'")


def run_schedule(oracle: NoisedScoreOracle, x, schedule: Schedule, method: str, *, trajectory: bool = False):
    """Apply the chosen stepper down the whole grid, starting from state ``x`` at ``t_0``."""
    if method == "ddim":
        step = _ddim_node_step
    elif method == "euler":
        step = euler_step
    else:
        raise ValueError(f"unknown method {method!r}; expected 'ddim' or 'euler'")
    x = np.asarray(x, dtype=float)
    states = [x]
    for k in range(schedule.steps):
        x = step(oracle, x, schedule, k)
        if trajectory:
            states.append(x)
    return states if trajectory else x


def multistep_sample(
    oracle: NoisedScoreOracle, schedule: Schedule, method: str, n: int, seed: int
) -> SampleBatch:
    """Sample by drawing ``N(0, s(t_0)^2 sigma(t_0)^2 I)`` and stepping down the grid."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed, 0xF10)
    x0 = schedule.scale(0) * schedule.sigma(0) * rng.standard_normal((n, oracle.dim))
    x = run_schedule(oracle, x0, schedule, method)
    return SampleBatch(x, seed, f"{method}:{oracle.target.family}")
