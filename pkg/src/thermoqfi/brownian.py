"""Markovian quantum Brownian oscillator: closed-form Q dynamics and heat fields.

The system starts in a coherent thermal state (``alpha0``, ``nbar0``) and
relaxes towards a bath at occupation ``nbar_inf``; ``Q_t`` stays Gaussian
with centre ``alpha_t`` and width ``1 + nbar(t)``.  The estimated parameter is
the bath inverse temperature ``beta = ln(1 + 1/nbar_inf) / omega0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .hilbert import displaced_thermal, displaced_thermal_dim
from .phase_space import DEFAULT_SPACING, PhaseGrid, g_form, score_field, t_kernel


@dataclass(frozen=True)
class BrownianParams:
    omega0: float = 1.0
    gamma: float = 0.1
    nbar0: float = 1.0
    nbar_inf: float = 6.0
    alpha0: complex = 0.0

    def __post_init__(self):
        if not (self.omega0 > 0 and self.gamma > 0):
            raise ValueError("omega0 and gamma must be positive")
        if self.nbar0 < 0 or not self.nbar_inf > 0:
            raise ValueError("need nbar0 >= 0 and nbar_inf > 0")
        object.__setattr__(self, "alpha0", complex(self.alpha0))

    @property
    def beta(self) -> float:
        return math.log1p(1.0 / self.nbar_inf) / self.omega0

    @property
    def dhs2(self) -> float:
        """Equilibrium energy variance ``omega0^2 nbar_inf (1 + nbar_inf)``."""
        return self.omega0**2 * self.nbar_inf * (1.0 + self.nbar_inf)

    def with_beta(self, beta: float) -> "BrownianParams":
        return replace(self, nbar_inf=1.0 / math.expm1(beta * self.omega0))


@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    alpha_t: complex
    nbar_t: float


def _check_t(t):
    if np.any(np.asarray(t) < 0):
        raise ValueError("time must be >= 0")


def decay(params: BrownianParams, t):
    return np.exp(-params.gamma * np.asarray(t, dtype=float))


def nbar_t(params: BrownianParams, t):
    e = decay(params, t)
    return params.nbar0 * e + params.nbar_inf * (1.0 - e)


def alpha_t(params: BrownianParams, t):
    t = np.asarray(t, dtype=float)
    return params.alpha0 * np.exp(-1j * params.omega0 * t - 0.5 * params.gamma * t)


def trajectory(params: BrownianParams, t: float) -> TrajectoryPoint:
    _check_t(t)
    return TrajectoryPoint(float(t), complex(alpha_t(params, t)), float(nbar_t(params, t)))


def _local(params, t, alpha_f):
    _check_t(t)
    s = 1.0 + nbar_t(params, t)
    at = alpha_t(params, t)
    u = np.asarray(alpha_f, dtype=complex) - at
    return u, at, s, np.abs(u) ** 2 - s


def q_function(params: BrownianParams, t: float, alpha_f):
    u, _, s, _ = _local(params, t, alpha_f)
    return np.exp(-np.abs(u) ** 2 / s) / s


def score(params: BrownianParams, t: float, alpha_f):
    """``d ln Q_t / d(-beta)``: proportional to ``|u|^2 - (1 + nbar(t))``."""
    _, _, s, dev = _local(params, t, alpha_f)
    p = params
    return p.omega0 * p.nbar_inf * (1 + p.nbar_inf) * (1 - decay(p, t)) / s**2 * dev


def avg_heat(params: BrownianParams, t: float) -> float:
    _check_t(t)
    p = params
    return float(p.omega0 * (nbar_t(p, t) + abs(alpha_t(p, t)) ** 2 - p.nbar0 - abs(p.alpha0) ** 2))


def traj_heat_dev(params: BrownianParams, t: float, alpha_f):
    """Trajectory heat minus its mean."""
    u, at, s, dev = _local(params, t, alpha_f)
    p, n = params, nbar_t(params, t)
    lin = 2.0 * np.real(np.conj(u) * at)
    if n == 0:
        # nbar0 = 0 at t = 0: the field vanishes identically
        return np.zeros_like(dev)
    quad = (1.0 - decay(p, t) * p.nbar0 * (1 + p.nbar0) / (n * (1 + n))) * (n / s) * dev
    return p.omega0 * (quad + (n - p.nbar0) / s * lin)


def backaction_heat(params: BrownianParams, t: float, alpha_f):
    """Bath-energy shift caused by projecting the system onto ``|alpha_f>``."""
    u, at, s, dev = _local(params, t, alpha_f)
    p, n = params, nbar_t(params, t)
    lin = 2.0 * np.real(np.conj(u) * at)
    return p.omega0 * (n - p.nbar0) / s * ((p.nbar_inf - n) / s * dev - lin)


def delta_l2_closed(params: BrownianParams, t):
    """Quantum Fisher information of ``rho_t`` about ``beta``."""
    _check_t(t)
    p, n = params, nbar_t(params, t)
    num = p.omega0**2 * p.nbar_inf**2 * (1 + p.nbar_inf) ** 2 * (1 - decay(p, t)) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(num == 0, 0.0, num / np.where(num == 0, 1.0, n * (1 + n)))
    return float(out) if out.ndim == 0 else out


def classical_fisher(params: BrownianParams, t):
    """Heterodyne (Q-distribution) Fisher information ``sum w L^2 Q`` in closed form."""
    n = nbar_t(params, t)
    return delta_l2_closed(params, t) * n / (1.0 + n)


def state_dim(params: BrownianParams, t: float, tail: float = 1e-10) -> int:
    """Fock dimension for ``rho_t`` with headroom for beta perturbations."""
    tp = trajectory(params, t)
    return displaced_thermal_dim(tp.nbar_t * 1.01 + 0.01, tp.alpha_t, tail * 1e-2)


def rho_t(params: BrownianParams, t: float, dim: int | None = None) -> np.ndarray:
    """``D(alpha_t) thermal(nbar(t)) D(alpha_t)^dag`` in the Fock basis."""
    tp = trajectory(params, t)
    return displaced_thermal(tp.nbar_t, tp.alpha_t, dim=dim or state_dim(params, t))


def rho_builder(params: BrownianParams, t: float, dim: int | None = None):
    """``beta -> rho_t`` with the bath inverse temperature as argument and a fixed dimension."""
    dim = dim or state_dim(params, t)

    def build(beta: float) -> np.ndarray:
        return rho_t(params.with_beta(beta), t, dim)

    return build


def default_times(gamma: float, n: int = 60, lo: float = 1e-3, hi: float = 8.0) -> np.ndarray:
    """Log-spaced times with ``gamma t`` in ``[lo, hi]``."""
    return np.geomspace(lo, hi, n) / gamma


def default_half_width(tp: TrajectoryPoint) -> float:
    return abs(tp.alpha_t) + 5.0 * math.sqrt(1.0 + tp.nbar_t)


@dataclass(frozen=True)
class CovarianceReport:
    t: float
    gamma_t: float
    nbar_t: float
    dl2_closed: float
    dl2_grid: float
    var_tra: float
    cov: float
    var_bac: float
    dhs2: float
    rank: int = 0

    @property
    def total(self) -> float:
        return self.var_tra + 2.0 * self.cov + self.var_bac

    def sum_rule_violation(self) -> float:
        """Relative gap of ``var_tra + 2 cov + var_bac`` to the closed form (absolute when it is 0)."""
        ref = self.dl2_closed
        return abs(self.total - ref) / ref if ref > 0 else abs(self.total)


def covariance_point(params: BrownianParams, t: float, spacing: float = DEFAULT_SPACING,
                     half_width: float | None = None, eps_cut: float = 1e-6, **kernel_opts) -> CovarianceReport:
    """Heat covariance entries under the numerically inverted metric at time ``t``."""
    tp = trajectory(params, t)
    grid = PhaseGrid.square(tp.alpha_t, half_width or default_half_width(tp), spacing)
    dim = state_dim(params, t)
    build = rho_builder(params, t, dim)
    kern = t_kernel(build(params.beta), grid, eps_cut, **kernel_opts)
    q = kern.q
    tra = traj_heat_dev(params, t, grid.points)
    bac = backaction_heat(params, t, grid.points)
    # one coefficient vector per field keeps the three entries mutually consistent
    ct, cb = kern.coefficients(q * tra), kern.coefficients(q * bac)
    lam = kern.eigenvalues
    var_tra = float(np.sum(ct * ct / lam))
    cov = float(np.sum(ct * cb / lam))
    var_bac = float(np.sum(cb * cb / lam))
    if t > 0:
        sc = score_field(build, params.beta, grid).values
        dl2_grid = max(g_form(kern, q, sc, sc), 0.0)
    else:
        dl2_grid = 0.0
    return CovarianceReport(float(t), float(params.gamma * t), tp.nbar_t, float(delta_l2_closed(params, t)),
                            dl2_grid, var_tra, cov, var_bac, params.dhs2, kern.rank)


def covariance_scan(params: BrownianParams, times: Iterable[float] | None = None, spacing: float = DEFAULT_SPACING,
                    half_width: float | None = None, eps_cut: float = 1e-6, **kernel_opts) -> list[CovarianceReport]:
    """Covariance matrix of trajectory and backaction heat along ``times``."""
    times = default_times(params.gamma) if times is None else times
    return [covariance_point(params, float(t), spacing, half_width, eps_cut, **kernel_opts) for t in times]
