"""Exact system + few-bath-mode simulation of the two-point heat protocol.

The bath energy is measured at ``t = 0``; system and bath then evolve
unitarily.  At ``t`` the system is projected onto ``|alpha_f>`` and the bath
energy is measured again.  Every trace against ``|alpha_f><alpha_f| (x) 1_B``
reduces to a Q-symbol of a reduced system operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDimensionError, TruncationError
from .hilbert import (
    check_density,
    coherent_amplitudes,
    displaced_thermal,
    ladder,
    number_op,
    partial_trace,
    propagator,
    tensor,
)
from .phase_space import PhaseGrid, qfi_phase_space, sld_qfi

BATH_TAIL = 1e-8
MAX_DIM = 4096
Q_FLOOR = 1e-12


@dataclass(frozen=True)
class StarModel:
    """System oscillator coupled through ``(a + a^dag)(b_k + b_k^dag)`` to bath modes."""

    omega0: float = 1.0
    modes: tuple = ((0.8, 0.1), (1.2, 0.1))
    beta: float = 5.0
    n_sys: int = 6
    n_bath: int = 6
    t: float = 5.0
    alpha0: complex = 1.0
    nbar0: float = 0.5
    rho0_tail: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple((float(w), float(g)) for w, g in self.modes))
        if self.n_sys < 2 or self.n_bath < 2:
            raise InvalidDimensionError("per-mode dimensions must be >= 2")
        if self.dim > MAX_DIM:
            raise InvalidDimensionError(f"total dimension {self.dim} exceeds {MAX_DIM}")
        if self.beta <= 0 or self.t < 0:
            raise ValueError("need beta > 0 and t >= 0")
        for w, _ in self.modes:
            tail = math.exp(-self.beta * w * self.n_bath)
            if w <= 0 or tail >= BATH_TAIL:
                need = int(math.ceil(math.log(1 / BATH_TAIL) / (self.beta * w))) + 1 if w > 0 else None
                raise TruncationError(
                    f"bath mode omega={w:g}: thermal tail {tail:.2e} >= {BATH_TAIL:g} at n_bath={self.n_bath}",
                    suggested_dim=need,
                )

    @property
    def dims(self) -> list[int]:
        return [self.n_sys] + [self.n_bath] * len(self.modes)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))


def _embed(model: StarModel, op: np.ndarray, slot: int) -> np.ndarray:
    ops = [np.eye(d, dtype=complex) for d in model.dims]
    ops[slot] = op
    return tensor(ops)


def hamiltonians(model: StarModel):
    """``(H_S, H_B, H_I)`` on the full space."""
    a = ladder(model.n_sys)
    b = ladder(model.n_bath)
    h_s = _embed(model, model.omega0 * number_op(model.n_sys), 0)
    h_b = np.zeros((model.dim, model.dim), dtype=complex)
    h_i = np.zeros_like(h_b)
    x_s = _embed(model, a + a.conj().T, 0)
    for k, (w, g) in enumerate(model.modes, start=1):
        h_b += _embed(model, w * number_op(model.n_bath), k)
        h_i += g * x_s @ _embed(model, b + b.conj().T, k)
    return h_s, h_b, h_i


def bath_state(model: StarModel, beta: float | None = None) -> np.ndarray:
    """Gibbs state of the truncated bath Hamiltonian."""
    beta = model.beta if beta is None else beta
    parts = []
    for w, _ in model.modes:
        p = np.exp(-beta * w * np.arange(model.n_bath))
        parts.append(np.diag(p / p.sum()).astype(complex))
    return tensor(parts)


def system_state(model: StarModel) -> np.ndarray:
    """Coherent thermal ``rho_0`` truncated to ``n_sys`` levels and renormalized."""
    return displaced_thermal(model.nbar0, model.alpha0, dim=model.n_sys, tail=model.rho0_tail)


@dataclass(frozen=True, eq=False)
class Evolution:
    chi0: np.ndarray
    chit: np.ndarray
    u: np.ndarray
    h_b: np.ndarray
    rho0: np.ndarray


def build_and_evolve(model: StarModel, beta: float | None = None) -> Evolution:
    h_s, h_b, h_i = hamiltonians(model)
    rho0 = system_state(model)
    chi0 = np.kron(rho0, bath_state(model, beta))
    u = propagator(h_s + h_b + h_i, model.t)
    chit = u @ chi0 @ u.conj().T
    chit = check_density(0.5 * (chit + chit.conj().T), tol=1e-9)
    return Evolution(chi0, chit, u, h_b, rho0)


def reduced(model: StarModel, op: np.ndarray) -> np.ndarray:
    return partial_trace(op, model.dims, 0)


def _symbol(amp: np.ndarray, op: np.ndarray) -> np.ndarray:
    """``<a|op|a>`` for every column of ``amp``."""
    return np.sum(amp.conj() * (op @ amp), axis=0)


@dataclass(frozen=True, eq=False)
class ProtocolResult:
    grid: PhaseGrid
    q_values: np.ndarray
    h_tra: np.ndarray
    h_bac: np.ndarray
    h_avg: float
    e_b0: float
    e_bt: float
    score: np.ndarray
    mask: np.ndarray = field(repr=False)
    imag_residual: float = 0.0

    @property
    def dh_tra(self) -> np.ndarray:
        """Trajectory heat deviation ``h_tra - h_avg`` (zero on masked points)."""
        return np.where(self.mask, self.h_tra - self.h_avg, 0.0)

    def identity_residual(self) -> float:
        """``max |score - (dh_tra + h_bac)|`` over unmasked points."""
        r = self.score - self.dh_tra - self.h_bac
        return float(np.max(np.abs(r[self.mask]))) if self.mask.any() else 0.0

    def mean_bac(self) -> float:
        return self.grid.integrate(self.q_values * self.h_bac)

    def mean_dtra(self) -> float:
        return self.grid.integrate(self.q_values * self.dh_tra)


def protocol(model: StarModel, grid: PhaseGrid, evo: Evolution | None = None) -> ProtocolResult:
    """Heat fields of the two-point protocol with a coherent projection on the system."""
    evo = evo or build_and_evolve(model)
    u, h_b = evo.u, evo.h_b
    e_b0 = float(np.real(np.trace(h_b @ evo.chi0)))
    e_bt = float(np.real(np.trace(h_b @ evo.chit)))
    amp = coherent_amplitudes(grid.points, model.n_sys)
    rho_t = reduced(model, evo.chit)
    moved = reduced(model, u @ (h_b @ evo.chi0) @ u.conj().T)
    after = reduced(model, h_b @ evo.chit)
    q_c = _symbol(amp, rho_t)
    m_c = _symbol(amp, moved)
    a_c = _symbol(amp, after)
    imag = float(max(np.abs(q_c.imag).max(), np.abs(m_c.imag).max(), np.abs(a_c.imag).max()))
    q = q_c.real
    mask = q >= Q_FLOOR
    qs = np.where(mask, q, 1.0)
    h_tra = np.where(mask, (m_c.real - a_c.real) / qs, 0.0)
    h_bac = np.where(mask, a_c.real / qs - e_bt, 0.0)
    score = np.where(mask, m_c.real / qs - e_b0, 0.0)
    return ProtocolResult(grid, q, h_tra, h_bac, e_b0 - e_bt, e_b0, e_bt, score, mask, imag)


def score_exact(model: StarModel, grid: PhaseGrid) -> np.ndarray:
    """``d ln Q_t / d(-beta)`` from the bath-energy-weighted evolved state."""
    return protocol(model, grid).score


def reduced_state(model: StarModel, beta: float | None = None) -> np.ndarray:
    """``rho_t = Tr_B chi(t)`` with the bath prepared at ``beta``."""
    return reduced(model, build_and_evolve(model, beta).chit)


def rho_builder(model: StarModel):
    """``beta -> rho_t``; only the bath preparation depends on ``beta``."""
    h_s, h_b, h_i = hamiltonians(model)
    u = propagator(h_s + h_b + h_i, model.t)
    rho0 = system_state(model)

    def build(beta: float) -> np.ndarray:
        chit = u @ np.kron(rho0, bath_state(model, beta)) @ u.conj().T
        r = reduced(model, chit)
        return 0.5 * (r + r.conj().T)

    return build


def q_family(model: StarModel, grid: PhaseGrid):
    """``beta -> Q_t`` on ``grid`` (reuses the propagator)."""
    build = rho_builder(model)
    amp = coherent_amplitudes(grid.points, model.n_sys)

    def q_of(beta: float) -> np.ndarray:
        return _symbol(amp, build(beta)).real

    return q_of


def score_fd(model: StarModel, grid: PhaseGrid, dbeta: float = 1e-4) -> np.ndarray:
    """Central difference of ``ln Q_t`` in the bath ``beta`` (masked like :func:`protocol`)."""
    q_of = q_family(model, grid)
    lo, hi, q = q_of(model.beta - dbeta), q_of(model.beta + dbeta), q_of(model.beta)
    mask = (q >= Q_FLOOR) & (lo > 0) & (hi > 0)
    return np.where(mask, (np.log(np.where(mask, lo, 1.0)) - np.log(np.where(mask, hi, 1.0))) / (2 * dbeta), 0.0)


def default_grid(model: StarModel, spacing: float = 0.2, rho: np.ndarray | None = None) -> PhaseGrid:
    """Square grid centred on ``<a>`` of the reduced state with a 5-sigma margin."""
    rho = reduced_state(model) if rho is None else rho
    a = ladder(model.n_sys)
    mu = complex(np.trace(a @ rho))
    nth = max(float(np.real(np.trace(a.conj().T @ a @ rho))) - abs(mu) ** 2, 0.0)
    return PhaseGrid.square(mu, abs(mu) + 5.0 * math.sqrt(1.0 + nth), spacing)


def qfi_cross_check(model: StarModel, grid: PhaseGrid, eps_cut: float = 1e-6, dbeta: float | None = None):
    """``(phase-space QFI, SLD QFI)`` of ``rho_t`` about the bath ``beta``."""
    build = rho_builder(model)
    return (qfi_phase_space(build, model.beta, grid, eps_cut, dbeta),
            sld_qfi(build, model.beta, dbeta))
