"""Phase-space quantum Fisher information on a discretized coherent-state plane.

Fields live on a square :class:`PhaseGrid` with measure ``d^2 alpha / pi``.
The transformation kernel ``T(a, a') = Tr[{Pi_a, Pi_a'} rho]`` (or its
skew-information variant) is never stored at full grid size.  Every
contraction with the fine grid runs through ``rho``'s eigenbasis, which costs
``O(M dim^2)``.  The regularized inverse is a truncated eigendecomposition of
the weighted kernel on a set of solve nodes.  Nodes are the whole grid when
it is small, or a nested coarser sub-grid otherwise (Nystrom extension back
to the fine grid).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .errors import GridTooSmallError, KernelDegenerateError, SingularStateError, ThermoQFIError
from .hilbert import check_density, coherent_amplitudes, ladder

COVERAGE_TAIL = 1e-8
DEFAULT_SPACING = 0.2
DEFAULT_NODE_SPACING = 0.4
DENSE_LIMIT = 2500
MAX_NODES = 9000

RhoBuilder = Callable[[float], np.ndarray]


@dataclass(frozen=True, eq=False)
class PhaseGrid:
    """Uniform quadrature points in the complex plane.

    ``points`` is flat; each point carries weight ``spacing**2 / pi``.  Grids
    produced by :meth:`subgrid` may be masked and then cover an irregular
    subset of a coarser lattice.
    """

    points: np.ndarray
    spacing: float
    center: complex
    half_width: float

    @classmethod
    def square(cls, center: complex, half_width: float, spacing: float = DEFAULT_SPACING) -> "PhaseGrid":
        if spacing <= 0 or half_width <= 0:
            raise ValueError("spacing and half_width must be positive")
        n = int(math.ceil(half_width / spacing - 1e-9))
        offs = np.arange(-n, n + 1) * spacing
        x, y = np.meshgrid(offs, offs, indexing="ij")
        pts = complex(center) + (x + 1j * y).ravel()
        return cls(pts, float(spacing), complex(center), n * spacing)

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def weight(self) -> float:
        return self.spacing**2 / math.pi

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.size, self.weight)

    @property
    def side(self) -> int:
        return int(round(2 * self.half_width / self.spacing)) + 1

    def area(self) -> float:
        """Area of the union of the grid cells."""
        return self.size * self.spacing**2

    def integrate(self, values) -> float:
        return float(self.weight * np.sum(values))

    def subgrid(self, stride: int, mask=None):
        """Nested sub-lattice keeping every ``stride``-th row and column through the centre.

        Returns ``(grid, index)``; ``index`` maps sub-grid points into ``self``.
        Only valid for full square grids.
        """
        side = self.side
        if side * side != self.size:
            raise ValueError("subgrid() needs a full square grid")
        n = side // 2
        keep = np.nonzero((np.arange(side) - n) % stride == 0)[0]
        ii, jj = np.meshgrid(keep, keep, indexing="ij")
        index = (ii * side + jj).ravel()
        if mask is not None:
            index = index[np.asarray(mask)[index]]
        sub = PhaseGrid(self.points[index], self.spacing * stride, self.center, self.half_width)
        return sub, index


def default_grid(center: complex, nbar: float, spacing: float = DEFAULT_SPACING) -> PhaseGrid:
    """Square grid centred on the displacement, half-width ``|c| + 5 sqrt(1 + nbar)``."""
    return PhaseGrid.square(center, abs(center) + 5.0 * math.sqrt(1.0 + nbar), spacing)


def frame_operator(grid: PhaseGrid, dim: int) -> np.ndarray:
    """Quadrature of ``int dmu |a><a|`` with truncated unnormalized vectors."""
    v = coherent_amplitudes(grid.points, dim)
    return grid.weight * (v @ v.conj().T)


def _coverage(rho: np.ndarray, grid: PhaseGrid, tail: float = COVERAGE_TAIL):
    dim = rho.shape[0]
    a = ladder(dim)
    mu = complex(np.trace(a @ rho))
    nmean = float(np.real(np.trace(a.conj().T @ a @ rho)))
    spread = max(1.0 + nmean - abs(mu) ** 2, 1.0)
    need = math.sqrt(spread * math.log(1.0 / tail))
    off = mu - grid.center
    reach = max(abs(off.real), abs(off.imag)) + need
    return reach, need


def check_coverage(rho: np.ndarray, grid: PhaseGrid, tail: float = COVERAGE_TAIL) -> None:
    """Raise :class:`GridTooSmallError` unless the grid holds all but ``tail`` of ``Q``.

    The tail is estimated from a Gaussian with the state's mean amplitude and
    ``<a^dag a>``.
    """
    reach, _ = _coverage(rho, grid, tail)
    if reach > grid.half_width + 1e-9:
        raise GridTooSmallError(
            f"grid half-width {grid.half_width:.4g} < {reach:.4g} needed for Q tail < {tail:g}",
            suggested_half_width=reach,
        )


def husimi_q(rho: np.ndarray, grid: PhaseGrid, check: bool = True) -> np.ndarray:
    """``Q(a) = <a|rho|a>`` on the grid, with truncated unnormalized ``|a>``."""
    rho = check_density(rho)
    if check:
        check_coverage(rho, grid)
    v = coherent_amplitudes(grid.points, rho.shape[0])
    q = np.real(np.sum(v.conj() * (rho @ v), axis=0))
    if check:
        total = grid.integrate(q)
        if abs(total - 1.0) > 1e-4:
            raise GridTooSmallError(
                f"sum w Q = {total:.8f} deviates from 1 by more than 1e-4",
                suggested_half_width=1.5 * grid.half_width,
            )
    return q


def gauss_legendre_unit(n: int):
    """Gauss-Legendre nodes and weights on ``[0, 1]``."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def skew_mean_matrix(p: np.ndarray, lambda_nodes: int = 32) -> np.ndarray:
    """``m_kl = int_0^1 p_k^(1-l) p_l^l dl`` by Gauss-Legendre; zero off the support."""
    lam, wts = gauss_legendre_unit(lambda_nodes)
    pos = p > 0
    lp = np.where(pos, np.log(np.where(pos, p, 1.0)), 0.0)
    expo = (1.0 - lam)[:, None, None] * lp[None, :, None] + lam[:, None, None] * lp[None, None, :]
    m = np.einsum("q,qkl->kl", wts, np.exp(expo))
    m[~pos, :] = 0.0
    m[:, ~pos] = 0.0
    return 0.5 * (m + m.T)


@dataclass(eq=False)
class MetricKernel:
    """Discretized ``T`` (kind ``"sld"``) or ``T_SI`` (kind ``"si"``) with a truncated inverse.

    ``norm`` selects the regularization of the pseudo-inverse: ``"flat"``
    truncates the spectrum of ``W^1/2 K W^1/2`` (minimum flat-norm solution);
    ``"q-weighted"`` truncates ``W^1/2 Q^-1/2 K Q^-1/2 W^1/2`` so the solved
    P-field has minimum ``L^2(Q dmu)`` norm.  Both solve the same discrete
    system; they differ only in which null-space component is kept.
    """

    kind: str
    grid: PhaseGrid
    q: np.ndarray
    eps_cut: float
    norm: str
    nodes: np.ndarray
    node_weight: float
    _p: np.ndarray = field(repr=False)
    _amp: np.ndarray = field(repr=False)
    _mean: np.ndarray | None = field(repr=False)
    q_floor: float = 1e-14
    _eig: tuple | None = field(default=None, repr=False)

    @property
    def dense(self) -> bool:
        return self.nodes.size == self.grid.size and self.node_weight == self.grid.weight

    @property
    def rank(self) -> int:
        return self.eigenvalues.size

    @property
    def eigenvalues(self) -> np.ndarray:
        """Retained eigenvalues of the weighted node kernel, descending."""
        return self._factor()[0]

    @property
    def eigenvectors(self) -> np.ndarray:
        return self._factor()[1]

    @property
    def lambda_max(self) -> float:
        return self._factor()[2]

    @property
    def node_points(self) -> np.ndarray:
        return self.grid.points[self.nodes]

    # -- raw kernel access -------------------------------------------------
    def block(self, rows=None, cols=None) -> np.ndarray:
        """Dense ``K[rows][:, cols]`` (index arrays into the fine grid)."""
        er = self._amp if rows is None else self._amp[:, rows]
        ec = self._amp if cols is None else self._amp[:, cols]
        if self.kind == "sld":
            g_rho = (er.conj().T * self._p) @ ec
            g_one = er.conj().T @ ec
            return np.real(g_rho * g_one.conj())
        mu, vecs = np.linalg.eigh(self._mean)
        keep = np.abs(mu) > 1e-15 * np.abs(mu).max()
        out = np.zeros((er.shape[1], ec.shape[1]))
        for m, v in zip(mu[keep], vecs[:, keep].T):
            g = (er.conj().T * v) @ ec
            out += m * (g.real**2 + g.imag**2)
        return out

    def matrix(self, max_size: int = 8000) -> np.ndarray:
        if self.grid.size > max_size:
            raise ThermoQFIError(f"grid has {self.grid.size} points; dense kernel limited to {max_size}")
        return self.block()

    def apply(self, v, src=None, dst=None) -> np.ndarray:
        """``sum_j K_ij v_j`` with ``j`` over ``src`` and ``i`` over ``dst`` (default: whole grid)."""
        es = self._amp if src is None else self._amp[:, src]
        ed = self._amp if dst is None else self._amp[:, dst]
        x = (es * np.asarray(v, dtype=float)) @ es.conj().T
        if self.kind == "sld":
            y = 0.5 * (x * self._p[None, :] + self._p[:, None] * x)
        else:
            y = self._mean * x
        return np.real(np.sum(ed.conj() * (y @ ed), axis=0))

    def row_measure(self) -> np.ndarray:
        """``sum_j w_j K_ij`` over the fine grid."""
        return self.grid.weight * self.apply(np.ones(self.grid.size))

    # -- regularized inverse ----------------------------------------------
    def _qmask(self):
        return self.q > self.q_floor * self.q.max()

    def coefficients(self, b) -> np.ndarray:
        """Coordinates of ``b = Q f`` on the retained eigenfunctions."""
        b = np.asarray(b, dtype=float)
        w = self.grid.weight
        if self.norm == "q-weighted":
            ok = self._qmask()
            f = np.where(ok, b / np.where(ok, self.q, 1.0), 0.0)
            if self.dense:
                bt = np.sqrt(self.q) * f
                return self.eigenvectors.T @ (math.sqrt(w) * bt)
            y = self.apply(w * f, dst=self.nodes) / np.sqrt(self.q[self.nodes])
        else:
            if self.dense:
                return self.eigenvectors.T @ (math.sqrt(w) * b)
            y = self.apply(w * b, dst=self.nodes)
        return (self.eigenvectors.T @ (math.sqrt(self.node_weight) * y)) / self.eigenvalues

    def form(self, b1, b2=None) -> float:
        c1 = self.coefficients(b1)
        c2 = c1 if b2 is None else self.coefficients(b2)
        return float(np.sum(c1 * c2 / self.eigenvalues))

    def solve(self, b) -> np.ndarray:
        """Regularized ``x`` with ``sum_j K_ij w_j x_j = b_i`` on the fine grid."""
        c = self.coefficients(b)
        w = self.grid.weight
        if self.dense:
            z = self.eigenvectors @ (c / self.eigenvalues) / math.sqrt(w)
            if self.norm == "q-weighted":
                ok = self._qmask()
                return np.where(ok, z / np.sqrt(np.where(ok, self.q, 1.0)), 0.0)
            return z
        coef = math.sqrt(self.node_weight) * (self.eigenvectors @ (c / self.eigenvalues**2))
        if self.norm == "q-weighted":
            coef = coef / np.sqrt(self.q[self.nodes])
            ok = self._qmask()
            return np.where(ok, self.apply(coef, src=self.nodes) / np.where(ok, self.q, 1.0), 0.0)
        return self.apply(coef, src=self.nodes)

    def _factor(self):
        """Truncated eigendecomposition of the weighted node kernel (computed once)."""
        if self._eig is not None:
            return self._eig
        nodes = self.nodes
        a = self.block(nodes, nodes)
        if self.norm == "q-weighted":
            s = 1.0 / np.sqrt(self.q[nodes])
            a = a * s[:, None] * s[None, :]
        a *= self.node_weight
        a = 0.5 * (a + a.T)
        if a.shape[0] > 50:
            # fixed start vector keeps ARPACK (and hence the cutoff) reproducible
            v0 = np.ones(a.shape[0])
            lmax = float(scipy.sparse.linalg.eigsh(a, k=1, which="LA", v0=v0, return_eigenvectors=False)[0])
        else:
            lmax = float(np.linalg.eigvalsh(a)[-1])
        if lmax <= 0:
            raise KernelDegenerateError("kernel has no positive spectrum")
        ev, vec = scipy.linalg.eigh(a, subset_by_value=(self.eps_cut * lmax, np.inf), driver="evr")
        order = np.argsort(ev)[::-1]
        ev, vec = ev[order], vec[:, order]
        if ev.size < 3:
            raise KernelDegenerateError(f"cutoff {self.eps_cut:g} leaves {ev.size} singular values")
        self._eig = (ev, vec, max(lmax, float(ev[0])))
        return self._eig

    def truncated(self, eps_cut: float) -> "MetricKernel":
        """Same factorization with a larger relative cutoff."""
        if eps_cut < self.eps_cut:
            raise ValueError(f"cannot lower the cutoff below the computed {self.eps_cut:g}")
        keep = self.eigenvalues > eps_cut * self.lambda_max
        if keep.sum() < 3:
            raise KernelDegenerateError(f"cutoff {eps_cut:g} leaves {keep.sum()} singular values")
        return replace(self, eps_cut=eps_cut, _eig=(self.eigenvalues[keep], self.eigenvectors[:, keep],
                                                    self.lambda_max))


def _build_kernel(kind, rho, grid, eps_cut, norm, node_spacing, node_floor, p, basis, mean,
                  check=True, dense_limit=DENSE_LIMIT, q_floor=1e-14):
    if norm not in ("flat", "q-weighted"):
        raise ValueError(f"unknown norm {norm!r}")
    if check:
        check_coverage(rho, grid)
    amp = basis.conj().T @ coherent_amplitudes(grid.points, rho.shape[0])
    q = np.real(np.sum(np.abs(amp) ** 2 * np.clip(p, 0, None)[:, None], axis=0))
    if check and abs(grid.integrate(q) - 1.0) > 1e-4:
        raise GridTooSmallError(f"sum w Q = {grid.integrate(q):.8f} deviates from 1 by more than 1e-4",
                                suggested_half_width=1.5 * grid.half_width)
    if node_spacing is None and grid.size <= dense_limit:
        nodes, node_weight = np.arange(grid.size), grid.weight
    else:
        # never coarser than requested: wider node lattices lose the solve
        stride = max(1, int(math.floor((node_spacing or DEFAULT_NODE_SPACING) / grid.spacing + 1e-9)))
        sub, nodes = grid.subgrid(stride, mask=q >= node_floor * q.max())
        node_weight = sub.weight
    if nodes.size > MAX_NODES:
        raise ThermoQFIError(f"{nodes.size} solve nodes exceed {MAX_NODES}; increase node_spacing")
    if norm == "q-weighted":
        nodes = nodes[q[nodes] > q_floor * q.max()]
    kern = MetricKernel(kind, grid, q, eps_cut, norm, nodes, node_weight, p, amp, mean, q_floor)
    return kern


def t_kernel(rho: np.ndarray, grid: PhaseGrid, eps_cut: float = 1e-6, *, norm: str = "flat",
             node_spacing: float | None = None, node_floor: float = 1e-10, check: bool = True,
             dense_limit: int = DENSE_LIMIT) -> MetricKernel:
    """Kernel ``T(a, a') = Re[<a'|rho|a><a|a'>]`` with its truncated inverse.

    ``node_spacing=None`` solves on the full grid when it has at most
    ``dense_limit`` points and on a 0.4-spaced sub-lattice otherwise.  Nodes
    where ``Q < node_floor * max Q`` are dropped from the solve.
    """
    rho = check_density(rho)
    p, basis = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    return _build_kernel("sld", rho, grid, eps_cut, norm, node_spacing, node_floor, p, basis, None,
                         check=check, dense_limit=dense_limit)


def t_si_kernel(rho: np.ndarray, grid: PhaseGrid, lambda_nodes: int = 32, eps_cut: float = 1e-6, *,
                eig_floor: float | None = 1e-14, norm: str = "flat", node_spacing: float | None = None,
                node_floor: float = 1e-10, check: bool = True, dense_limit: int = DENSE_LIMIT) -> MetricKernel:
    """Skew-information kernel ``int_0^1 Tr[Pi_a rho^(1-l) Pi_a' rho^l] dl``.

    Eigenvalues below ``eig_floor`` are treated as outside the support
    (``0^l = 0`` for every ``l``), so a pure state reproduces ``Tr[Pi rho Pi' rho]``.
    With ``eig_floor=None`` a rank-deficient state is rejected.
    """
    rho = check_density(rho)
    p, basis = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    if eig_floor is None:
        if p.min() <= 0:
            raise SingularStateError(f"rho has eigenvalue {p.min():.3e} <= 0; pass an eig_floor")
    else:
        p = np.where(p < eig_floor, 0.0, p)
    mean = skew_mean_matrix(p, lambda_nodes)
    return _build_kernel("si", rho, grid, eps_cut, norm, node_spacing, node_floor, p, basis, mean,
                         check=check, dense_limit=dense_limit)


def g_form(kernel: MetricKernel, q, f1, f2) -> float:
    """``<f1, f2>_g = sum Q f1 . T^+ . Q f2`` with the kernel's truncated inverse."""
    q = np.asarray(q, dtype=float)
    return kernel.form(q * np.asarray(f1, dtype=float), q * np.asarray(f2, dtype=float))


def metric_action(kernel: MetricKernel, q, f) -> np.ndarray:
    """Pointwise ``int dmu' g(a, a') f(a')`` on the fine grid."""
    q = np.asarray(q, dtype=float)
    return q * kernel.solve(q * np.asarray(f, dtype=float))


class ScoreField(NamedTuple):
    values: np.ndarray
    excluded: np.ndarray


def _default_dbeta(beta, dbeta):
    if dbeta is None:
        dbeta = 1e-4 * beta
    if dbeta <= 0:
        raise ValueError("dbeta must be positive")
    return dbeta


def score_field(rho_builder: RhoBuilder, beta: float, grid: PhaseGrid, dbeta: float | None = None,
                floor: float = 1e-300) -> ScoreField:
    """Central difference ``[ln Q(beta - d) - ln Q(beta + d)] / 2d``.

    Points where either ``Q`` falls below ``floor`` are zeroed and flagged.
    """
    dbeta = _default_dbeta(beta, dbeta)
    q_lo = husimi_q(rho_builder(beta - dbeta), grid, check=False)
    q_hi = husimi_q(rho_builder(beta + dbeta), grid, check=False)
    bad = (q_lo <= floor) | (q_hi <= floor)
    safe_lo = np.where(bad, 1.0, q_lo)
    safe_hi = np.where(bad, 1.0, q_hi)
    vals = np.where(bad, 0.0, (np.log(safe_lo) - np.log(safe_hi)) / (2.0 * dbeta))
    return ScoreField(vals, bad)


def qfi_phase_space(rho_builder: RhoBuilder, beta: float, grid: PhaseGrid, eps_cut: float = 1e-6,
                    dbeta: float | None = None, **kernel_opts) -> float:
    """Score fluctuation under the phase-space metric."""
    kern = t_kernel(rho_builder(beta), grid, eps_cut, **kernel_opts)
    score = score_field(rho_builder, beta, grid, dbeta)
    return max(g_form(kern, kern.q, score.values, score.values), 0.0)


def sld_qfi(rho_builder: RhoBuilder, beta: float, dbeta: float | None = None, tau: float = 1e-12) -> float:
    """``sum 2 |<i|d rho|j>|^2 / (p_i + p_j)`` over ``p_i + p_j > tau``, with ``d = d/d(-beta)``."""
    dbeta = _default_dbeta(beta, dbeta)
    rho = check_density(rho_builder(beta))
    drho = (rho_builder(beta - dbeta) - rho_builder(beta + dbeta)) / (2.0 * dbeta)
    p, v = np.linalg.eigh(rho)
    d = v.conj().T @ drho @ v
    s = p[:, None] + p[None, :]
    ok = s > tau
    return float(np.sum(2.0 * np.abs(d[ok]) ** 2 / s[ok]))
