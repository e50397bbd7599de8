"""Dense linear algebra on truncated bosonic Fock spaces.

Operators and states are plain complex ``numpy`` arrays.  Constructors
validate their preconditions eagerly and raise with a suggested fix rather
than silently clipping a truncation.
"""

from __future__ import annotations

import math
from functools import reduce
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatchError,
    InvalidDimensionError,
    InvalidStateError,
    NonHermitianError,
    TruncationError,
)

TOL_STRUCT = 1e-10
TOL_UNITARY = 1e-9
TOL_QUADRATURE = 1e-6
THERMAL_TAIL = 1e-12


def _check_dim(dim: int) -> int:
    if int(dim) != dim or dim < 2:
        raise InvalidDimensionError(f"Fock dimension must be an integer >= 2, got {dim!r}")
    return int(dim)


def _check_square(op: np.ndarray) -> np.ndarray:
    op = np.asarray(op)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got shape {op.shape}")
    if not np.all(np.isfinite(op)):
        raise InvalidStateError("operator has non-finite entries")
    return op


def hermiticity_error(op: np.ndarray) -> float:
    op = np.asarray(op)
    return float(np.max(np.abs(op - op.conj().T)))


def check_hermitian(op: np.ndarray, tol: float = TOL_STRUCT) -> np.ndarray:
    op = _check_square(op)
    err = hermiticity_error(op)
    if err > tol:
        raise NonHermitianError(f"operator is not Hermitian: max|A - A^dag| = {err:.3e} > {tol:g}")
    return op


def check_density(rho: np.ndarray, tol: float = TOL_STRUCT) -> np.ndarray:
    """Validate Hermiticity, unit trace and positivity of ``rho``."""
    rho = check_hermitian(rho, tol)
    tr = np.trace(rho)
    if abs(tr - 1.0) > tol:
        raise InvalidStateError(f"trace {tr.real:.15g} differs from 1 by more than {tol:g}")
    lmin = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])
    if lmin < -tol:
        raise InvalidStateError(f"minimum eigenvalue {lmin:.3e} < -{tol:g}")
    return rho


def ladder(dim: int) -> np.ndarray:
    """Annihilation operator with ``a|n> = sqrt(n)|n-1>``."""
    dim = _check_dim(dim)
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(complex)


def number_op(dim: int) -> np.ndarray:
    dim = _check_dim(dim)
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def coherent_amplitudes(alphas, dim: int) -> np.ndarray:
    """Truncated, unnormalized coherent amplitudes as a ``(dim, len(alphas))`` array.

    Column ``j`` holds ``exp(-|a_j|^2/2) a_j^n / sqrt(n!)`` for ``n < dim``.  No
    truncation guard is applied: these are the measurement vectors whose
    integral over the plane is exactly the identity on the truncated space.
    """
    dim = _check_dim(dim)
    alphas = np.atleast_1d(np.asarray(alphas, dtype=complex))
    out = np.empty((dim, alphas.size), dtype=complex)
    out[0] = np.exp(-0.5 * np.abs(alphas) ** 2)
    for n in range(1, dim):
        out[n] = out[n - 1] * alphas / math.sqrt(n)
    return out


def coherent_vector(alpha: complex, dim: int, normalized: bool = True) -> np.ndarray:
    """Coherent state ``|alpha>`` on the first ``dim`` Fock levels.

    Requires ``|alpha|^2 <= dim/4``; with ``normalized=False`` the raw truncated
    amplitudes are returned (norm slightly below one).
    """
    dim = _check_dim(dim)
    if abs(alpha) ** 2 > dim / 4:
        need = int(math.ceil(4 * abs(alpha) ** 2))
        raise TruncationError(
            f"|alpha|^2 = {abs(alpha) ** 2:.4g} exceeds dim/4 = {dim / 4:g}; use dim >= {need}",
            suggested_dim=need,
        )
    vec = coherent_amplitudes([alpha], dim)[:, 0]
    if normalized:
        vec = vec / np.linalg.norm(vec)
    return vec


def thermal_dim(nbar: float, tail: float = THERMAL_TAIL) -> int:
    """Smallest dimension whose geometric tail beyond the truncation is below ``tail``."""
    if nbar <= 0:
        return 2
    ratio = nbar / (1.0 + nbar)
    return max(2, int(math.ceil(math.log(tail) / math.log(ratio))))


def thermal_state(nbar: float, dim: int, tail: float = THERMAL_TAIL) -> np.ndarray:
    """Diagonal thermal state ``p_n = nbar^n / (1 + nbar)^(n+1)``, renormalized."""
    dim = _check_dim(dim)
    if nbar < 0:
        raise InvalidStateError(f"mean occupation must be >= 0, got {nbar}")
    if nbar == 0:
        p = np.zeros(dim)
        p[0] = 1.0
        return np.diag(p).astype(complex)
    ratio = nbar / (1.0 + nbar)
    lost = ratio**dim
    if lost >= tail:
        need = thermal_dim(nbar, tail)
        raise TruncationError(
            f"thermal tail beyond dim={dim} is {lost:.3e} >= {tail:g}; use dim >= {need}",
            suggested_dim=need,
        )
    p = ratio ** np.arange(dim) / (1.0 + nbar)
    return np.diag(p / p.sum()).astype(complex)


def displacement(alpha: complex, dim: int) -> np.ndarray:
    """``exp(alpha a^dag - conj(alpha) a)`` via scaling-and-squaring Pade."""
    a = ladder(dim)
    gen = alpha * a.conj().T - np.conj(alpha) * a
    return scipy.linalg.expm(gen)


def fock_tail(rho: np.ndarray, dim: int) -> float:
    """Population of ``rho`` on Fock levels ``>= dim``."""
    diag = np.real(np.diag(rho))
    return float(max(diag[dim:].sum(), 0.0))


def displaced_thermal_dim(nbar: float, alpha: complex, tail: float = 1e-10) -> int:
    """Smallest dimension holding all but ``tail`` of ``D(a) rho_th D(a)^dag``."""
    big = _padded_dim(nbar, alpha, tail)
    rho = _displaced_thermal_raw(nbar, alpha, big)
    diag = np.clip(np.real(np.diag(rho)), 0.0, None)
    tails = np.cumsum(diag[::-1])[::-1]
    ok = np.nonzero(tails < tail)[0]
    return max(2, int(ok[0]) if ok.size else big)


def _padded_dim(nbar: float, alpha: complex, tail: float) -> int:
    r = abs(alpha) + math.sqrt((1.0 + nbar) * math.log(1.0 / tail))
    return max(int(math.ceil(r * r + 5.0 * r + 20.0)), thermal_dim(nbar) + 20)


def _displaced_thermal_raw(nbar, alpha, big):
    rho = thermal_state(nbar, big)
    if alpha == 0:
        return rho
    d = displacement(alpha, big)
    return d @ rho @ d.conj().T


def displaced_thermal(nbar: float, alpha: complex, dim: int | None = None, tail: float = 1e-10) -> np.ndarray:
    """Displaced thermal state on ``dim`` levels, built in a padded space.

    The population that falls outside ``dim`` must be below ``tail``; the
    truncated matrix is then renormalized to unit trace.  ``dim=None`` picks
    the smallest admissible dimension.
    """
    big = _padded_dim(nbar, alpha, tail)
    if dim is None:
        dim = displaced_thermal_dim(nbar, alpha, tail)
    dim = _check_dim(dim)
    big = max(big, dim + 20)
    rho = _displaced_thermal_raw(nbar, alpha, big)
    lost = fock_tail(rho, dim)
    if lost >= tail:
        need = displaced_thermal_dim(nbar, alpha, tail)
        raise TruncationError(
            f"displaced thermal population beyond dim={dim} is {lost:.3e} >= {tail:g}; use dim >= {need}",
            suggested_dim=need,
        )
    rho = rho[:dim, :dim]
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def tensor(*ops) -> np.ndarray:
    """Kronecker product of the given operators (or a single list of them)."""
    if len(ops) == 1 and not isinstance(ops[0], np.ndarray):
        ops = tuple(ops[0])
    if not ops:
        raise DimensionMismatchError("tensor() needs at least one operator")
    return reduce(np.kron, [np.asarray(o) for o in ops])


def partial_trace(op: np.ndarray, dims: Sequence[int], keep) -> np.ndarray:
    """Trace out every subsystem not listed in ``keep``."""
    op = _check_square(op)
    dims = [int(d) for d in dims]
    if int(np.prod(dims)) != op.shape[0]:
        raise DimensionMismatchError(f"dims {dims} do not multiply to {op.shape[0]}")
    keep = sorted({keep} if isinstance(keep, (int, np.integer)) else set(keep))
    if any(k < 0 or k >= len(dims) for k in keep):
        raise DimensionMismatchError(f"keep index out of range for {len(dims)} subsystems")
    n = len(dims)
    t = op.reshape(dims + dims)
    # trace from the highest index so remaining axis numbers stay valid
    for idx in reversed(range(n)):
        if idx in keep:
            continue
        m = t.ndim // 2
        t = np.trace(t, axis1=idx, axis2=idx + m)
    kd = int(np.prod([dims[k] for k in keep]))
    return t.reshape(kd, kd)


def eig_hermitian(op: np.ndarray, tol: float = TOL_STRUCT):
    """Ascending eigenvalues and orthonormal eigenvectors (columns)."""
    op = check_hermitian(op, tol)
    w, v = np.linalg.eigh(0.5 * (op + op.conj().T))
    return w, v


def propagator(h: np.ndarray, t: float) -> np.ndarray:
    """``exp(-i H t)`` for Hermitian ``H`` via its eigendecomposition."""
    w, v = eig_hermitian(h)
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def evolve(h: np.ndarray, t: float, rho: np.ndarray) -> np.ndarray:
    rho = _check_square(rho)
    if rho.shape != np.shape(h):
        raise DimensionMismatchError(f"H {np.shape(h)} and rho {rho.shape} differ in shape")
    if t == 0:
        return rho.copy()
    u = propagator(h, t)
    out = u @ rho @ u.conj().T
    return 0.5 * (out + out.conj().T)


def unitarity_error(u: np.ndarray) -> float:
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))


def expect(op: np.ndarray, rho: np.ndarray) -> complex:
    return complex(np.trace(op @ rho))
