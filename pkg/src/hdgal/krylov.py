"""Sparse kernels, restarted (F)GMRES and direct factorizations.

Sparse storage is scipy's CSR. The Krylov solvers are implemented here
with right preconditioning, so the Arnoldi residual estimate is the
unpreconditioned residual and the stopping test is
``||b - A x|| <= max(rtol ||b||, atol)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

BREAKDOWN_TOL = 1e-14

SparseMatrix = sp.csr_matrix


class SingularMatrixError(ArithmeticError):
    pass


class KrylovBreakdown(ArithmeticError):
    def __init__(self, msg, stats=None):
        super().__init__(msg)
        self.stats = stats


def as_csr(A) -> sp.csr_matrix:
    """Canonical CSR copy: sorted column indices, duplicates summed."""
    M = sp.csr_matrix(A, copy=True)
    M.sum_duplicates()
    M.sort_indices()
    return M


def spmv(A, x) -> np.ndarray:
    x = np.asarray(x)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix has {A.shape[1]} columns, vector has {x.shape[0]}")
    return A @ x


@dataclass(frozen=True)
class KrylovConfig:
    rtol: float = 1e-4
    atol: float = 1e-9
    restart: int = 300
    maxiter: int = 1000
    min_iterations: int = 0

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")
        if self.restart < 1 or self.maxiter < 1:
            raise ValueError("restart and maxiter must be >= 1")


@dataclass
class SolveStats:
    iterations: int = 0
    residual_norm: float = float("nan")
    converged: bool = False
    breakdown: bool = False
    history: list = field(default_factory=list)


def _as_operator(A) -> Callable[[np.ndarray], np.ndarray]:
    if A is None:
        return lambda v: v
    if callable(A) and not hasattr(A, "shape"):
        return A
    if hasattr(A, "apply"):
        return A.apply
    if hasattr(A, "solve"):
        return A.solve
    return lambda v: A @ v


def _krylov(A, b, M, cfg: KrylovConfig, x0, flexible: bool, callback=None):
    op, prec = _as_operator(A), _as_operator(M)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    stats = SolveStats()
    bnorm = np.linalg.norm(b)
    target = max(cfg.rtol * bnorm, cfg.atol)
    m = cfg.restart
    r = b - op(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    stats.history.append(beta)
    stats.residual_norm = beta
    if beta <= target and cfg.min_iterations == 0:
        stats.converged = True
        return x, stats
    if beta == 0.0:
        stats.converged = True
        return x, stats
    V = np.empty((m + 1, n))
    Z = np.empty((m, n)) if flexible else None
    H = np.zeros((m + 1, m))
    cs, sn = np.zeros(m), np.zeros(m)
    while stats.iterations < cfg.maxiter:
        V[0] = r / beta
        g = np.zeros(m + 1)
        g[0] = beta
        j_done = 0
        broke = False
        for j in range(m):
            z = prec(V[j])
            if flexible:
                Z[j] = z
            w = op(z)
            wnorm = np.linalg.norm(w)
            # classical Gram-Schmidt, applied twice
            h = V[: j + 1] @ w
            w = w - V[: j + 1].T @ h
            h2 = V[: j + 1] @ w
            w = w - V[: j + 1].T @ h2
            h += h2
            hn = np.linalg.norm(w)
            H[: j + 1, j] = h
            H[j + 1, j] = hn
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            rho = np.hypot(H[j, j], H[j + 1, j])
            if rho == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = H[j, j] / rho, H[j + 1, j] / rho
            H[j, j] = rho
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            stats.iterations += 1
            j_done = j + 1
            res = abs(g[j + 1])
            stats.history.append(res)
            if callback is not None:
                callback(res)
            if hn <= BREAKDOWN_TOL * max(wnorm, 1e-300):
                broke = True
                break
            if (res <= target and stats.iterations >= cfg.min_iterations) or stats.iterations >= cfg.maxiter:
                break
            V[j + 1] = w / hn
        if H[j_done - 1, j_done - 1] == 0.0:
            raise KrylovBreakdown("singular Hessenberg matrix in GMRES", stats)
        y = _upper_solve(H[:j_done, :j_done], g[:j_done])
        if flexible:
            x = x + Z[:j_done].T @ y
        else:
            x = x + prec(V[:j_done].T @ y)
        r = b - op(x)
        beta = np.linalg.norm(r)
        stats.residual_norm = beta
        if beta <= target:
            stats.converged = True
            stats.breakdown = broke
            return x, stats
        if broke:
            stats.breakdown = True
            # the Krylov space is invariant; restarting cannot help when the
            # true residual agrees with the estimate
            if abs(g[j_done]) > target:
                raise KrylovBreakdown(
                    f"Arnoldi breakdown with residual {beta:.3e} > target {target:.3e}", stats)
    log.debug("GMRES hit maxiter=%d with residual %.3e", cfg.maxiter, stats.residual_norm)
    return x, stats


def _upper_solve(R, g):
    n = len(g)
    y = np.zeros(n)
    for i in range(n - 1, -1, -1):
        y[i] = (g[i] - R[i, i + 1 :] @ y[i + 1 :]) / R[i, i]
    return y


def gmres(A, b, M=None, cfg: KrylovConfig | None = None, x0=None, callback=None):
    """Restarted GMRES with a fixed right preconditioner ``M`` (action z = M r)."""
    return _krylov(A, b, M, cfg or KrylovConfig(), x0, False, callback)


def fgmres(A, b, M=None, cfg: KrylovConfig | None = None, x0=None, callback=None):
    """Flexible GMRES: ``M`` may change between iterations."""
    return _krylov(A, b, M, cfg or KrylovConfig(), x0, True, callback)


class LUFactorization:
    """Sparse LU with COLAMD column ordering and threshold partial pivoting
    (SuperLU). ``Pr A Pc = L U``."""

    def __init__(self, A, permc_spec: str = "COLAMD"):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError("sparse_lu needs a square matrix")
        try:
            self._lu = spla.splu(A, permc_spec=permc_spec, diag_pivot_thresh=1.0)
        except RuntimeError as exc:
            raise SingularMatrixError(str(exc)) from exc
        U = self._lu.U
        d = np.abs(U.diagonal())
        if d.size and (d.min() == 0.0 or not np.all(np.isfinite(d))):
            raise SingularMatrixError("zero pivot after pivoting")
        self.shape = A.shape

    @property
    def factors(self):
        lu = self._lu
        return lu.perm_r, lu.perm_c, lu.L, lu.U

    def solve(self, b):
        return self._lu.solve(np.asarray(b, dtype=float))

    __call__ = solve


def sparse_lu(A, permc_spec: str = "COLAMD") -> LUFactorization:
    return LUFactorization(A, permc_spec)


def lu_solve(fact: LUFactorization, b) -> np.ndarray:
    return fact.solve(b)


class ILUFactorization:
    """Incomplete LU (SuperLU ILUTP) used to emulate an inexact inner solver."""

    def __init__(self, A, drop_tol: float = 1e-4, fill_factor: float = 10.0):
        try:
            self._ilu = spla.spilu(sp.csc_matrix(A), drop_tol=drop_tol, fill_factor=fill_factor)
        except RuntimeError as exc:
            raise SingularMatrixError(str(exc)) from exc
        self.shape = A.shape

    def solve(self, b):
        return self._ilu.solve(np.asarray(b, dtype=float))

    __call__ = solve


def jacobi_preconditioner(A) -> Callable[[np.ndarray], np.ndarray]:
    d = np.asarray(sp.csr_matrix(A).diagonal(), dtype=float)
    bad = np.flatnonzero(d == 0.0)
    if bad.size:
        raise ZeroDivisionError(f"zero diagonal entry in row {bad[0]}")
    inv = 1.0 / d
    return lambda r: inv * r
