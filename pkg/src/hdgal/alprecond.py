"""Block lower-triangular preconditioners for the condensed system.

For the condensed matrix ``[[Fbar, Bbar_up], [Bbar_pu, S_pp]]`` the
action is

    z_ubar = Fbar^{-1} r_ubar
    z_pbar = Shat^{-1} (r_pbar - Bbar_pu z_ubar)

with ``Shat = -M/gamma`` (variant ``"GM"``) or ``Shat = -M/gamma + S_pp``
(variant ``"G"``), where ``S_pp = -B_pbar,u P (F_uu + gamma G_uu)^{-1}
B_pbar,u^T`` is the condensed trace-pressure block. Both inner solves are
Krylov iterations, so the outer method must be FGMRES.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .condense import CondensedSystem, DENSE_LIMIT
from .krylov import (
    ILUFactorization,
    KrylovConfig,
    SolveStats,
    fgmres,
    gmres,
    jacobi_preconditioner,
    sparse_lu,
)

log = logging.getLogger(__name__)

INNER = KrylovConfig(rtol=1e-2, atol=1e-8, restart=300, maxiter=300, min_iterations=1)
VARIANTS = ("G", "GM")


class InnerSolveWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class PreconditionerSpec:
    variant: str = "GM"
    velocity_cfg: KrylovConfig = INNER
    schur_cfg: KrylovConfig = INNER
    velocity_factor: str = "lu"  # "lu" or "ilu"
    ilu_drop_tol: float = 1e-4
    ilu_fill_factor: float = 10.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"precond variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.velocity_factor not in ("lu", "ilu"):
            raise ValueError(f"unknown velocity factorization {self.velocity_factor!r}")


def schur_approximation(cond: CondensedSystem, variant: str) -> sp.csr_matrix:
    if cond.gamma <= 0:
        raise ValueError("augmented-Lagrangian Schur approximation needs gamma > 0")
    S = -cond.Mbar / cond.gamma
    if variant == "G":
        S = S + cond.S_pp
    return sp.csr_matrix(S)


@dataclass
class ALPreconditioner:
    cond: CondensedSystem
    spec: PreconditionerSpec = field(default_factory=PreconditionerSpec)

    def __post_init__(self):
        c, s = self.cond, self.spec
        if s.velocity_factor == "lu":
            self.F_fact = sparse_lu(c.Fbar)
        else:
            self.F_fact = ILUFactorization(c.Fbar, s.ilu_drop_tol, s.ilu_fill_factor)
        self.S_hat = schur_approximation(c, s.variant)
        self.S_jac = jacobi_preconditioner(self.S_hat)
        self.n_u = c.n_ubar
        self.max_velocity_iters = 0
        self.max_schur_iters = 0
        self.applications = 0
        self.inner_failures = 0

    def _record(self, st: SolveStats, which: str):
        if which == "velocity":
            self.max_velocity_iters = max(self.max_velocity_iters, st.iterations)
        else:
            self.max_schur_iters = max(self.max_schur_iters, st.iterations)
        if not st.converged:
            self.inner_failures += 1
            warnings.warn(f"{which} inner solve stopped at {st.iterations} iterations, "
                          f"residual {st.residual_norm:.3e}", InnerSolveWarning, stacklevel=3)

    def apply(self, r: np.ndarray) -> np.ndarray:
        n = self.n_u
        r_u, r_p = r[:n], r[n:]
        z_u, st = gmres(self.cond.Fbar, r_u, self.F_fact, self.spec.velocity_cfg)
        self._record(st, "velocity")
        z_p, st = fgmres(self.S_hat, r_p - self.cond.B_pbub @ z_u, self.S_jac, self.spec.schur_cfg)
        self._record(st, "schur")
        self.applications += 1
        return np.concatenate([z_u, z_p])

    __call__ = apply

    def exact_apply(self, r: np.ndarray) -> np.ndarray:
        """Same factorization with direct solves (no inner Krylov)."""
        n = self.n_u
        z_u = self.F_fact.solve(r[:n])
        z_p = spla.spsolve(sp.csc_matrix(self.S_hat), r[n:] - self.cond.B_pbub @ z_u)
        return np.concatenate([z_u, z_p])


def exact_schur_preconditioner(cond: CondensedSystem):
    """Lower-triangular preconditioner with the true Schur complement (dense)."""
    n = cond.n_ubar
    K = cond.matrix.toarray()
    if K.shape[0] > DENSE_LIMIT:
        raise ValueError(f"dense Schur limited to {DENSE_LIMIT} dofs")
    F = K[:n, :n]
    S = K[n:, n:] - K[n:, :n] @ np.linalg.solve(F, K[:n, n:])

    def apply(r):
        z_u = np.linalg.solve(F, r[:n])
        z_p = np.linalg.lstsq(S, r[n:] - K[n:, :n] @ z_u, rcond=None)[0]
        return np.concatenate([z_u, z_p])

    return apply


# Schur quality ----------------------------------------------------------------------------

def true_trace_schur(cond: CondensedSystem) -> np.ndarray:
    """Dense pbar Schur complement of the condensed system."""
    n = cond.n_ubar
    K = cond.matrix.toarray()
    if K.shape[0] > DENSE_LIMIT:
        raise ValueError(f"dense Schur limited to {DENSE_LIMIT} dofs, got {K.shape[0]}")
    return K[n:, n:] - K[n:, :n] @ np.linalg.solve(K[:n, :n], K[:n, n:])


def constant_pbar_mode(cond: CondensedSystem) -> np.ndarray:
    """Coefficient vector of pbar = 1 (orthonormal Legendre: first mode only)."""
    nf, nfk = cond.disc.mesh.nfaces, cond.disc.nfk
    c = np.zeros((nf, nfk))
    c[:, 0] = 1.0
    return c.ravel()


def schur_mass_quality(build, gammas=(1e2, 1e3, 1e4, 1e5), deflate: bool | None = None) -> dict:
    """Compare the true trace-pressure Schur complement with -M/gamma.

    ``build(gamma)`` returns a :class:`CondensedSystem`. For enclosed flows
    the Schur complement is singular along the constant pressure mode;
    with ``deflate`` (auto-detected when None) norms and eigenvalues are
    taken on the M-orthogonal complement of that mode.
    """
    rows = []
    for g in gammas:
        if g <= 0:
            rows.append({"gamma": g, "applicable": False})
            continue
        cond = build(g)
        S = true_trace_schur(cond)
        M = cond.Mbar.toarray()
        c = constant_pbar_mode(cond)
        defl = deflate
        if defl is None:
            defl = np.linalg.norm(S @ c) <= 1e-8 * np.linalg.norm(S) * np.linalg.norm(c)
        if defl:
            # orthonormal basis of the complement of c
            Q, _ = np.linalg.qr(np.column_stack([c, np.eye(len(c))]))
            W = Q[:, 1 : len(c)]
        else:
            W = np.eye(len(c))
        Sw = W.T @ S @ W
        Mw = W.T @ M @ W / g
        gap = np.linalg.norm(Sw + Mw, 2) / np.linalg.norm(Mw, 2)
        ev = np.linalg.eigvals(np.linalg.solve(Mw, -Sw))
        rows.append({
            "gamma": g,
            "applicable": True,
            "deflated": bool(defl),
            "relative_gap": float(gap),
            "eig_min": float(ev.real.min()),
            "eig_max": float(ev.real.max()),
            "eig_imag_max": float(np.abs(ev.imag).max()),
        })
    return {"rows": rows}
