"""Static condensation of the cell unknowns (u, p).

Each cell's saddle block ``E_II = [[F_uu + gamma G_uu, B_pu^T], [B_pu, 0]]``
is factorized densely (LAPACK LU with partial pivoting, batched over
cells) and eliminated, leaving a global system in ``(ubar, pbar)``.
Condensed indices are global indices minus ``layout.ubar_offset``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .assembly import BlockSystem, Discretization, apply_dirichlet, assemble_dh

DENSE_LIMIT = 2000
SINGULAR_PIVOT = 1e-13  # pivot relative to the largest entry of its column


class SingularCellError(np.linalg.LinAlgError):
    def __init__(self, cell: int):
        super().__init__(f"singular local saddle block in cell {cell}")
        self.cell = cell


@dataclass
class LocalCellFactorization:
    """Per-cell LU factors of E_II and the cell-to-face coupling."""

    lu: np.ndarray = field(repr=False)
    piv: np.ndarray = field(repr=False)
    E_IT: np.ndarray = field(repr=False)
    E_TI: np.ndarray = field(repr=False)
    X: np.ndarray = field(repr=False)  # E_II^{-1} E_IT

    def solve(self, r_I: np.ndarray) -> np.ndarray:
        """Apply E_II^{-1} cellwise to ``r_I`` of shape (nc, nI)."""
        return np.stack([sla.lu_solve((self.lu[c], self.piv[c]), r_I[c]) for c in range(len(r_I))])


def factorize_cells(E_II: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    C, n, _ = E_II.shape
    lu = np.empty_like(E_II)
    piv = np.empty((C, n), dtype=np.int32)
    for c in range(C):
        # lu_factor only warns on exact singularity; check the pivots ourselves,
        # each against its own column (the penalty spreads pivots by ~gamma^2)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            f, p = sla.lu_factor(E_II[c], check_finite=False)
        d = np.abs(np.diag(f))
        cn = np.abs(E_II[c]).max(axis=0)
        if not np.all(np.isfinite(d)) or np.any(d <= SINGULAR_PIVOT * cn) or not cn.all():
            raise SingularCellError(c)
        lu[c], piv[c] = f, p
    return lu, piv


@dataclass
class CondensedSystem:
    """Face-only system ``[[Fbar, Bbar_ubpb], [Bbar_pbub, S_pp]]``.

    ``matrix`` and ``rhs`` have Dirichlet trace rows replaced by identity;
    ``raw`` keeps the unconstrained condensed matrix.
    """

    disc: Discretization
    gamma: float
    raw: sp.csr_matrix = field(repr=False)
    matrix: sp.csr_matrix = field(repr=False)
    rhs: np.ndarray = field(repr=False)
    factors: LocalCellFactorization = field(repr=False)
    y: np.ndarray = field(repr=False)  # E_II^{-1} b_I per cell
    dirichlet: np.ndarray = field(repr=False)

    @property
    def n_ubar(self) -> int:
        return self.disc.layout.n_ubar

    def _blk(self, M, r, c):
        n = self.n_ubar
        s = {"u": slice(0, n), "p": slice(n, M.shape[0])}
        return sp.csr_matrix(M[s[r], :][:, s[c]])

    @cached_property
    def Fbar(self):
        return self._blk(self.matrix, "u", "u")

    @cached_property
    def B_ubpb(self):
        return self._blk(self.matrix, "u", "p")

    @cached_property
    def B_pbub(self):
        return self._blk(self.matrix, "p", "u")

    @cached_property
    def S_pp(self):
        return self._blk(self.matrix, "p", "p")

    @cached_property
    def Mbar(self):
        from .assembly import assemble_trace_mass

        return assemble_trace_mass(self.disc)

    def back_substitute(self, x_T: np.ndarray) -> np.ndarray:
        """Recover the full state from condensed traces ``x_T``."""
        d = self.disc
        nI = d.n_interior
        tmap = d.gmap[:, nI:] - d.layout.ubar_offset
        xt_loc = x_T[tmap]
        x_I = self.y - np.einsum("cij,cj->ci", self.factors.X, xt_loc)
        x = np.empty(d.layout.total_dofs)
        x[d.gmap[:, :nI]] = x_I
        x[d.layout.ubar_offset :] = x_T
        return x


def condense(system: BlockSystem, b: np.ndarray | None = None,
             dirichlet_values: np.ndarray | float = 0.0) -> CondensedSystem:
    """Condense ``K x = b`` where ``K = system.matrix`` (unconstrained).

    ``b`` defaults to ``system.rhs``; the Dirichlet trace dofs are set to
    ``dirichlet_values``.
    """
    d = system.disc
    L = d.layout
    b = system.rhs if b is None else np.asarray(b, dtype=float)
    E = system.element_matrices()
    nI = d.n_interior
    E_II, E_IT = E[:, :nI, :nI], E[:, :nI, nI:]
    E_TI, E_TT = E[:, nI:, :nI], E[:, nI:, nI:]
    lu, piv = factorize_cells(E_II)
    rhs_mat = np.concatenate([E_IT, b[d.gmap[:, :nI]][:, :, None]], axis=2)
    sol = np.stack([sla.lu_solve((lu[c], piv[c]), rhs_mat[c], check_finite=False) for c in range(len(E))])
    X, y = sol[:, :, :-1], sol[:, :, -1]
    S_loc = E_TT - np.einsum("cij,cjk->cik", E_TI, X)
    tmap = d.gmap[:, nI:] - L.ubar_offset
    n = L.condensed_dofs
    raw = d.scatter(S_loc, tmap, tmap, shape=(n, n))
    r = b[L.ubar_offset :].copy()
    np.add.at(r, tmap.ravel(), -np.einsum("cij,cj->ci", E_TI, y).ravel())
    D = L.dirichlet - L.ubar_offset
    K, rhs = apply_dirichlet(raw, r, D, dirichlet_values)
    fac = LocalCellFactorization(lu, piv, E_IT, E_TI, X)
    return CondensedSystem(d, system.gamma, raw, K, rhs, fac, y, D)


# dense references ------------------------------------------------------------------------

def dense_schur(K: np.ndarray, eliminate: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """``K_kk - K_ke K_ee^{-1} K_ek`` by dense solve."""
    Kee = K[np.ix_(eliminate, eliminate)]
    return K[np.ix_(keep, keep)] - K[np.ix_(keep, eliminate)] @ np.linalg.solve(Kee, K[np.ix_(eliminate, keep)])


def local_projector(F: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``P = I - F^{-1} B^T (B F^{-1} B^T)^{-1} B`` for one cell."""
    FiBt = np.linalg.solve(F, B.T)
    return np.eye(F.shape[0]) - FiBt @ np.linalg.solve(B @ FiBt, B)


def constrained_dense(K: sp.spmatrix, b: np.ndarray, dirichlet: np.ndarray, values=0.0):
    if K.shape[0] > DENSE_LIMIT:
        raise ValueError(f"dense reference limited to {DENSE_LIMIT} dofs, got {K.shape[0]}")
    Kc, bc = apply_dirichlet(K, b, dirichlet, values)
    return Kc.toarray(), bc


def condense_dh_reference(system: BlockSystem, gamma_d: float | None = None) -> dict[str, np.ndarray]:
    """Dense condensed operators of the d_h-augmented system.

    The viscous block is ``mu A + N + gamma_d D_uu`` (``system.gamma`` is
    ignored for the velocity-cell block; only the d_h term augments).
    Returns the full condensed matrix and its four blocks.
    """
    d = system.disc
    L = d.layout
    if L.total_dofs > DENSE_LIMIT:
        raise ValueError(f"dense reference limited to {DENSE_LIMIT} dofs, got {L.total_dofs}")
    gd = system.gamma if gamma_d is None else gamma_d
    base = BlockSystem(d, system.mu, 0.0, system.mode, system.state, system.A_loc, system.G_loc,
                       system.B_loc, system.N_loc, system.F_loc)
    K = base.matrix.toarray()
    K[: L.n_u, : L.n_u] += gd * assemble_dh(d).toarray()
    K, _ = constrained_dense(sp.csr_matrix(K), np.zeros(L.total_dofs), L.dirichlet)
    interior = np.arange(L.ubar_offset)
    trace = np.arange(L.ubar_offset, L.total_dofs)
    S = dense_schur(K, interior, trace)
    n = L.n_ubar
    return {"matrix": S, "Fbar": S[:n, :n], "B_ubpb": S[:n, n:], "B_pbub": S[n:, :n], "S_pp": S[n:, n:]}


def condensed_dense(system: BlockSystem) -> np.ndarray:
    """Dense condensed matrix of the g_h-augmented system with Dirichlet
    rows constrained, by brute-force elimination."""
    d = system.disc
    L = d.layout
    K, _ = constrained_dense(system.matrix, np.zeros(L.total_dofs), L.dirichlet)
    return dense_schur(K, np.arange(L.ubar_offset), np.arange(L.ubar_offset, L.total_dofs))
