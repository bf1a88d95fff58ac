"""Element and global assembly of the HDG forms.

Every cell carries a local velocity vector ordered ``[u_K | ubar on its
3 faces]`` and a local pressure vector ``[p_K | pbar on its 3 faces]``.
Element matrices are computed for all cells at once (leading axis = cell)
and scattered into global sparse matrices in the full numbering of
:class:`~hdgal.femspace.SpaceLayout`.

The pressure-trace coupling is assembled in the cell-boundary form
``sum_K <qbar, (v - vbar).n>_{dK}``. On interior faces the ``vbar`` part
cancels between the two cells, so it is only kept on boundary faces,
where it carries Dirichlet data into the constraint rows and couples
``pbar`` to ``ubar`` on outflow faces.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .femspace import (
    SpaceLayout,
    build_layout,
    eval_basis,
    eval_face_basis,
    pdim,
    quadrature,
    reference_edge_points,
)
from .mesh import Mesh

Forcing = Callable[[np.ndarray], np.ndarray]
BoundaryData = Callable[[np.ndarray, str], np.ndarray]


class Discretization:
    """Reference data, geometry and dof maps for one mesh and degree."""

    def __init__(self, mesh: Mesh, k: int, alpha: float | None = None,
                 volume_exactness: int | None = None, face_exactness: int | None = None,
                 forcing_exactness: int | None = None, outflow: str = "directional"):
        if outflow not in ("directional", "plain"):
            raise ValueError(f"unknown outflow treatment {outflow!r}")
        self.outflow = outflow
        self.mesh = mesh
        self.layout = build_layout(mesh, k)
        self.k = k = self.layout.k
        self.alpha = 10.0 * k * k if alpha is None else float(alpha)
        if self.alpha <= 0:
            raise ValueError("penalty alpha must be positive")
        self.nk, self.npk, self.nfk = pdim(k), pdim(k - 1), k + 1
        self.nuK, self.nuT = 2 * self.nk, 6 * self.nfk
        self.npT = 3 * self.nfk
        self.nv = self.nuK + self.nuT
        self.npl = self.npk + self.npT
        self.vol_rule = quadrature("triangle", volume_exactness or 3 * k + 2)
        self.face_rule = quadrature("edge", face_exactness or 3 * k + 2)
        self.forcing_rule = quadrature("triangle", forcing_exactness or 2 * k + 6)
        self._reference()
        self._geometry()

    # reference element ---------------------------------------------------------
    def _reference(self) -> None:
        k = self.k
        self.phi_v, self.dphi_v_ref = eval_basis(k, self.vol_rule.points)
        s = self.face_rule.points
        self.psi = eval_face_basis(k, s)
        phi_f = np.empty((3, 2, self.nk, len(s)))
        dphi_f = np.empty((3, 2, self.nk, len(s), 2))
        for e in range(3):
            for o, t in enumerate((s, 1.0 - s)):
                phi_f[e, o], dphi_f[e, o] = eval_basis(k, reference_edge_points(e, t))
        self.phi_f_ref, self.dphi_f_ref = phi_f, dphi_f
        # trace velocity dof values on each local face: T[e_eval, a, q, comp]
        T = np.zeros((3, self.nuT, len(s), 2))
        for e in range(3):
            for d in range(2):
                a0 = e * 2 * self.nfk + d * self.nfk
                T[e, a0 : a0 + self.nfk, :, d] = self.psi
        self.T = T

    def _geometry(self) -> None:
        m = self.mesh
        X = m.vertices[m.cells]
        J = np.stack([X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]], axis=2)
        self.X0 = X[:, 0]
        self.J = J
        self.detJ = np.linalg.det(J)
        self.invJT = np.linalg.inv(J).transpose(0, 2, 1)
        self.hK = m.cell_diameters
        self.dphi_v = np.einsum("cab,iqb->ciqa", self.invJT, self.dphi_v_ref)
        self.wv = self.vol_rule.weights[None, :] * self.detJ[:, None]
        self.xv = self.X0[:, None, :] + np.einsum("cab,qb->cqa", J, self.vol_rule.points)
        orient = (m.cell_face_signs < 0).astype(np.int64)
        e_idx = np.broadcast_to(np.arange(3), orient.shape)
        self.phi_f = self.phi_f_ref[e_idx, orient]
        dref = self.dphi_f_ref[e_idx, orient]
        self.dphi_f = np.einsum("cab,ceiqb->ceiqa", self.invJT, dref)
        self.normals = m.cell_outward_normals()
        self.flen = m.face_lengths[m.cell_faces]
        self.wf = self.face_rule.weights[None, None, :] * self.flen[..., None]
        fv = m.vertices[m.face_vertices]
        s = self.face_rule.points
        self.face_points = fv[:, 0, None, :] + s[None, :, None] * (fv[:, 1] - fv[:, 0])[:, None, :]
        tags = np.array([t or "" for t in m.face_tags])
        ft = tags[m.cell_faces]
        self.bmask = (m.face_cells[m.cell_faces, 1] < 0).astype(float)
        self.omask = (ft == "outflow").astype(float)
        if self.outflow == "plain":
            self.omask[:] = 0.0

        nk, nfk = self.nk, self.nfk
        Qf = len(s)
        C = m.ncells
        # cell velocity dof values at face points: Phi[c, e, a, q, comp]
        Phi = np.zeros((C, 3, self.nuK, Qf, 2))
        for d in range(2):
            Phi[:, :, d * nk : (d + 1) * nk, :, d] = self.phi_f
        self.Phi = Phi
        Tb = np.broadcast_to(self.T[None], (C,) + self.T.shape)
        self.jump = np.concatenate([Phi, -Tb], axis=2)
        self.plus = np.concatenate([Phi, Tb], axis=2)
        self.jn = np.einsum("ceaqx,cex->ceaq", self.jump, self.normals)
        # symmetric gradient times normal for cell dofs at face points
        gn = np.einsum("ceiqx,cex->ceiq", self.dphi_f, self.normals)
        EpsN = np.zeros((C, 3, self.nuK, Qf, 2))
        for d in range(2):
            blk = slice(d * nk, (d + 1) * nk)
            EpsN[:, :, blk, :, d] += 0.5 * gn
            EpsN[:, :, blk, :, :] += 0.5 * self.normals[:, :, None, None, d, None] * self.dphi_f
        self.EpsN = EpsN
        Qv = len(self.vol_rule)
        Eps = np.zeros((C, self.nuK, Qv, 2, 2))
        for d in range(2):
            blk = slice(d * nk, (d + 1) * nk)
            Eps[:, blk, :, d, :] += 0.5 * self.dphi_v
            Eps[:, blk, :, :, d] += 0.5 * self.dphi_v
        self.Eps = Eps

    # dof maps -----------------------------------------------------------------
    @cached_property
    def vmap(self) -> np.ndarray:
        L, m = self.layout, self.mesh
        cells = np.arange(m.ncells)[:, None] * self.nuK + np.arange(self.nuK)[None, :]
        faces = L.ubar_offset + m.cell_faces[:, :, None] * 2 * self.nfk + np.arange(2 * self.nfk)
        return np.concatenate([cells, faces.reshape(m.ncells, -1)], axis=1)

    @cached_property
    def pmap(self) -> np.ndarray:
        L, m = self.layout, self.mesh
        cells = L.p_offset + np.arange(m.ncells)[:, None] * self.npk + np.arange(self.npk)[None, :]
        faces = L.pbar_offset + m.cell_faces[:, :, None] * self.nfk + np.arange(self.nfk)
        return np.concatenate([cells, faces.reshape(m.ncells, -1)], axis=1)

    @cached_property
    def local_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Positions of local velocity and pressure dofs in the combined
        element ordering ``[u_K | p_K | ubar | pbar]``."""
        nuK, npk, nuT = self.nuK, self.npk, self.nuT
        v = np.concatenate([np.arange(nuK), nuK + npk + np.arange(nuT)])
        p = np.concatenate([nuK + np.arange(npk), nuK + npk + nuT + np.arange(self.npT)])
        return v, p

    @cached_property
    def gmap(self) -> np.ndarray:
        """Global dofs of the combined element ordering, shape (nc, nl)."""
        v, p = self.local_index
        out = np.empty((self.mesh.ncells, self.nv + self.npl), dtype=np.int64)
        out[:, v] = self.vmap
        out[:, p] = self.pmap
        return out

    @cached_property
    def face_sides(self) -> np.ndarray:
        """``(nfaces, 2, 2)`` of (cell, local face) per side; -1 if absent.
        Side 0 is the cell whose orientation matches the face."""
        m = self.mesh
        side = np.full((m.nfaces, 2, 2), -1, dtype=np.int64)
        c, e = np.nonzero(np.ones(m.cell_faces.shape, dtype=bool))
        slot = (m.cell_face_signs[c, e] < 0).astype(np.int64)
        side[m.cell_faces[c, e], slot, 0] = c
        side[m.cell_faces[c, e], slot, 1] = e
        return side

    @property
    def n_interior(self) -> int:
        return self.nuK + self.npk

    # evaluation helpers -------------------------------------------------------------
    def cell_velocity(self, x: np.ndarray) -> np.ndarray:
        """Cell velocity coefficients ``(nc, 2, nk)``."""
        return x[: self.layout.n_u].reshape(self.mesh.ncells, 2, self.nk)

    def trace_velocity(self, x: np.ndarray) -> np.ndarray:
        L = self.layout
        return x[L.ubar_offset : L.pbar_offset].reshape(self.mesh.nfaces, 2, self.nfk)

    def velocity_at_volume_points(self, x):
        return np.einsum("cdi,iq->cqd", self.cell_velocity(x), self.phi_v)

    def velocity_at_face_points(self, x):
        """Cell-side velocity on each local face, ``(nc, 3, Qf, 2)``."""
        return np.einsum("cdi,ceiq->ceqd", self.cell_velocity(x), self.phi_f)

    def trace_at_face_points(self, x):
        """Trace velocity on each local face, ``(nc, 3, Qf, 2)``."""
        ub = self.trace_velocity(x)[self.mesh.cell_faces]
        return np.einsum("cedj,jq->ceqd", ub, self.psi)

    # scatter -------------------------------------------------------------------------
    def scatter(self, loc: np.ndarray, rows: np.ndarray, cols: np.ndarray, shape=None) -> sp.csr_matrix:
        n = self.layout.total_dofs
        shape = shape or (n, n)
        R = np.broadcast_to(rows[:, :, None], loc.shape)
        Cc = np.broadcast_to(cols[:, None, :], loc.shape)
        M = sp.coo_matrix((loc.ravel(), (R.ravel(), Cc.ravel())), shape=shape).tocsr()
        M.sum_duplicates()
        M.sort_indices()
        return M

    def scatter_vector(self, loc: np.ndarray, rows: np.ndarray) -> np.ndarray:
        out = np.zeros(self.layout.total_dofs)
        np.add.at(out, rows.ravel(), loc.ravel())
        return out

    def velocity_matrix(self, loc: np.ndarray) -> sp.csr_matrix:
        return self.scatter(loc, self.vmap, self.vmap)

    def combine(self, vv: np.ndarray, pv: np.ndarray) -> np.ndarray:
        """Element saddle matrix ``[[vv, pv^T], [pv, 0]]`` in combined ordering."""
        v, p = self.local_index
        C = vv.shape[0]
        nl = self.nv + self.npl
        E = np.zeros((C, nl, nl))
        E[:, v[:, None], v[None, :]] = vv
        E[:, p[:, None], v[None, :]] = pv
        E[:, v[:, None], p[None, :]] = pv.transpose(0, 2, 1)
        return E

    # element forms ------------------------------------------------------------------
    def viscous_local(self) -> np.ndarray:
        """a_h element matrices ``(nc, nv, nv)``."""
        nuK = self.nuK
        A = np.zeros((self.mesh.ncells, self.nv, self.nv))
        A[:, :nuK, :nuK] = 2.0 * np.einsum("caqxy,cbqxy,cq->cab", self.Eps, self.Eps, self.wv)
        wpen = self.wf * (2.0 * self.alpha / self.hK)[:, None, None]
        A += np.einsum("ceaqx,cebqx,ceq->cab", self.jump, self.jump, wpen)
        cons = -2.0 * np.einsum("ceaqx,cebqx,ceq->cab", self.jump, self.EpsN, self.wf)
        A[:, :, :nuK] += cons
        A[:, :nuK, :] += cons.transpose(0, 2, 1)
        return A

    def gh_local(self) -> np.ndarray:
        """g_h element matrices ``(nc, nv, nv)``."""
        w = self.wf / self.hK[:, None, None]
        return np.einsum("ceaq,cebq,ceq->cab", self.jn, self.jn, w)

    def divergence_local(self) -> np.ndarray:
        """b_h element matrices ``(nc, npl, nv)``: rows ``[p_K | pbar]``."""
        C = self.mesh.ncells
        npk, nk = self.npk, self.nk
        B = np.zeros((C, self.npl, self.nv))
        for d in range(2):
            B[:, :npk, d * nk : (d + 1) * nk] = -np.einsum(
                "iq,cjq,cq->cij", self.phi_v[:npk], self.dphi_v[:, :, :, d], self.wv
            )
        jn = self.jn.copy()
        jn[:, :, self.nuK :, :] *= self.bmask[:, :, None, None]
        for e in range(3):
            rows = slice(npk + e * self.nfk, npk + (e + 1) * self.nfk)
            B[:, rows, :] = np.einsum("jq,caq,cq->cja", self.psi, jn[:, e], self.wf[:, e])
        return B

    def mass_local(self) -> np.ndarray:
        """Cell velocity mass matrices ``(nc, nuK, nuK)``."""
        M1 = np.einsum("iq,jq,cq->cij", self.phi_v, self.phi_v, self.wv)
        out = np.zeros((self.mesh.ncells, self.nuK, self.nuK))
        nk = self.nk
        out[:, :nk, :nk] = M1
        out[:, nk:, nk:] = M1
        return out

    def convection_local(self, x: np.ndarray, mode: str = "picard") -> np.ndarray:
        """o_h element matrices linearized at state ``x``.

        ``mode="picard"`` freezes the advecting field; ``mode="newton"``
        adds the derivative with respect to it, using ``sign(w.n)`` for
        the derivative of ``|w.n|``.
        """
        if mode not in ("picard", "newton"):
            raise ValueError(f"unknown linearization {mode!r}")
        nk, nuK = self.nk, self.nuK
        C = self.mesh.ncells
        w = self.velocity_at_volume_points(x)
        wfc = self.velocity_at_face_points(x)
        wn = np.einsum("ceqx,cex->ceq", wfc, self.normals)
        N = np.zeros((C, self.nv, self.nv))
        wgrad = np.einsum("cqx,ciqx->ciq", w, self.dphi_v)
        vol = -np.einsum("ciq,jq,cq->cij", wgrad, self.phi_v, self.wv)
        N[:, :nk, :nk] = vol
        N[:, nk:nuK, nk:nuK] = vol
        flux = wn[:, :, None, :, None] * self.plus + np.abs(wn)[:, :, None, :, None] * self.jump
        N += 0.5 * np.einsum("ceaqx,cebqx,ceq->cab", self.jump, flux, self.wf)
        wout = self.wf * np.maximum(wn, 0.0) * self.omask[:, :, None]
        N[:, nuK:, nuK:] += np.einsum("eaqx,ebqx,ceq->cab", self.T, self.T, wout)
        if mode == "picard":
            return N
        ubf = self.trace_at_face_points(x)
        jn_cell = self.jn[:, :, :nuK]
        for dt in range(2):
            for d in range(2):
                N[:, dt * nk : (dt + 1) * nk, d * nk : (d + 1) * nk] -= np.einsum(
                    "cq,iq,cq,cjq->cji", self.wv, self.phi_v, w[:, :, dt], self.dphi_v[:, :, :, d]
                )
        V = (wfc + ubf) + np.sign(wn)[..., None] * (wfc - ubf)
        jV = np.einsum("ceaqx,ceqx->ceaq", self.jump, V)
        N[:, :, :nuK] += 0.5 * np.einsum("ceaq,cebq,ceq->cab", jV, jn_cell, self.wf)
        ubT = np.einsum("eaqx,ceqx->ceaq", self.T, ubf)
        wh = self.wf * (wn > 0.0) * self.omask[:, :, None]
        N[:, nuK:, :nuK] += np.einsum("ceaq,cebq,ceq->cab", ubT, jn_cell, wh)
        return N

    def forcing_local(self, f: Forcing | None) -> np.ndarray:
        """(f, v)_K element vectors ``(nc, nv)``; zero outside cell dofs."""
        out = np.zeros((self.mesh.ncells, self.nv))
        if f is None:
            return out
        rule = self.forcing_rule
        phi, _ = eval_basis(self.k, rule.points)
        xq = self.X0[:, None, :] + np.einsum("cab,qb->cqa", self.J, rule.points)
        fv = np.asarray(f(xq.reshape(-1, 2)), dtype=float).reshape(xq.shape)
        w = rule.weights[None, :] * self.detJ[:, None]
        for d in range(2):
            out[:, d * self.nk : (d + 1) * self.nk] = np.einsum("cq,iq,cq->ci", fv[:, :, d], phi, w)
        return out

    # boundary data --------------------------------------------------------------------
    def project_boundary_data(self, g: BoundaryData, faces=None) -> np.ndarray:
        """L2 projection of ``g`` onto the trace space on Dirichlet faces.

        Returns values aligned with ``layout.dirichlet`` (or with the
        ubar dofs of ``faces`` when given).
        """
        m = self.mesh
        if faces is None:
            faces = m.faces_tagged("wall", "lid", "inflow")
        rule = quadrature("edge", 2 * self.k + 8)
        psi = eval_face_basis(self.k, rule.points)
        out = np.zeros((len(faces), 2, self.nfk))
        fv = m.vertices[m.face_vertices]
        for i, f in enumerate(faces):
            pts = fv[f, 0] + rule.points[:, None] * (fv[f, 1] - fv[f, 0])
            vals = np.asarray(g(pts, m.face_tags[f]), dtype=float).reshape(-1, 2)
            out[i] = np.einsum("qd,jq,q->dj", vals, psi, rule.weights)
        return out.ravel()


# global matrices ------------------------------------------------------------------------

def block(M: sp.spmatrix, layout: SpaceLayout, rows: str, cols: str) -> sp.csr_matrix:
    s = layout.slices()
    return sp.csr_matrix(M[s[rows], :][:, s[cols]])


def assemble_stokes_forms(disc: Discretization) -> dict[str, sp.csr_matrix]:
    """Global viscous and divergence blocks (viscosity not applied)."""
    L = disc.layout
    A = disc.velocity_matrix(disc.viscous_local())
    B = disc.scatter(disc.divergence_local(), disc.pmap, disc.vmap)
    return {
        "A": A,
        "B": B,
        "A_uu": block(A, L, "u", "u"),
        "A_ubu": block(A, L, "ubar", "u"),
        "A_ubub": block(A, L, "ubar", "ubar"),
        "B_pu": block(B, L, "p", "u"),
        "B_pbu": block(B, L, "pbar", "u"),
        "B_pbub": block(B, L, "pbar", "ubar"),
    }


def assemble_convection(disc: Discretization, x: np.ndarray, mode: str = "picard") -> dict[str, sp.csr_matrix]:
    L = disc.layout
    N = disc.velocity_matrix(disc.convection_local(x, mode))
    return {
        "N": N,
        "N_uu": block(N, L, "u", "u"),
        "N_uub": block(N, L, "u", "ubar"),
        "N_ubu": block(N, L, "ubar", "u"),
        "N_ubub": block(N, L, "ubar", "ubar"),
    }


def assemble_gh(disc: Discretization) -> dict[str, sp.csr_matrix]:
    L = disc.layout
    G = disc.velocity_matrix(disc.gh_local())
    return {
        "G": G,
        "G_uu": block(G, L, "u", "u"),
        "G_ubu": block(G, L, "ubar", "u"),
        "G_ubub": block(G, L, "ubar", "ubar"),
    }


def assemble_dh(disc: Discretization) -> sp.csr_matrix:
    """Facet normal-jump penalty ``<h_F^-1 [u.n], [v.n]>`` as an n_u x n_u matrix."""
    m = disc.mesh
    nuK = disc.nuK
    jn = disc.jn[:, :, :nuK, :]
    rows, cols, vals = [], [], []
    cell_dofs = np.arange(m.ncells)[:, None] * nuK + np.arange(nuK)

    side = disc.face_sides
    # h_F^-1 cancels the face length in the quadrature weight
    w = np.broadcast_to(disc.face_rule.weights, (m.nfaces, len(disc.face_rule)))
    for s1 in range(2):
        for s2 in range(2):
            ok = (side[:, s1, 0] >= 0) & (side[:, s2, 0] >= 0)
            f = np.flatnonzero(ok)
            c1, e1 = side[f, s1, 0], side[f, s1, 1]
            c2, e2 = side[f, s2, 0], side[f, s2, 1]
            loc = np.einsum("faq,fbq,fq->fab", jn[c1, e1], jn[c2, e2], w[f])
            rows.append(np.broadcast_to(cell_dofs[c1][:, :, None], loc.shape).ravel())
            cols.append(np.broadcast_to(cell_dofs[c2][:, None, :], loc.shape).ravel())
            vals.append(loc.ravel())
    n = disc.layout.n_u
    D = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
    D.sum_duplicates()
    D.sort_indices()
    return D


def assemble_trace_mass(disc: Discretization) -> sp.csr_matrix:
    """Trace pressure mass matrix for ``sum_F h_F ||qbar||_F^2``."""
    m = disc.mesh
    hF = m.face_lengths
    w = disc.face_rule.weights
    loc = np.einsum("iq,jq,q->ij", disc.psi, disc.psi, w)[None] * (hF * hF)[:, None, None]
    blocks = [sp.csr_matrix(b) for b in loc]
    M = sp.block_diag(blocks, format="csr")
    M.sort_indices()
    return M


def assemble_velocity_mass(disc: Discretization) -> sp.csr_matrix:
    M = sp.block_diag([sp.csr_matrix(b) for b in disc.mass_local()], format="csr")
    return M


def apply_dirichlet(K: sp.spmatrix, b: np.ndarray, dofs: np.ndarray, values: np.ndarray):
    """Replace constrained rows by identity and move their columns to the RHS."""
    n = K.shape[0]
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
    g = np.zeros(n)
    g[dofs] = values
    b2 = np.asarray(b, dtype=float) - K @ g
    keep = np.ones(n)
    keep[dofs] = 0.0
    Dk = sp.diags(keep)
    K2 = (Dk @ K @ Dk + sp.diags(1.0 - keep)).tocsr()
    K2.eliminate_zeros()
    K2.sort_indices()
    b2[dofs] = values
    return K2, b2


# full system --------------------------------------------------------------------------------

@dataclass
class BlockSystem:
    """Linearized, augmented HDG system at a given state.

    The global matrix is ``[[mu A + N + gamma G, B^T], [B, 0]]`` in the
    full numbering with Dirichlet rows not yet constrained.
    """

    disc: Discretization
    mu: float
    gamma: float
    mode: str
    state: np.ndarray
    A_loc: np.ndarray = field(repr=False)
    G_loc: np.ndarray = field(repr=False)
    B_loc: np.ndarray = field(repr=False)
    N_loc: np.ndarray = field(repr=False)
    F_loc: np.ndarray = field(repr=False)
    with_convection: bool = True

    @property
    def layout(self) -> SpaceLayout:
        return self.disc.layout

    def velocity_local(self) -> np.ndarray:
        return self.mu * self.A_loc + self.N_loc + self.gamma * self.G_loc

    def element_matrices(self) -> np.ndarray:
        return self.disc.combine(self.velocity_local(), self.B_loc)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        d = self.disc
        return d.scatter(self.element_matrices(), d.gmap, d.gmap)

    @cached_property
    def rhs(self) -> np.ndarray:
        return self.disc.scatter_vector(self.F_loc, self.disc.vmap)

    def blocks(self) -> dict[str, sp.csr_matrix]:
        L, d = self.layout, self.disc
        V = d.velocity_matrix(self.velocity_local())
        B = d.scatter(self.B_loc, d.pmap, d.vmap)
        return {
            "F_uu": block(V, L, "u", "u"),
            "F_uub": block(V, L, "u", "ubar"),
            "F_ubu": block(V, L, "ubar", "u"),
            "F_ubub": block(V, L, "ubar", "ubar"),
            "B_pu": block(B, L, "p", "u"),
            "B_pbu": block(B, L, "pbar", "u"),
            "B_pbub": block(B, L, "pbar", "ubar"),
        }


def assemble_system(disc: Discretization, state: np.ndarray, mu: float, gamma: float = 0.0,
                    mode: str = "picard", forcing: Forcing | None = None,
                    convection: bool = True, _cache: dict | None = None) -> BlockSystem:
    """Assemble the linearization of the penalized problem at ``state``."""
    if _cache is None:
        _cache = {}
    if "A" not in _cache:
        _cache["A"] = disc.viscous_local()
        _cache["G"] = disc.gh_local()
        _cache["B"] = disc.divergence_local()
    key = ("F", id(forcing))
    if key not in _cache:
        _cache[key] = disc.forcing_local(forcing)
    if convection:
        N = disc.convection_local(state, mode)
    else:
        N = np.zeros_like(_cache["A"])
    return BlockSystem(disc, float(mu), float(gamma), mode, state, _cache["A"], _cache["G"],
                       _cache["B"], N, _cache[key], convection)


def nonlinear_residual(disc: Discretization, x: np.ndarray, mu: float, gamma: float,
                       forcing: Forcing | None = None, convection: bool = True,
                       dirichlet_values: np.ndarray | None = None, _cache: dict | None = None) -> np.ndarray:
    """Residual of the penalized discrete problem; Dirichlet rows hold ``x_D - g``."""
    sysm = assemble_system(disc, x, mu, gamma, "picard", forcing, convection, _cache)
    R = sysm.matrix @ x - sysm.rhs
    D = disc.layout.dirichlet
    R[D] = x[D] - (0.0 if dirichlet_values is None else dirichlet_values)
    return R
