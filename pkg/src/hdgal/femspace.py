"""Reference bases, quadrature and global dof layout.

Cell basis: orthonormal polynomials on the reference triangle
``(0,0), (1,0), (0,1)``, obtained by Gram-Schmidt on monomials ordered by
total degree. The ordering is hierarchical, so the first ``dim P_{k-1}``
functions of the degree-k family span ``P_{k-1}``; pressure uses them.

Face basis: Legendre polynomials orthonormal on ``[0, 1]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.special import eval_legendre, roots_jacobi

from .mesh import Mesh

MAX_DEGREE = 4
MAX_EXACTNESS = 40


def pdim(k: int) -> int:
    """Dimension of P_k on a triangle."""
    return (k + 1) * (k + 2) // 2 if k >= 0 else 0


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exactness: int
    domain: str

    def __len__(self):
        return len(self.weights)


@lru_cache(maxsize=None)
def quadrature(domain: str, exactness: int) -> QuadratureRule:
    """Quadrature rule on the reference ``"triangle"`` or unit ``"edge"``.

    Edge rules are Gauss-Legendre on [0, 1]. Triangle rules are the
    centroid rule for exactness <= 1 and collapsed Gauss-Legendre x
    Gauss-Jacobi products otherwise.
    """
    if exactness < 0 or exactness > MAX_EXACTNESS:
        raise ValueError(f"exactness must be in [0, {MAX_EXACTNESS}], got {exactness}")
    n = exactness // 2 + 1
    if domain == "edge":
        x, w = npleg.leggauss(n)
        pts, wts = 0.5 * (x + 1.0), 0.5 * w
    elif domain == "triangle":
        if exactness <= 1:
            pts, wts = np.array([[1.0 / 3.0, 1.0 / 3.0]]), np.array([0.5])
        else:
            xu, wu = npleg.leggauss(n)
            xv, wv = roots_jacobi(n, 1.0, 0.0)
            u, v = 0.5 * (xu + 1.0), 0.5 * (xv + 1.0)
            uu, vv = np.meshgrid(u, v, indexing="ij")
            pts = np.stack([(uu * (1.0 - vv)).ravel(), vv.ravel()], axis=1)
            wts = (np.outer(wu, wv) * 0.125).ravel()
    else:
        raise ValueError(f"unknown domain {domain!r}")
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, exactness, domain)


def _exponents(k: int) -> list[tuple[int, int]]:
    return [(d - b, b) for d in range(k + 1) for b in range(d + 1)]


def _monomials(k: int, pts: np.ndarray):
    x, y = pts[:, 0], pts[:, 1]
    exps = _exponents(k)
    val = np.array([x**a * y**b for a, b in exps])
    dx = np.array([a * x ** max(a - 1, 0) * y**b if a else 0.0 * x for a, b in exps])
    dy = np.array([b * x**a * y ** max(b - 1, 0) if b else 0.0 * x for a, b in exps])
    return val, np.stack([dx, dy], axis=-1)


@lru_cache(maxsize=None)
def _orthonormal_coefficients(k: int) -> np.ndarray:
    rule = quadrature("triangle", 2 * k)
    m, _ = _monomials(k, rule.points)
    gram = (m * rule.weights) @ m.T
    L = np.linalg.cholesky(gram)
    C = np.linalg.solve(L, np.eye(len(L)))
    # one refinement pass: monomial Gram matrices are ill-conditioned for k >= 4
    q = C @ m
    L2 = np.linalg.cholesky((q * rule.weights) @ q.T)
    C = np.linalg.solve(L2, C)
    C.setflags(write=False)
    return C


def eval_basis(k: int, points) -> tuple[np.ndarray, np.ndarray]:
    """Cell basis at reference points.

    Returns values ``(pdim(k), npts)`` and reference gradients
    ``(pdim(k), npts, 2)``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    C = _orthonormal_coefficients(k)
    m, dm = _monomials(k, pts)
    return C @ m, np.einsum("ij,jqd->iqd", C, dm)


def eval_face_basis(k: int, s) -> np.ndarray:
    """Orthonormal Legendre basis on [0, 1]; returns ``(k+1, npts)``."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    return np.array([np.sqrt(2 * j + 1) * eval_legendre(j, 2.0 * s - 1.0) for j in range(k + 1)])


REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def reference_edge_points(e: int, t: np.ndarray) -> np.ndarray:
    """Points on local edge ``e`` of the reference triangle at parameter t."""
    a, b = REF_VERTICES[e], REF_VERTICES[(e + 1) % 3]
    return a[None, :] + np.asarray(t)[:, None] * (b - a)[None, :]


@dataclass(frozen=True)
class SpaceLayout:
    """Global numbering ``[u | p | ubar | pbar]``.

    Cell velocity: ``cell*2*nk + comp*nk + i``; trace velocity:
    ``ubar_offset + face*2*(k+1) + comp*(k+1) + j``. Dirichlet trace
    velocity dofs stay in the numbering and are constrained later.
    """

    k: int
    ncells: int
    nfaces: int
    dirichlet: np.ndarray = field(repr=False)

    @property
    def nk(self) -> int:
        return pdim(self.k)

    @property
    def npk(self) -> int:
        return pdim(self.k - 1)

    @property
    def nfk(self) -> int:
        return self.k + 1

    @property
    def n_u(self) -> int:
        return 2 * self.ncells * self.nk

    @property
    def n_p(self) -> int:
        return self.ncells * self.npk

    @property
    def n_ubar(self) -> int:
        return 2 * self.nfaces * self.nfk

    @property
    def n_pbar(self) -> int:
        return self.nfaces * self.nfk

    @property
    def p_offset(self) -> int:
        return self.n_u

    @property
    def ubar_offset(self) -> int:
        return self.n_u + self.n_p

    @property
    def pbar_offset(self) -> int:
        return self.n_u + self.n_p + self.n_ubar

    @property
    def total_dofs(self) -> int:
        return self.n_u + self.n_p + self.n_ubar + self.n_pbar

    @property
    def condensed_dofs(self) -> int:
        return self.n_ubar + self.n_pbar

    def slices(self) -> dict[str, slice]:
        return {
            "u": slice(0, self.n_u),
            "p": slice(self.p_offset, self.ubar_offset),
            "ubar": slice(self.ubar_offset, self.pbar_offset),
            "pbar": slice(self.pbar_offset, self.total_dofs),
        }

    def split(self, x: np.ndarray) -> dict[str, np.ndarray]:
        return {name: x[s] for name, s in self.slices().items()}

    def ubar_dofs(self, faces) -> np.ndarray:
        faces = np.asarray(faces, dtype=np.int64)
        loc = np.arange(2 * self.nfk)
        return (self.ubar_offset + faces[:, None] * 2 * self.nfk + loc[None, :]).ravel()

    def pbar_dofs(self, faces) -> np.ndarray:
        faces = np.asarray(faces, dtype=np.int64)
        loc = np.arange(self.nfk)
        return (self.pbar_offset + faces[:, None] * self.nfk + loc[None, :]).ravel()


def build_layout(mesh: Mesh, k: int) -> SpaceLayout:
    if int(k) != k or k < 1:
        raise ValueError("degree k must be an integer >= 1")
    if k > MAX_DEGREE:
        raise ValueError(f"degree k > {MAX_DEGREE} is not supported")
    k = int(k)
    faces = mesh.faces_tagged("wall", "lid", "inflow")
    tmp = SpaceLayout(k, mesh.ncells, mesh.nfaces, np.empty(0, dtype=np.int64))
    dirichlet = tmp.ubar_dofs(faces) if len(faces) else np.empty(0, dtype=np.int64)
    dirichlet.setflags(write=False)
    return SpaceLayout(k, mesh.ncells, mesh.nfaces, dirichlet)
