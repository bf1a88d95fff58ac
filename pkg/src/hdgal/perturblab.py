"""Dense checks of the singular-perturbation Schur expansion.

For ``SA = [[A + gamma J, B^T], [B, 0]]`` with ``N(J) in N(B)`` and
``R(B^T) = R(J)``, the Schur complement satisfies

    -S = B (A + gamma J)^{-1} B^T = gamma^{-1} B E_Q B^T + s gamma^{-2} B R_gamma B^T

for a sign ``s``. :func:`verify_schur_expansion` evaluates both signs
against the dense inverse and reports which one holds; the expansion
is exact (not asymptotic) because ``R_gamma`` contains the resolvent.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import Discretization, assemble_dh, assemble_stokes_forms, assemble_trace_mass, assemble_velocity_mass
from .mesh import Mesh

PINV_TOL = 1e-12


class HypothesisError(ValueError):
    """Input matrices violate the hypotheses of the expansion."""


class RestrictedSingularError(np.linalg.LinAlgError):
    pass


def _range_null(J: np.ndarray, tol: float = PINV_TOL):
    w, V = np.linalg.eigh(0.5 * (J + J.T))
    cut = tol * max(np.abs(w).max(), 1e-300)
    nz = np.abs(w) > cut
    return V[:, nz], V[:, ~nz]


@dataclass
class DenseSaddle:
    A: np.ndarray
    B: np.ndarray
    J: np.ndarray
    M: np.ndarray | None = None
    gamma: float = 1e3

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.J = np.asarray(self.J, dtype=float)
        self.validate()

    @classmethod
    def augmented(cls, A, B, M, gamma=1e3) -> "DenseSaddle":
        B = np.atleast_2d(np.asarray(B, dtype=float))
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return cls(A, B, B.T @ np.linalg.solve(M, B), M, gamma)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[0]

    def validate(self) -> None:
        n, m = self.n, self.m
        if self.A.shape != (n, n) or self.J.shape != (n, n) or self.B.shape[1] != n:
            raise HypothesisError("inconsistent matrix shapes")
        if not m < n:
            raise HypothesisError("need m < n")
        s = np.linalg.svd(self.B, compute_uv=False)
        if np.sum(s > 1e-10 * s.max()) != m:
            raise HypothesisError("B must have full row rank")
        if np.abs(self.J - self.J.T).max() > 1e-12 * max(np.abs(self.J).max(), 1.0):
            raise HypothesisError("J must be symmetric")
        Y, Z = _range_null(self.J)
        if Z.shape[1] == 0:
            raise HypothesisError("J must be singular")
        if np.linalg.norm(self.B @ Z) > 1e-10 * max(np.linalg.norm(self.B), 1.0):
            raise HypothesisError("N(J) is not contained in N(B)")
        if Y.shape[1] != m:
            raise HypothesisError("R(B^T) != R(J): rank of J differs from rank of B")
        if np.linalg.norm(self.B.T - Y @ (Y.T @ self.B.T)) > 1e-10 * np.linalg.norm(self.B):
            raise HypothesisError("R(B^T) != R(J)")
        if self.M is not None:
            Mm = np.asarray(self.M, dtype=float)
            if np.linalg.eigvalsh(0.5 * (Mm + Mm.T)).min() <= 0:
                raise HypothesisError("M must be SPD")

    def neg_schur(self, gamma: float | None = None) -> np.ndarray:
        g = self.gamma if gamma is None else gamma
        K = self.A + g * self.J
        try:
            return self.B @ np.linalg.solve(K, self.B.T)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"A + gamma J is singular at gamma={g:g}") from exc


def projected_inverses(ds: DenseSaddle):
    """Return ``E_P, E_Q, P, Q`` built on orthonormal bases of N(J), R(J)."""
    Y, Z = _range_null(ds.J)
    PAP = Z.T @ ds.A @ Z
    QJQ = Y.T @ ds.J @ Y
    for name, Mr in (("PAP", PAP), ("QJQ", QJQ)):
        s = np.linalg.svd(Mr, compute_uv=False)
        if s.size and s.min() <= PINV_TOL * s.max():
            raise RestrictedSingularError(f"{name} is singular on its range")
    E_P = Z @ np.linalg.solve(PAP, Z.T)
    E_Q = Y @ np.linalg.solve(QJQ, Y.T)
    return E_P, E_Q, Z @ Z.T, Y @ Y.T


def r_gamma(ds: DenseSaddle, gamma: float, E_P=None, E_Q=None) -> np.ndarray:
    if E_P is None or E_Q is None:
        E_P, E_Q, _, _ = projected_inverses(ds)
    n = ds.n
    T = E_Q @ ds.A @ (np.eye(n) - E_P @ ds.A)
    return np.linalg.solve(np.eye(n) + T / gamma, T @ E_Q)


def _slope(gammas, vals) -> float:
    return float(np.polyfit(np.log10(gammas), np.log10(vals), 1)[0])


def verify_schur_expansion(ds: DenseSaddle, gammas=(1e2, 1e3, 1e4)) -> dict:
    """Compare ``-S`` with the expansion for both signs of the second term."""
    E_P, E_Q, _, _ = projected_inverses(ds)
    B = ds.B
    lead_op = B @ E_Q @ B.T
    rows = []
    for g in gammas:
        negS = ds.neg_schur(g)
        lead = lead_op / g
        corr = B @ r_gamma(ds, g, E_P, E_Q) @ B.T / g**2
        scale = np.linalg.norm(negS, 2)
        rows.append({
            "gamma": g,
            "leading_residual": float(np.linalg.norm(negS - lead, 2)),
            "C": float(g**2 * np.linalg.norm(negS - lead, 2)),
            "residual_plus": float(np.linalg.norm(negS - (lead + corr), 2) / scale),
            "residual_minus": float(np.linalg.norm(negS - (lead - corr), 2) / scale),
        })
    plus = max(r["residual_plus"] for r in rows)
    minus = max(r["residual_minus"] for r in rows)
    if minus <= 1e-9 and minus < plus:
        sign = "-"
    elif plus <= 1e-9 and plus < minus:
        sign = "+"
    else:
        sign = "undetermined"
    Cs = [r["C"] for r in rows]
    return {
        "rows": rows,
        "sign": sign,
        "max_residual_plus": plus,
        "max_residual_minus": minus,
        "C_ratio": float(max(Cs) / min(Cs)) if min(Cs) > 0 else math.inf,
    }


def verify_al_corollary(ds: DenseSaddle, gammas=(1e2, 1e3, 1e4, 1e5)) -> dict:
    if ds.M is None:
        raise HypothesisError("mass identity needs J = B^T M^{-1} B with M given")
    E_P, E_Q, _, _ = projected_inverses(ds)
    M = np.asarray(ds.M, dtype=float)
    ident = float(np.abs(ds.B @ E_Q @ ds.B.T - M).max())
    gaps = [float(np.linalg.norm(ds.neg_schur(g) - M / g, 2)) for g in gammas]
    return {
        "identity_error": ident,
        "gammas": list(gammas),
        "gaps": gaps,
        "slope": _slope(gammas, gaps),
    }


# random instances --------------------------------------------------------------------------

def random_saddle(rng: np.random.Generator, n: int, m: int, kind: str = "general",
                  gamma: float = 1e3) -> DenseSaddle:
    """Random instance satisfying the hypotheses.

    ``kind="general"``: J = U D U^T, B = C U^T for orthonormal U (n x m).
    ``kind="al"``: J = B^T M^{-1} B with random SPD M.

    Singular values of B and eigenvalues of D and M are drawn from
    [0.5, 2], so gamma >= 1e2 is in the asymptotic regime.
    """
    A = 2.0 * np.eye(n) + 0.5 * rng.standard_normal((n, n)) / np.sqrt(n)
    U, _ = np.linalg.qr(rng.standard_normal((n, m)))
    W, _ = np.linalg.qr(rng.standard_normal((m, m)))
    C = W * rng.uniform(0.5, 2.0, m)
    B = C @ U.T
    if kind == "general":
        D = np.diag(rng.uniform(0.5, 2.0, m))
        return DenseSaddle(A, B, U @ D @ U.T, None, gamma)
    if kind == "al":
        R, _ = np.linalg.qr(rng.standard_normal((m, m)))
        M = (R * rng.uniform(0.5, 2.0, m)) @ R.T
        return DenseSaddle.augmented(A, B, M, gamma)
    raise ValueError(f"unknown kind {kind!r}")


def worked_example() -> DenseSaddle:
    return DenseSaddle(np.eye(2), np.array([[1.0, 0.0]]), np.diag([1.0, 0.0]), np.array([[1.0]]), 10.0)


# penalty vs mixed projection --------------------------------------------------------------

def _jump_moments_direct(disc: Discretization, u: np.ndarray) -> np.ndarray:
    """``int_F psi_j [u.n] ds`` evaluated from cell traces at face points."""
    m = disc.mesh
    uc = u.reshape(m.ncells, 2, disc.nk)
    val = np.einsum("cdi,ceiq,ced->ceq", uc, disc.phi_f, disc.normals)
    mom = np.einsum("ceq,jq,ceq->cej", val, disc.psi, disc.wf)
    out = np.zeros((m.nfaces, disc.nfk))
    np.add.at(out, m.cell_faces.ravel(), mom.reshape(-1, disc.nfk))
    return out


def verify_appendixA_equivalence(mesh: Mesh, k: int, gamma: float, source=None, seed: int = 0) -> dict:
    """Solve the penalty form and the mixed form of the projection problem."""
    if not gamma > 0:
        raise ValueError("the mixed form needs gamma > 0")
    disc = Discretization(mesh, k)
    if source is None:
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((2, 5))

        def source(x):
            X, Y = x[:, 0], x[:, 1]
            return np.stack([a[i, 0] + a[i, 1] * X + a[i, 2] * Y + np.sin(a[i, 3] * X + a[i, 4] * Y)
                             for i in range(2)], axis=1)
    L = disc.layout
    G = disc.forcing_local(source)[:, : disc.nuK].ravel()
    Mu = assemble_velocity_mass(disc).toarray()
    D = assemble_dh(disc).toarray()
    Bp = assemble_stokes_forms(disc)["B_pbu"].toarray()
    Mb = assemble_trace_mass(disc).toarray()
    u_pen = np.linalg.solve(Mu + gamma * D, G)
    K = np.block([[Mu, Bp.T], [Bp, -Mb / gamma]])
    sol = np.linalg.solve(K, np.concatenate([G, np.zeros(L.n_pbar)]))
    u_mix, pbar = sol[: L.n_u], sol[L.n_u :]
    u_a8 = np.linalg.solve(Mu + gamma * Bp.T @ np.linalg.solve(Mb, Bp), G)
    # L2 projection of gamma h_F^-1 [u.n] onto P_k(F); psi has norm^2 = h_F on F
    hF = mesh.face_lengths[:, None]
    recon = (gamma / hF**2 * _jump_moments_direct(disc, u_pen)).ravel()
    nrm = np.linalg.norm
    return {
        "gamma": gamma,
        "k": k,
        "u_rel": float(nrm(u_pen - u_mix) / nrm(u_pen)),
        "pbar_rel": float(nrm(pbar - recon) / nrm(pbar)),
        "u_A8_rel": float(nrm(u_a8 - u_pen) / nrm(u_pen)),
        "jump_norm": float(np.sqrt(max(u_pen @ D @ u_pen, 0.0))),
    }


# full report ------------------------------------------------------------------------------

@dataclass
class VerificationReport:
    seed: int
    results: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "passed": self.passed, "checks": self.checks,
                           "results": self.results}, indent=2, sort_keys=True) + "\n"

    def text(self) -> str:
        lines = [f"perturbation lab, seed {self.seed}"]
        for name, ok in self.checks.items():
            lines.append(f"  {'PASS' if ok else 'FAIL'}  {name}")
        lines.append(f"  second-order sign: {self.results['expansion']['sign']}")
        return "\n".join(lines)


def run_verification(seed: int = 0, instances: int = 50, projection_meshes=None) -> VerificationReport:
    from .mesh import generate_unit_square

    rng = np.random.default_rng(seed)
    rep = VerificationReport(seed)
    lem, cor, proj = [], [], []
    for _ in range(instances):
        n = int(rng.integers(4, 13))
        m = int(rng.integers(1, n))
        ds = random_saddle(rng, n, m, "general")
        E_P, _, _, _ = projected_inverses(ds)
        EA = E_P @ ds.A
        proj.append(float(np.abs(EA @ EA - EA).max()))
        lem.append(verify_schur_expansion(ds))
        cor.append(verify_al_corollary(random_saddle(rng, n, m, "al")))
    signs = sorted({r["sign"] for r in lem})
    ex = verify_schur_expansion(worked_example(), gammas=(10.0,))
    rep.results["expansion"] = {
        "sign": signs[0] if len(signs) == 1 else "mixed",
        "max_residual_plus": max(r["max_residual_plus"] for r in lem),
        "max_residual_minus": max(r["max_residual_minus"] for r in lem),
        "max_C_ratio": max(r["C_ratio"] for r in lem),
        "worked_example": ex,
    }
    rep.results["projection"] = {"max_idempotency_error": max(proj)}
    rep.results["mass_identity"] = {
        "max_identity_error": max(r["identity_error"] for r in cor),
        "slopes": [r["slope"] for r in cor],
    }
    meshes = projection_meshes or [(generate_unit_square(2), k) for k in (1, 2)]
    app = [verify_appendixA_equivalence(mh, k, g, seed=seed) for mh, k in meshes for g in (1e2, 1e4)]
    rep.results["penalty_mixed"] = app
    rep.checks = {
        "projection E_P A idempotent": max(proj) <= 1e-10,
        "expansion sign determined": rep.results["expansion"]["sign"] in ("+", "-"),
        "leading constant stable (factor 3)": rep.results["expansion"]["max_C_ratio"] <= 3.0,
        "first-order term equals M": rep.results["mass_identity"]["max_identity_error"] <= 1e-9,
        "second-order decay slope -2 +- 0.2": all(abs(s + 2) <= 0.2 for s in rep.results["mass_identity"]["slopes"]),
        "penalty/mixed velocity equivalence": all(a["u_rel"] <= 1e-9 for a in app),
        "penalty/mixed trace-pressure identity": all(a["pbar_rel"] <= 1e-9 for a in app),
    }
    return rep
