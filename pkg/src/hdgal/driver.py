"""Newton iteration with Reynolds continuation, norms and reports.

Each Newton correction solves the condensed Jacobian system with FGMRES
preconditioned by :class:`~hdgal.alprecond.ALPreconditioner`, then
recovers the cell unknowns locally. For enclosed flows the pressure is
defined up to a constant; after every update the constant is chosen so
that the cell pressure has zero mean.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .alprecond import ALPreconditioner, PreconditionerSpec
from .assembly import Discretization, assemble_system
from .condense import condense
from .femspace import eval_basis
from .krylov import KrylovConfig, fgmres
from .mesh import Mesh, generate_bfs, generate_unit_square

log = logging.getLogger(__name__)

CSV_COLUMNS = ("case", "precond", "cells", "k", "total_dofs", "condensed_dofs", "re",
               "newton_iters", "max_outer", "max_inner", "wall_seconds")


# cases --------------------------------------------------------------------------------------

@dataclass(frozen=True)
class ManufacturedSolution:
    velocity: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]  # (n, 2, 2): d u_i / d x_j
    pressure: Callable[[np.ndarray], np.ndarray]
    forcing: Callable[[np.ndarray], np.ndarray]
    description: str = ""


@dataclass(frozen=True)
class FlowCase:
    name: str
    boundary_data: Callable[[np.ndarray, str], np.ndarray]
    forcing: Callable[[np.ndarray], np.ndarray] | None = None
    enclosed: bool = True
    exact: ManufacturedSolution | None = None


def _lid_data(x, tag):
    out = np.zeros((len(x), 2))
    if tag == "lid":
        out[:, 0] = 1.0
    return out


def _bfs_data(x, tag):
    out = np.zeros((len(x), 2))
    if tag == "inflow":
        y = x[:, 1]
        out[:, 0] = 4.0 * (2.0 - y) * (y - 1.0)
    return out


def lid_case() -> FlowCase:
    return FlowCase("lid", _lid_data, None, True)


def bfs_case() -> FlowCase:
    return FlowCase("bfs", _bfs_data, None, False)


def sympy_solution(psi_expr: str, p_expr: str, mu: float, convection: bool = True) -> ManufacturedSolution:
    """Divergence-free velocity ``u = (d psi/dy, -d psi/dx)`` and pressure
    ``p``; the forcing is ``-mu lap u + (u.grad) u + grad p``."""
    import sympy

    x, y = sympy.symbols("x y")
    psi = sympy.sympify(psi_expr, locals={"x": x, "y": y})
    p = sympy.sympify(p_expr, locals={"x": x, "y": y})
    u = [sympy.diff(psi, y), -sympy.diff(psi, x)]
    grad = [[sympy.diff(ui, v) for v in (x, y)] for ui in u]
    f = []
    for i in range(2):
        lap = sympy.diff(u[i], x, 2) + sympy.diff(u[i], y, 2)
        adv = u[0] * grad[i][0] + u[1] * grad[i][1] if convection else 0
        f.append(sympy.simplify(-mu * lap + adv + sympy.diff(p, (x, y)[i])))

    def vec(exprs):
        fn = sympy.lambdify((x, y), exprs, "numpy")

        def ev(pts):
            pts = np.asarray(pts, dtype=float)
            vals = fn(pts[:, 0], pts[:, 1])
            return np.stack([np.broadcast_to(np.asarray(v, dtype=float), pts[:, 0].shape) for v in vals], axis=-1)

        return ev

    gfn = vec([grad[0][0], grad[0][1], grad[1][0], grad[1][1]])
    pfn = sympy.lambdify((x, y), p, "numpy")
    return ManufacturedSolution(
        velocity=vec(u),
        gradient=lambda pts: gfn(pts).reshape(-1, 2, 2),
        pressure=lambda pts: np.broadcast_to(np.asarray(pfn(pts[:, 0], pts[:, 1]), dtype=float), (len(pts),)).copy(),
        forcing=vec(f),
        description=f"psi={psi_expr}, p={p_expr}",
    )


#: default manufactured pair; the velocity has nonzero normal and
#: tangential boundary values and the pressure has zero mean.
MANUFACTURED_PSI = "sin(pi*(x + 0.25))*sin(pi*(y + 0.5))/pi"
MANUFACTURED_P = "sin(pi*x)*cos(pi*y)"


def manufactured_case(mu: float, psi: str = MANUFACTURED_PSI, p: str = MANUFACTURED_P,
                      convection: bool = True) -> FlowCase:
    sol = sympy_solution(psi, p, mu, convection)
    return FlowCase("manufactured", lambda pts, tag: sol.velocity(pts), sol.forcing, True, sol)


def make_mesh(case: str, size: int) -> Mesh:
    if case in ("lid", "manufactured"):
        return generate_unit_square(size)
    if case == "bfs":
        return generate_bfs(size)
    raise ValueError(f"unknown case {case!r}")


# schedules -----------------------------------------------------------------------------------

@dataclass(frozen=True)
class ContinuationSchedule:
    targets: tuple

    def __post_init__(self):
        t = tuple(float(v) for v in self.targets)
        if not t:
            raise ValueError("empty continuation schedule")
        if any(v <= 0 for v in t) or any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("Reynolds targets must be positive and strictly increasing")
        object.__setattr__(self, "targets", t)

    @classmethod
    def default(cls, case: str, re_max: float = 10000.0) -> "ContinuationSchedule":
        if case in ("lid", "manufactured"):
            full = [1.0, 10.0, 100.0] + [250.0 * i for i in range(1, 41)]
        elif case == "bfs":
            full = [1.0, 10.0] + [50.0 * i for i in range(1, 9)] + [400.0 + 200.0 * i for i in range(1, 49)]
        else:
            raise ValueError(f"unknown case {case!r}")
        t = [v for v in full if v <= re_max]
        if not t or t[-1] < re_max:
            t.append(float(re_max))
        return cls(tuple(t))

    def __iter__(self):
        return iter(self.targets)

    def __len__(self):
        return len(self.targets)


@dataclass(frozen=True)
class NewtonConfig:
    atol: float = 1e-7
    rtol: float = 1e-8
    max_iter: int = 25
    growth_window: int = 3
    linearization: str = "newton"


@dataclass
class SolveReport:
    case: str
    precond: str
    cells: int
    k: int
    total_dofs: int
    condensed_dofs: int
    re: float
    newton_iters: int
    max_outer: int
    max_inner: int
    wall_seconds: float
    converged: bool = True
    residuals: list = field(default_factory=list)
    outer_iters: list = field(default_factory=list)
    max_schur_inner: int = 0

    def row(self, timings: bool = True) -> dict:
        return {
            "case": self.case,
            "precond": self.precond,
            "cells": self.cells,
            "k": self.k,
            "total_dofs": self.total_dofs,
            "condensed_dofs": self.condensed_dofs,
            "re": _fmt_re(self.re),
            "newton_iters": self.newton_iters,
            "max_outer": self.max_outer,
            "max_inner": self.max_inner,
            "wall_seconds": f"{self.wall_seconds:.6g}" if timings else "0",
        }


def _fmt_re(re: float) -> str:
    return str(int(re)) if float(re).is_integer() else f"{re:.6g}"


class NewtonDivergence(RuntimeError):
    def __init__(self, msg, re=None, state=None, residuals=None):
        super().__init__(msg)
        self.re, self.state, self.residuals = re, state, residuals or []


@dataclass
class SteadyResult:
    state: np.ndarray
    reports: list
    disc: Discretization


# core solve -----------------------------------------------------------------------------------

class SteadySolver:
    """Newton/Picard solver for one discretization and flow case."""

    def __init__(self, disc: Discretization, case: FlowCase, gamma: float = 1e4,
                 precond: PreconditionerSpec | None = None, outer: KrylovConfig | None = None,
                 newton: NewtonConfig | None = None, convection: bool = True):
        self.disc, self.case, self.gamma = disc, case, float(gamma)
        self.precond = precond or PreconditionerSpec()
        self.outer = outer or KrylovConfig(rtol=1e-4, atol=1e-9, restart=300, maxiter=300)
        self.newton = newton or NewtonConfig()
        self.convection = convection
        self._cache: dict = {}
        self.g = disc.project_boundary_data(case.boundary_data)
        L = disc.layout
        nc = disc.mesh.ncells
        # cell-mean weights: integral of phi_0 = sqrt(2) |K| on each cell
        self._pmean_w = np.sqrt(2.0) * 0.5 * disc.detJ
        self._area = float(0.5 * disc.detJ.sum())
        self._p0 = L.p_offset + np.arange(nc) * disc.npk
        self._pb0 = L.pbar_offset + np.arange(disc.mesh.nfaces) * disc.nfk

    def initial_state(self) -> np.ndarray:
        x = np.zeros(self.disc.layout.total_dofs)
        x[self.disc.layout.dirichlet] = self.g
        return x

    def residual(self, x: np.ndarray, mu: float) -> np.ndarray:
        s = assemble_system(self.disc, x, mu, self.gamma, "picard", self.case.forcing, self.convection, self._cache)
        R = s.matrix @ x - s.rhs
        D = self.disc.layout.dirichlet
        R[D] = x[D] - self.g
        return R

    def normalize_pressure(self, x: np.ndarray) -> None:
        if not self.case.enclosed:
            return
        mean = float(self._pmean_w @ x[self._p0]) / self._area
        x[self._p0] -= mean / np.sqrt(2.0)
        x[self._pb0] -= mean

    def linear_solve(self, x: np.ndarray, mu: float, R: np.ndarray):
        mode = self.newton.linearization if self.convection else "picard"
        s = assemble_system(self.disc, x, mu, self.gamma, mode, self.case.forcing, self.convection, self._cache)
        cond = condense(s, b=-R, dirichlet_values=0.0)
        P = ALPreconditioner(cond, self.precond)
        dT, st = fgmres(cond.matrix, cond.rhs, P, self.outer)
        if not st.converged:
            log.warning("outer FGMRES stopped at %d iterations (residual %.3e)", st.iterations, st.residual_norm)
        return cond.back_substitute(dT), st, P

    def solve_at(self, x0: np.ndarray, re: float) -> tuple[np.ndarray, SolveReport]:
        mu = 1.0 / re
        cfg = self.newton
        t0 = time.perf_counter()
        x = x0.copy()
        self.normalize_pressure(x)
        R = self.residual(x, mu)
        r0 = np.linalg.norm(R)
        res = [float(r0)]
        outers, inner, schur = [], 0, 0
        growth = 0
        it = 0
        while not (res[-1] <= cfg.atol or res[-1] <= cfg.rtol * r0):
            if it >= cfg.max_iter:
                raise NewtonDivergence(f"Newton iteration cap {cfg.max_iter} reached at Re={re:g}", re, x, res)
            dx, st, P = self.linear_solve(x, mu, R)
            x += dx
            self.normalize_pressure(x)
            R = self.residual(x, mu)
            it += 1
            res.append(float(np.linalg.norm(R)))
            outers.append(st.iterations)
            inner = max(inner, P.max_velocity_iters)
            schur = max(schur, P.max_schur_iters)
            if not np.isfinite(res[-1]):
                raise NewtonDivergence(f"non-finite residual at Re={re:g}", re, x, res)
            growth = growth + 1 if res[-1] > res[-2] else 0
            if growth >= cfg.growth_window:
                raise NewtonDivergence(f"residual grew over {growth} iterations at Re={re:g}", re, x, res)
            log.debug("Re=%g newton %d |R|=%.3e outer=%d", re, it, res[-1], st.iterations)
        L = self.disc.layout
        rep = SolveReport(self.case.name, self.precond.variant, self.disc.mesh.ncells, self.disc.k,
                          L.total_dofs, L.condensed_dofs, float(re), it, max(outers, default=0), inner,
                          time.perf_counter() - t0, True, res, outers, schur)
        return x, rep


def solve_steady(case: FlowCase, mesh: Mesh, k: int, gamma: float = 1e4, alpha: float | None = None,
                 schedule: ContinuationSchedule | Iterable[float] | None = None,
                 precond: PreconditionerSpec | str | None = None, newton: NewtonConfig | None = None,
                 outer: KrylovConfig | None = None, convection: bool = True,
                 on_report: Callable[[SolveReport], None] | None = None,
                 outflow: str = "directional", x0: np.ndarray | None = None) -> SteadyResult:
    """Continuation in Re over ``schedule``; each step warm-starts from the last.

    A failed Newton solve is retried once through the midpoint Reynolds
    number between the previous and the failing target.
    """
    if isinstance(precond, str):
        precond = PreconditionerSpec(precond)
    if schedule is None:
        schedule = ContinuationSchedule.default(case.name if case.name != "manufactured" else "lid")
    elif not isinstance(schedule, ContinuationSchedule):
        schedule = ContinuationSchedule(tuple(schedule))
    disc = Discretization(mesh, k, alpha, outflow=outflow)
    solver = SteadySolver(disc, case, gamma, precond, outer, newton, convection)
    x = solver.initial_state() if x0 is None else np.array(x0, dtype=float)
    reports = []
    prev = 0.0
    for re in schedule:
        try:
            x_new, rep = solver.solve_at(x, re)
        except NewtonDivergence as exc:
            mid = 0.5 * (prev + re)
            log.warning("%s; retrying through Re=%g", exc, mid)
            try:
                x_mid, rep_mid = solver.solve_at(x, mid)
                x_new, rep = solver.solve_at(x_mid, re)
            except NewtonDivergence as exc2:
                exc2.args = (f"{exc2.args[0]} (after halved-step retry)",)
                if exc2.state is None:
                    exc2.state = x
                exc2.reports = reports
                raise exc2
            rep.newton_iters += rep_mid.newton_iters
            rep.max_outer = max(rep.max_outer, rep_mid.max_outer)
            rep.max_inner = max(rep.max_inner, rep_mid.max_inner)
            rep.wall_seconds += rep_mid.wall_seconds
        x = x_new
        prev = re
        reports.append(rep)
        if on_report is not None:
            on_report(rep)
    return SteadyResult(x, reports, disc)


# diagnostics ---------------------------------------------------------------------------------

def divergence_moments(disc: Discretization, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cellwise moments ``int_K q div u_h`` (q in P_{k-1}) and facewise
    moments ``int_F qbar [u_h.n]`` against the trace basis.

    On boundary faces the face moment uses ``(u_h - ubar_h).n``. Test
    functions are the orthonormal reference bases mapped to the element.
    """
    B = disc.divergence_local()
    v = x[disc.vmap]
    loc = np.einsum("cpa,ca->cp", B, v)
    cell = -loc[:, : disc.npk]
    face = np.zeros(disc.layout.n_pbar)
    rows = disc.pmap[:, disc.npk :] - disc.layout.pbar_offset
    np.add.at(face, rows.ravel(), loc[:, disc.npk :].ravel())
    return cell, face


# norms ----------------------------------------------------------------------------------------

@dataclass(frozen=True)
class NormSet:
    v: float
    r: float
    v_gamma: float
    p: float
    one_h: float
    l2_u: float
    l2_p: float

    def as_dict(self) -> dict:
        return asdict(self)


def compute_norms(disc: Discretization, x: np.ndarray, gamma: float, mu: float,
                  exact: ManufacturedSolution | None = None) -> NormSet:
    """Mesh-dependent norms of the discrete field, or of its error.

    With ``exact`` the error ``(u - u_h, u|_F - ubar_h)`` is measured; on
    each cell boundary its trace jump reduces to ``u_h - ubar_h``.
    On boundary faces the average in ``||.||_{1,h}`` is the one-sided trace.
    """
    m = disc.mesh
    k, nk = disc.k, disc.nk
    rule = disc.forcing_rule
    phi, dphi_ref = eval_basis(k, rule.points)
    dphi = np.einsum("cab,iqb->ciqa", disc.invJT, dphi_ref)
    w = rule.weights[None, :] * disc.detJ[:, None]
    xq = disc.X0[:, None, :] + np.einsum("cab,qb->cqa", disc.J, rule.points)
    uc = disc.cell_velocity(x)
    uh = np.einsum("cdi,iq->cqd", uc, phi)
    guh = np.einsum("cdi,ciqx->cqdx", uc, dphi)
    pc = x[disc.layout.p_offset : disc.layout.ubar_offset].reshape(m.ncells, disc.npk)
    ph = np.einsum("ci,iq->cq", pc, phi[: disc.npk])
    pts = xq.reshape(-1, 2)
    if exact is not None:
        eu = exact.velocity(pts).reshape(uh.shape) - uh
        eg = exact.gradient(pts).reshape(guh.shape) - guh
        pe = exact.pressure(pts).reshape(ph.shape)
        # compare pressures up to the common mean
        pe = pe - (pe * w).sum() / w.sum()
        ep = pe - (ph - (ph * w).sum() / w.sum())
    else:
        eu, eg, ep = -uh, -guh, -ph
    grad2 = float(np.einsum("cqdx,cq->", eg**2, w))
    l2u = float(np.sqrt(np.einsum("cqd,cq->", eu**2, w)))
    l2p = float(np.sqrt(np.einsum("cq,cq->", ep**2, w)))

    ufc = disc.velocity_at_face_points(x)
    ubf = disc.trace_at_face_points(x)
    jump = ufc - ubf  # sign is irrelevant in the squared norms
    inv_h = 1.0 / disc.hK[:, None, None]
    jv = float(np.einsum("ceqd,ceq->", jump**2, disc.wf * inv_h))
    jn = np.einsum("ceqd,ced->ceq", jump, disc.normals)
    r2 = float(np.einsum("ceq,ceq->", jn**2, disc.wf * inv_h))

    # ||.||_{1,h}: trace replaced by the face average of the cell field
    side = disc.face_sides
    avg = np.zeros((m.nfaces,) + ufc.shape[2:])
    cnt = np.zeros(m.nfaces)
    if exact is not None:
        uex_f = exact.velocity(disc.face_points.reshape(-1, 2)).reshape(m.nfaces, -1, 2)
    for s in range(2):
        ok = side[:, s, 0] >= 0
        f = np.flatnonzero(ok)
        vals = ufc[side[f, s, 0], side[f, s, 1]]
        if exact is not None:
            vals = uex_f[f] - vals
        avg[f] += vals
        cnt[f] += 1
    avg /= cnt[:, None, None]
    cellval = ufc if exact is None else uex_f[m.cell_faces] - ufc
    d1 = cellval - avg[m.cell_faces]
    oneh = float(np.sqrt(grad2 + np.einsum("ceqd,ceq->", d1**2, disc.wf * inv_h)))

    pb = x[disc.layout.pbar_offset :].reshape(m.nfaces, disc.nfk)
    pbf = np.einsum("fj,jq->fq", pb, disc.psi)
    if exact is not None:
        pex = exact.pressure(disc.face_points.reshape(-1, 2)).reshape(pbf.shape)
        shift = (exact.pressure(pts).reshape(ph.shape) * w).sum() / w.sum() - (ph * w).sum() / w.sum()
        pbf = pex - shift - pbf
    pbc = pbf[m.cell_faces]
    pnorm2 = l2p**2 + float(np.einsum("ceq,ceq->", pbc**2, disc.wf * disc.hK[:, None, None]))

    v = math.sqrt(grad2 + jv)
    r = math.sqrt(r2)
    vg = math.sqrt(v**2 + gamma / mu * r**2)
    return NormSet(v, r, vg, math.sqrt(pnorm2), oneh, l2u, l2p)


# convergence study ----------------------------------------------------------------------------

@dataclass
class StudyResult:
    k: int
    levels: list
    errors: list  # NormSet per level
    rates: dict

    def table(self) -> str:
        keys = ("v_gamma", "v", "l2_u", "l2_p")
        lines = ["nx " + " ".join(f"{kk:>12s}" for kk in keys)]
        for nx, e in zip(self.levels, self.errors):
            d = e.as_dict()
            lines.append(f"{nx:<3d}" + " ".join(f"{d[kk]:12.4e}" for kk in keys))
        lines.append("rate " + " ".join(f"{self.rates[kk][-1]:10.3f}" for kk in keys))
        return "\n".join(lines)


def convergence_study(k: int = 2, levels: Sequence[int] = (4, 8, 16), re: float = 1.0,
                      gamma: float = 1e4, case: FlowCase | None = None,
                      precond: PreconditionerSpec | str | None = "GM") -> StudyResult:
    mu = 1.0 / re
    case = case or manufactured_case(mu)
    errs = []
    for nx in levels:
        res = solve_steady(case, generate_unit_square(nx), k, gamma, schedule=[re], precond=precond)
        errs.append(compute_norms(res.disc, res.state, gamma, mu, case.exact))
    rates = {}
    for key in NormSet.__dataclass_fields__:
        vals = [getattr(e, key) for e in errs]
        rates[key] = [
            math.log(a / b) / math.log(n2 / n1) if a > 0 and b > 0 else float("nan")
            for a, b, n1, n2 in zip(vals, vals[1:], levels, levels[1:])
        ]
    return StudyResult(k, list(levels), errs, rates)


# reports --------------------------------------------------------------------------------------

def reports_to_csv(reports: Sequence[SolveReport], timings: bool = True) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.row(timings))
    return buf.getvalue()


def reports_to_json(reports: Sequence[SolveReport], timings: bool = True) -> str:
    rows = []
    for r in reports:
        row = r.row(timings)
        row["re"] = r.re
        row["wall_seconds"] = float(row["wall_seconds"])
        rows.append(row)
    return json.dumps(rows, indent=2) + "\n"
