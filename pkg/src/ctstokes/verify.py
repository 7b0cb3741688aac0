"""Manufactured solutions, error norms, and convergence studies.

Errors are measured over the computational domain: L2 and H1-seminorm
velocity errors, the L2 pressure error after subtracting each field's mean,
the max-norm of the discrete divergence (sampled at micro-triangle vertices,
where the per-element linear divergence attains its extremes), and a
weighted boundary-norm diagnostic comparing the multiplier with the
mean-adjusted trace interpolant of the exact pressure.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import assembly as asm
from .assembly import (BoundaryQuadData, SystemBlocks, assemble_blocks,
                       assemble_rhs, build_boundary_data, compose_system,
                       gram_h1_velocity, gram_multiplier, gram_pressure_mass)
from .fem import (DofLayout, build_dof_layout, edge_rule, element_maps,
                  eval_p1, eval_p2, physical_gradients, triangle_rule)
from .geometry import LevelSetDomain, circle_domain, star_domain
from .mesh import (AssumptionReport, CtMesh, build_type1_mesh,
                   check_assumption_a, clip_to_interior, clough_tocher)
from .solver import SolutionFields, solve_direct

ERROR_QUAD_DEGREE = 8


@dataclass(frozen=True)
class ManufacturedCase:
    """Closed-form Stokes solution with derived data.

    u maps (..., 2) points to velocities (..., 2); grad_u to (..., 2, 2)
    arrays of du_i/dx_j; p to scalars; f = -nu*lap(u) + grad(p).  The
    velocity must be divergence free.
    """

    name: str
    nu: float
    u: Callable
    grad_u: Callable
    p: Callable
    f: Callable


def paper_case(nu: float) -> ManufacturedCase:
    """Quartic-pressure test solution on the unit square.

    u = (2*psi*(2y - 1), -2*psi*(2x - 1)) with psi = (x-1/2)^2 + (y-1/2)^2 - 1/4,
    p = 10*(x^2 - y^2)^2; the velocity is the rotated gradient of psi^2 and
    does not vanish on the physical boundary, so the non-homogeneous
    transfer path is exercised.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")

    def psi(x, y):
        return x * x - x + 0.25 + y * y - y

    def u(pts):
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        ps = psi(x, y)
        return np.stack([2.0 * ps * (2.0 * y - 1.0),
                         -2.0 * ps * (2.0 * x - 1.0)], axis=-1)

    def grad_u(pts):
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        ps = psi(x, y)
        g = np.empty(pts.shape[:-1] + (2, 2))
        g[..., 0, 0] = 2.0 * (2.0 * x - 1.0) * (2.0 * y - 1.0)
        g[..., 0, 1] = 2.0 * (2.0 * y - 1.0) ** 2 + 4.0 * ps
        g[..., 1, 0] = -2.0 * (2.0 * x - 1.0) ** 2 - 4.0 * ps
        g[..., 1, 1] = -2.0 * (2.0 * y - 1.0) * (2.0 * x - 1.0)
        return g

    def p(pts):
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        return 10.0 * (x * x - y * y) ** 2

    def f(pts):
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        lap1 = 16.0 * (2.0 * y - 1.0)
        lap2 = -16.0 * (2.0 * x - 1.0)
        px = 40.0 * x * (x * x - y * y)
        py = -40.0 * y * (x * x - y * y)
        return np.stack([-nu * lap1 + px, -nu * lap2 + py], axis=-1)

    return ManufacturedCase(name="quartic-pressure", nu=nu, u=u,
                            grad_u=grad_u, p=p, f=f)


def patch_case(nu: float) -> ManufacturedCase:
    """Quadratic divergence-free velocity with affine pressure.

    u = (3y^2, -3x^2) (the rotated gradient of x^3 + y^3) and
    p = 2x - 3y + 0.7.  The boundary correction operator is exact on
    quadratics, so the discrete solution must reproduce this case to solver
    precision on any admissible mesh.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")

    def u(pts):
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        return np.stack([3.0 * y * y, -3.0 * x * x], axis=-1)

    def grad_u(pts):
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        g = np.zeros(pts.shape[:-1] + (2, 2))
        g[..., 0, 1] = 6.0 * y
        g[..., 1, 0] = -6.0 * x
        return g

    def p(pts):
        pts = np.asarray(pts, dtype=float)
        return 2.0 * pts[..., 0] - 3.0 * pts[..., 1] + 0.7

    def f(pts):
        pts = np.asarray(pts, dtype=float)
        out = np.empty_like(pts)
        out[..., 0] = -6.0 * nu + 2.0
        out[..., 1] = 6.0 * nu - 3.0
        return out

    return ManufacturedCase(name="quadratic-patch", nu=nu, u=u,
                            grad_u=grad_u, p=p, f=f)


@dataclass
class ErrorReport:
    """Computed error norms and run diagnostics for a single solve."""

    n: int
    h: float
    nu: float
    sigma: float
    dofs: int
    l2_u: float
    h1_u: float
    l2_p: float
    linf_div: float
    lam_diag: float
    max_delta_ratio: float
    residual: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("n", "h", "nu", "sigma", "dofs", "l2_u", "h1_u", "l2_p",
                 "linf_div", "lam_diag", "max_delta_ratio", "residual")}


def _divergence_at_vertices(ct: CtMesh, layout: DofLayout, u: np.ndarray) -> np.ndarray:
    """|div u_h| sampled at the three vertices of every micro triangle."""
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    J, det, inv, invT = element_maps(ct)
    basis = eval_p2(verts)
    G = physical_gradients(basis.grads, invT)           # (M, 3, 6, 2)
    coeffs = u[2 * layout.elem_nodes[:, :, None] + np.arange(2)]
    div = np.einsum("mqnc,mnc->mq", G, coeffs)
    return np.abs(div)


def multiplier_values_on_edges(layout: DofLayout, bqd: BoundaryQuadData,
                               lam: np.ndarray) -> np.ndarray:
    """Multiplier field at the boundary quadrature points, shape (B, Q)."""
    return np.einsum("qm,bm->bq", bqd.mu, lam[bqd.edge_mult])


def compute_errors(sol: SolutionFields, case: ManufacturedCase, ct: CtMesh,
                   layout: DofLayout, bqd: BoundaryQuadData,
                   n: int = 0, sigma: float = 0.0,
                   max_delta_ratio: float = float("nan")) -> ErrorReport:
    """Error norms of a discrete solution against the manufactured fields."""
    rule = triangle_rule(ERROR_QUAD_DEGREE)
    J, det, inv, invT = element_maps(ct)
    basis = eval_p2(rule.points)
    p1 = eval_p1(rule.points)
    corners = ct.vertices[ct.triangles]
    pts = np.einsum("qk,mkc->mqc", p1.vals, corners)
    w = rule.weights

    coeffs = sol.u[2 * layout.elem_nodes[:, :, None] + np.arange(2)]
    uh = np.einsum("qn,mnc->mqc", basis.vals, coeffs)
    G = physical_gradients(basis.grads, invT)
    guh = np.einsum("mqnd,mnc->mqcd", G, coeffs)

    du = uh - np.asarray(case.u(pts))
    dgu = guh - np.asarray(case.grad_u(pts))
    l2_u = math.sqrt(float(np.einsum("q,m,mqc,mqc->", w, det, du, du)))
    h1_u = math.sqrt(float(np.einsum("q,m,mqcd,mqcd->", w, det, dgu, dgu)))

    area = 0.5 * float(det.sum())
    ph = np.einsum("qk,mk->mq", p1.vals, sol.p.reshape(-1, 3))
    pex = np.asarray(case.p(pts))
    mean_h = float(np.einsum("q,m,mq->", w, det, ph)) / area
    mean_ex = float(np.einsum("q,m,mq->", w, det, pex)) / area
    dp = (ph - mean_h) - (pex - mean_ex)
    l2_p = math.sqrt(float(np.einsum("q,m,mq,mq->", w, det, dp, dp)))

    linf_div = float(_divergence_at_vertices(ct, layout, sol.u).max())

    # multiplier diagnostic: weighted boundary norm against the trace
    # interpolant of the exact pressure, both mean-adjusted
    mu_coeff = np.asarray(case.p(layout.mult_coords))
    bound_len = float(bqd.ds.sum())
    lam_h = sol.lam
    vals_mu = multiplier_values_on_edges(layout, bqd, mu_coeff)
    vals_lam = multiplier_values_on_edges(layout, bqd, lam_h)
    mean_mu = float(np.sum(bqd.ds * vals_mu)) / bound_len
    mean_lam = float(np.sum(bqd.ds * vals_lam)) / bound_len
    diff = (vals_lam - mean_lam) - (vals_mu - mean_mu)
    lam_diag = math.sqrt(float(np.sum(bqd.ds * bqd.lengths[:, None] * diff ** 2)))

    return ErrorReport(n=n, h=(1.0 / n if n else float("nan")), nu=case.nu,
                       sigma=sigma, dofs=layout.n_total, l2_u=l2_u, h1_u=h1_u,
                       l2_p=l2_p, linf_div=linf_div, lam_diag=lam_diag,
                       max_delta_ratio=max_delta_ratio, residual=sol.residual)


@dataclass
class LevelStructure:
    """Mesh-level data reused across viscosities at a fixed refinement."""

    n: int
    dom: LevelSetDomain
    ct: CtMesh
    layout: DofLayout
    bqd: BoundaryQuadData
    blocks: SystemBlocks
    assumption: AssumptionReport
    sigma: float
    vol_rule: object


def build_level(dom: LevelSetDomain, n: int, sigma: float,
                quad_volume: int = asm.DEFAULT_VOLUME_DEGREE,
                quad_edge: int = asm.DEFAULT_EDGE_POINTS,
                parallel: bool = False) -> LevelStructure:
    """Build mesh, layout, boundary data and viscosity-free blocks for one level."""
    bg = build_type1_mesh(n, dom.bounding_box)
    macro = clip_to_interior(bg, dom)
    ct = clough_tocher(macro)
    layout = build_dof_layout(ct)
    erule = edge_rule(quad_edge)
    vrule = triangle_rule(quad_volume)
    bqd = build_boundary_data(ct, layout, dom, erule)
    blocks = assemble_blocks(ct, layout, bqd, sigma, vrule, parallel=parallel)
    assumption = check_assumption_a(ct, dom, erule.points)
    return LevelStructure(n=n, dom=dom, ct=ct, layout=layout, bqd=bqd,
                          blocks=blocks, assumption=assumption, sigma=sigma,
                          vol_rule=vrule)


def solve_on_level(level: LevelStructure, case: ManufacturedCase):
    """Assemble the rhs for the case, solve, and compute the error report."""
    rhs = assemble_rhs(case.f, case.u, level.ct, level.layout, level.bqd,
                       case.nu, level.sigma, level.vol_rule)
    system = compose_system(level.blocks, level.layout, case.nu, rhs)
    sol = solve_direct(system)
    report = compute_errors(sol, case, level.ct, level.layout, level.bqd,
                            n=level.n, sigma=level.sigma,
                            max_delta_ratio=level.assumption.max_ratio)
    return sol, report


ERROR_COLUMNS = ("l2_u", "h1_u", "l2_p", "linf_div")


@dataclass
class RateTable:
    """Error reports over a refinement sequence with observed rates.

    Rates are log2 ratios of consecutive errors and are only meaningful for
    levels that halve the mesh size.
    """

    nu: float
    sigma: float
    domain: str
    reports: List[ErrorReport] = field(default_factory=list)

    def rates(self) -> Dict[str, List[float]]:
        out = {}
        for col in ERROR_COLUMNS:
            vals = [getattr(r, col) for r in self.reports]
            out[col] = [math.log2(vals[i] / vals[i + 1])
                        if vals[i] > 0 and vals[i + 1] > 0 else float("nan")
                        for i in range(len(vals) - 1)]
        return out

    def write_csv(self, path) -> None:
        rates = self.rates()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "h", "dofs", "l2_u", "h1_u", "l2_p",
                             "linf_div", "max_delta_ratio",
                             "rate_l2_u", "rate_h1_u", "rate_l2_p"])
            for i, r in enumerate(self.reports):
                row = [r.n, f"{r.h:.17g}", r.dofs]
                row += [f"{getattr(r, c):.12e}" for c in
                        ("l2_u", "h1_u", "l2_p", "linf_div", "max_delta_ratio")]
                for col in ("l2_u", "h1_u", "l2_p"):
                    row.append(f"{rates[col][i - 1]:.4f}" if i > 0 else "")
                writer.writerow(row)

    def as_dict(self) -> dict:
        return {"nu": self.nu, "sigma": self.sigma, "domain": self.domain,
                "runs": [r.as_dict() for r in self.reports],
                "rates": self.rates()}


def run_convergence(dom: LevelSetDomain, levels: Sequence[int],
                    nus: Sequence[float], sigma: float,
                    case_factory: Callable[[float], ManufacturedCase] = paper_case,
                    quad_volume: int = asm.DEFAULT_VOLUME_DEGREE,
                    quad_edge: int = asm.DEFAULT_EDGE_POINTS,
                    parallel: bool = False,
                    progress: Optional[Callable[[str], None]] = None
                    ) -> Dict[float, RateTable]:
    """Full refinement study: one RateTable per viscosity.

    Levels should be increasing (rates assume each step halves h).  The mesh
    and the viscosity-independent blocks are built once per level and shared
    across viscosities.
    """
    levels = list(levels)
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be strictly increasing")
    tables = {nu: RateTable(nu=nu, sigma=sigma, domain=dom.name) for nu in nus}
    for n in levels:
        try:
            level = build_level(dom, n, sigma, quad_volume, quad_edge, parallel)
        except Exception as exc:
            raise RuntimeError(f"level n={n} failed during setup: {exc}") from exc
        for nu in nus:
            try:
                _, report = solve_on_level(level, case_factory(nu))
            except Exception as exc:
                raise RuntimeError(f"level n={n}, nu={nu} failed: {exc}") from exc
            tables[nu].reports.append(report)
            if progress is not None:
                progress(f"n={n} nu={nu:g}: l2_u={report.l2_u:.4e} "
                         f"h1_u={report.h1_u:.4e} l2_p={report.l2_p:.4e} "
                         f"div={report.linf_div:.2e}")
    return tables


def write_json(path, tables: Dict[float, RateTable]) -> None:
    payload = {f"{nu:g}": table.as_dict() for nu, table in sorted(tables.items())}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


MAX_DENSE_DOFS = 9000


def infsup_estimate(ct: CtMesh, layout: DofLayout, bqd: BoundaryQuadData,
                    include_multiplier: bool = True) -> float:
    """Numeric inf-sup constant of the continuity pairing (dense, small meshes).

    Computes the smallest generalized singular value of the constraint block
    against the mesh-dependent H1 norm on the velocity side and the natural
    product norm on the pressure/multiplier side, restricted to the
    mean-zero (and flux-zero) subspaces.  With include_multiplier=False the
    velocity space is restricted to functions vanishing on the mesh boundary
    and only the pressure block is kept, which is the plain Stokes-pair
    stability constant.  Reported as a diagnostic; no bound is asserted.
    """
    if layout.n_total > MAX_DENSE_DOFS:
        raise ValueError(f"mesh too large for dense inf-sup estimate "
                         f"({layout.n_total} > {MAX_DENSE_DOFS} dofs)")
    B_div, B_lam = asm.assemble_b(ct, layout, bqd)
    m_q, m_mu, c_n = asm.assemble_constraints(ct, layout, bqd)
    Mp = gram_pressure_mass(ct, layout).toarray()

    if include_multiplier:
        X = gram_h1_velocity(ct, layout, bqd).toarray()
        Ml = gram_multiplier(layout, bqd).toarray()
        B = np.vstack([B_div.toarray(), B_lam.toarray()])
        Y = scipy.linalg.block_diag(Mp, Ml)
        Zv = scipy.linalg.null_space(c_n[None, :])
        Zy = scipy.linalg.null_space(
            np.block([[m_q[None, :], np.zeros((1, layout.n_lam))],
                      [np.zeros((1, layout.n_p)), m_mu[None, :]]]))
    else:
        # interior velocity subspace: zero every dof on a boundary node
        bnodes = set()
        for e in ct.boundary_edges:
            bnodes.add(e.a)
            bnodes.add(e.b)
        edge_mid = {tuple(sorted((e.a, e.b))) for e in ct.boundary_edges}
        mask = np.ones(layout.n_u, dtype=bool)
        for node in bnodes:
            mask[2 * node] = mask[2 * node + 1] = False
        for k, (ea, eb) in enumerate(layout.edges):
            if (ea, eb) in edge_mid:
                node = layout.n_mvert + k
                mask[2 * node] = mask[2 * node + 1] = False
        keep = np.where(mask)[0]
        J, det, inv, invT = element_maps(ct)
        vrule = triangle_rule(asm.DEFAULT_VOLUME_DEGREE)
        basis = eval_p2(vrule.points)
        G = physical_gradients(basis.grads, invT)
        Ke = np.einsum("q,m,mqic,mqjc->mij", vrule.weights, det, G, G)
        r, c, d = asm._velocity_block_triplets(layout.elem_nodes,
                                               layout.elem_nodes, Ke)
        X = sp.coo_matrix((d, (r, c)),
                          shape=(layout.n_u, layout.n_u)).toarray()[np.ix_(keep, keep)]
        B = B_div.toarray()[:, keep]
        Y = Mp
        Zv = np.eye(len(keep))
        Zy = scipy.linalg.null_space(m_q[None, :])

    Xr = Zv.T @ X @ Zv
    Br = Zy.T @ (B @ Zv)
    Yr = Zy.T @ Y @ Zy
    S = Br @ scipy.linalg.solve(Xr, Br.T, assume_a="pos")
    w = scipy.linalg.eigh(S, Yr, eigvals_only=True)
    return float(np.sqrt(max(w[0], 0.0)))
