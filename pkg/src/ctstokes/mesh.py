"""Background triangulation, interior clipping, and barycentric refinement.

The computational mesh keeps exactly the background triangles whose closure
lies inside the physical domain.  Each retained macro triangle is split into
three micro triangles through its barycenter; the boundary edges of the
refined mesh coincide with those of the macro mesh and are organized into
oriented closed loops with outward normals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .geometry import LevelSetDomain, project_points

CLIP_TOL = 1e-12


class MeshError(RuntimeError):
    pass


def _edge_table(triangles: np.ndarray):
    """Unique undirected edges (lexicographic order) and per-edge triangle count.

    Returns (edges (E,2), tri_edges (T,3), counts (E,)).  tri_edges[t, k] is
    the edge opposite local vertex k of triangle t.
    """
    t = np.asarray(triangles)
    raw = np.concatenate([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=0)
    raw_sorted = np.sort(raw, axis=1)
    edges, inverse, counts = np.unique(raw_sorted, axis=0,
                                       return_inverse=True, return_counts=True)
    tri_edges = inverse.reshape(3, len(t)).T
    return edges, tri_edges, counts


class MacroMesh:
    """Triangulation with vertices, counterclockwise triangles, and edge table."""

    def __init__(self, vertices: np.ndarray, triangles: np.ndarray):
        self.vertices = np.asarray(vertices, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        self.edges, self.tri_edges, self.edge_counts = _edge_table(self.triangles)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def validate(self) -> None:
        if np.any(self.signed_areas() <= 0.0):
            raise MeshError("mesh contains a triangle with non-positive area")
        if np.any(self.edge_counts > 2):
            raise MeshError("non-manifold edge: more than two incident triangles")


def build_type1_mesh(n: int, box=(0.0, 0.0, 1.0, 1.0)) -> MacroMesh:
    """Uniform n x n grid on the box, each cell split along its SW-NE diagonal.

    Produces 2*n^2 triangles on (n+1)^2 vertices; the diagonal direction is
    fixed (lower-left to upper-right) so meshes are reproducible.
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    x0, y0, x1, y1 = box
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    I, J = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    i = I.ravel()
    j = J.ravel()
    v00 = vid(i, j)
    v10 = vid(i + 1, j)
    v01 = vid(i, j + 1)
    v11 = vid(i + 1, j + 1)
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    return MacroMesh(vertices, triangles)


# barycentric sample lattice (i+j+k = 4): 15 points used by the clip safety pass
_LATTICE = np.array([(i / 4.0, j / 4.0)
                     for i in range(5) for j in range(5 - i)])


def _classification_points(mesh: MacroMesh):
    """Sample points per triangle: 3 vertices, 3 midpoints, barycenter, lattice."""
    p = mesh.vertices[mesh.triangles]  # (T, 3, 2)
    v0, v1, v2 = p[:, 0], p[:, 1], p[:, 2]
    strict = np.stack([
        v0, v1, v2,
        0.5 * (v1 + v2), 0.5 * (v2 + v0), 0.5 * (v0 + v1),
        (v0 + v1 + v2) / 3.0,
    ], axis=1)
    lam1 = _LATTICE[:, 0]
    lam2 = _LATTICE[:, 1]
    lam0 = 1.0 - lam1 - lam2
    lattice = (lam0[None, :, None] * v0[:, None, :]
               + lam1[None, :, None] * v1[:, None, :]
               + lam2[None, :, None] * v2[:, None, :])
    return strict, lattice


def classify_interior(mesh: MacroMesh, dom: LevelSetDomain) -> np.ndarray:
    """Boolean mask of triangles whose closure lies inside the domain.

    A triangle is kept when phi <= 0 at its vertices, edge midpoints and
    barycenter, and phi <= CLIP_TOL on a 15-point barycentric lattice.  For
    smooth level sets resolved by the mesh this finite test is exact; a
    false keep perturbs the computational domain at cubic order in h.
    """
    strict, lattice = _classification_points(mesh)
    keep = np.all(np.asarray(dom.phi(strict)) <= 0.0, axis=1)
    keep &= np.all(np.asarray(dom.phi(lattice)) <= CLIP_TOL, axis=1)
    return keep


def clip_to_interior(bg: MacroMesh, dom: LevelSetDomain) -> MacroMesh:
    """Keep the triangles classified as interior and compact the vertex set."""
    keep = classify_interior(bg, dom)
    if not np.any(keep):
        raise MeshError("mesh too coarse for domain: no interior triangles")
    tris = bg.triangles[keep]
    used = np.unique(tris)
    remap = np.full(bg.n_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return MacroMesh(bg.vertices[used], remap[tris])


@dataclass
class BoundaryEdge:
    """Oriented boundary edge of the refined mesh.

    Loops run counterclockwise (positive enclosed area): the tangent points
    from vertex a to vertex b and the outward normal is the tangent rotated
    90 degrees clockwise.
    """

    a: int
    b: int
    tri: int           # owning micro triangle
    normal: np.ndarray
    tangent: np.ndarray
    length: float
    loop: int
    delta_e: Optional[float] = None


class CtMesh:
    """Barycentric refinement of a macro mesh (three micro triangles each)."""

    def __init__(self, macro: MacroMesh):
        self.macro = macro
        n_mv = macro.n_vertices
        bary = macro.vertices[macro.triangles].mean(axis=1)
        self.vertices = np.vstack([macro.vertices, bary])
        T = macro.n_triangles
        z = n_mv + np.arange(T)
        t = macro.triangles
        micro = np.empty((3 * T, 3), dtype=np.int64)
        micro[0::3] = np.column_stack([t[:, 0], t[:, 1], z])
        micro[1::3] = np.column_stack([t[:, 1], t[:, 2], z])
        micro[2::3] = np.column_stack([t[:, 2], t[:, 0], z])
        self.triangles = micro
        self.parent = np.repeat(np.arange(T), 3)
        self.n_macro_vertices = n_mv
        self.boundary_loops: List[List[BoundaryEdge]] = []
        self.boundary_edges: List[BoundaryEdge] = []

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def h_max(self) -> float:
        p = self.vertices[self.triangles]
        l0 = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        l1 = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        l2 = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        return float(np.max(np.stack([l0, l1, l2])))


def clough_tocher(mesh: MacroMesh) -> CtMesh:
    """Split every macro triangle through its barycenter and extract boundary loops."""
    ct = CtMesh(mesh)
    ct.boundary_loops = extract_boundary(ct)
    ct.boundary_edges = [e for loop in ct.boundary_loops for e in loop]
    return ct


def extract_boundary(ct: CtMesh) -> List[List[BoundaryEdge]]:
    """Oriented boundary loops of the refined mesh.

    Boundary edges are the micro edges with exactly one incident triangle
    (the barycentric spokes are always shared).  Each directed edge keeps the
    orientation induced by its counterclockwise owning triangle, which makes
    outer loops counterclockwise with outward normals to the right of travel.
    """
    tris = ct.triangles
    raw = np.concatenate([tris[:, [1, 2]], tris[:, [2, 0]], tris[:, [0, 1]]], axis=0)
    owner = np.tile(np.arange(len(tris)), 3)
    key = np.sort(raw, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("non-manifold boundary: an edge has more than two triangles")
    on_boundary = counts[inverse] == 1
    b_edges = raw[on_boundary]
    b_owner = owner[on_boundary]

    succ = {}
    for (a, b), t in zip(b_edges.tolist(), b_owner.tolist()):
        if a in succ:
            raise MeshError("non-manifold boundary vertex encountered")
        succ[a] = (b, t)

    loops: List[List[BoundaryEdge]] = []
    visited = set()
    for start in sorted(succ):
        if start in visited:
            continue
        loop: List[BoundaryEdge] = []
        a = start
        while True:
            b, t = succ[a]
            visited.add(a)
            pa, pb = ct.vertices[a], ct.vertices[b]
            tv = pb - pa
            length = float(np.linalg.norm(tv))
            tangent = tv / length
            normal = np.array([tangent[1], -tangent[0]])
            loop.append(BoundaryEdge(a=a, b=b, tri=t, normal=normal,
                                     tangent=tangent, length=length,
                                     loop=len(loops)))
            a = b
            if a == start:
                break
        loops.append(loop)
    return loops


@dataclass
class AssumptionReport:
    """Transfer-length diagnostic: per-edge max(delta)/h_e ratios."""

    ratios: np.ndarray
    max_ratio: float
    flagged: np.ndarray
    threshold: float


def check_assumption_a(ct: CtMesh, dom: LevelSetDomain, edge_points: np.ndarray,
                       threshold: float = 1.0) -> AssumptionReport:
    """Estimate max over boundary edges of (max transfer length)/(edge length).

    The per-edge max is sampled at the given quadrature points plus both
    endpoints; edges whose ratio exceeds the threshold are flagged.  The
    ratio is advisory: the method's stability theory assumes it is uniformly
    below one.
    """
    edges = ct.boundary_edges
    if not edges:
        raise MeshError("mesh has no boundary edges")
    q = np.asarray(edge_points, dtype=float)
    samples = np.concatenate([q, [0.0, 1.0]])
    pa = ct.vertices[[e.a for e in edges]]
    pb = ct.vertices[[e.b for e in edges]]
    pts = pa[:, None, :] + samples[None, :, None] * (pb - pa)[:, None, :]
    _, delta, _ = project_points(dom, pts.reshape(-1, 2))
    delta = delta.reshape(len(edges), -1)
    delta_e = delta.max(axis=1)
    h_e = np.array([e.length for e in edges])
    ratios = delta_e / h_e
    for e, d in zip(edges, delta_e):
        e.delta_e = float(d)
    return AssumptionReport(ratios=ratios, max_ratio=float(ratios.max()),
                            flagged=np.where(ratios > threshold)[0],
                            threshold=threshold)


def write_vtk(path, ct: CtMesh, point_data=None, cell_data=None,
              title="ctstokes mesh") -> None:
    """Write the refined mesh as legacy-ASCII VTK with optional data arrays.

    point_data maps names to arrays of shape (n_vertices,) or (n_vertices, 2)
    (vectors get a zero third component); cell_data maps names to arrays of
    shape (n_triangles,).
    """
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"{title}\n")
        f.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {ct.n_vertices} double\n")
        for x, y in ct.vertices:
            f.write(f"{x:.17g} {y:.17g} 0\n")
        f.write(f"CELLS {ct.n_triangles} {4 * ct.n_triangles}\n")
        for a, b, c in ct.triangles:
            f.write(f"3 {a} {b} {c}\n")
        f.write(f"CELL_TYPES {ct.n_triangles}\n")
        f.write("5\n" * ct.n_triangles)
        if point_data:
            f.write(f"POINT_DATA {ct.n_vertices}\n")
            for name, arr in point_data.items():
                arr = np.asarray(arr)
                if arr.ndim == 2:
                    f.write(f"VECTORS {name} double\n")
                    for row in arr:
                        f.write(f"{row[0]:.17g} {row[1]:.17g} 0\n")
                else:
                    f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                    for v in arr:
                        f.write(f"{v:.17g}\n")
        if cell_data:
            f.write(f"CELL_DATA {ct.n_triangles}\n")
            for name, arr in cell_data.items():
                f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for v in np.asarray(arr):
                    f.write(f"{v:.17g}\n")
