"""2D conforming triangular meshes with edge connectivity and periodic seams.

Supported domains: the unit square (0,1)^2, the L-shaped domain
(-1,1)^2 \\ [-1,0]^2, and the unit square with periodic identification of
opposite boundary edges (torus).  "Face" means edge throughout.

Meshes are immutable after construction: all arrays may be shared freely
between threads.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))
MIN_ANGLE_FLOOR_DEG = 20.0
_MATCH_TOL = 1e-12


class MeshError(Exception):
    """Structural mesh defect (non-manifold edge, unmatched seam face, ...)."""


@dataclass
class Mesh:
    domain: str
    vertices: np.ndarray          # (nv, 2)
    triangles: np.ndarray         # (nt, 3), positive orientation
    # connectivity, filled by compute_connectivity
    face_vertices: np.ndarray = None    # (nf, 2) vertex ids, canonical side
    face_cells: np.ndarray = None       # (nf, 2) adjacent cells, -1 if none
    face_local_edge: np.ndarray = None  # (nf, 2) local edge index per side
    face_normal: np.ndarray = None      # (nf, 2) unit normal, side1 -> side2
    face_tangent: np.ndarray = None     # (nf, 2) rot90(normal)
    face_length: np.ndarray = None      # (nf,)  h_f
    face_boundary: np.ndarray = None    # (nf,)  bool
    cell_areas: np.ndarray = None       # (nt,)
    cell_diameters: np.ndarray = None   # (nt,)  h_K
    # periodic identification
    vertex_class: np.ndarray = None     # (nv,) class index; identity classes if not periodic
    n_vertex_classes: int = 0
    periodic: bool = False
    _cell_jacobians: np.ndarray = field(default=None, repr=False)
    _cell_jac_dets: np.ndarray = field(default=None, repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.triangles)

    @property
    def n_faces(self) -> int:
        return len(self.face_vertices)

    @property
    def h_max(self) -> float:
        return float(self.cell_diameters.max())

    def cell_vertices(self, c: int) -> np.ndarray:
        return self.vertices[self.triangles[c]]

    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(~self.face_boundary)

    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_boundary)

    def min_angle_deg(self) -> float:
        return _min_angle_deg(self.vertices, self.triangles)

    def jacobians(self):
        """Affine maps reference -> physical: J[c] = [v1-v0 | v2-v0], det J."""
        if self._cell_jacobians is None:
            v = self.vertices[self.triangles]
            J = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            object.__setattr__(self, "_cell_jacobians", J)
            object.__setattr__(self, "_cell_jac_dets", det)
        return self._cell_jacobians, self._cell_jac_dets

    def face_side_endpoints(self, f: int, side: int):
        """Physical endpoints (start, end) of face f in side's own cell copy.

        The parametrization runs from the endpoint in the lower vertex class
        to the endpoint in the higher class, identically on both sides (for a
        periodic seam the two copies are translates of each other).
        """
        c = self.face_cells[f, side]
        le = self.face_local_edge[f, side]
        a, b = LOCAL_EDGES[le]
        va, vb = self.triangles[c, a], self.triangles[c, b]
        ca, cb = self.vertex_class[va], self.vertex_class[vb]
        if ca == cb:
            raise MeshError(f"degenerate identified face {f}: both endpoints in class {ca}")
        if ca < cb:
            return self.vertices[va], self.vertices[vb]
        return self.vertices[vb], self.vertices[va]


def generate_mesh(domain: str, n: int, style: str = "structured", seed: int = 0) -> Mesh:
    """Build a fully connected (and, for the torus, identified) mesh.

    ``n`` counts subdivisions per axis; structured unit-square meshes have
    2 n^2 triangles.  Unstructured meshes jitter the interior vertices with a
    seeded generator and retriangulate (Delaunay) on convex domains; the
    L-shape keeps the structured connectivity so no triangle can cross the
    reentrant notch.  Generation is deterministic for a fixed seed.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if domain not in ("unit_square", "lshape", "periodic_square"):
        raise ValueError(f"unknown domain {domain!r}")
    if style not in ("structured", "unstructured"):
        raise ValueError(f"unknown style {style!r}")
    if domain == "lshape" and n % 2 != 0:
        raise ValueError("lshape requires even n so the reentrant corner is a mesh vertex")

    if domain == "lshape":
        verts, tris = _lshape_grid(n)
        if style == "unstructured":
            verts = _jitter_fixed_topology(verts, tris, _lshape_boundary_mask(verts), n, seed)
    else:
        verts, tris = _square_grid(n)
        if style == "unstructured":
            verts, tris = _jitter_delaunay(verts, n, seed)

    tris = _orient_positive(verts, tris)
    mesh = Mesh(domain=domain, vertices=verts, triangles=tris)
    mesh = compute_connectivity(mesh)
    if domain == "periodic_square":
        mesh = apply_periodic_identification(mesh)
    _check_invariants(mesh, structured=(style == "structured"))
    return mesh


def compute_connectivity(mesh: Mesh) -> Mesh:
    """Fill the face table, normals/tangents, and cell metrics.

    Interior normals point from the first to the second adjacent triangle;
    boundary normals point outward.  Both are fixed once and reproducible.
    """
    verts, tris = mesh.vertices, mesh.triangles
    edge_map: dict[tuple[int, int], int] = {}
    fverts, fcells, fledge = [], [], []
    for c in range(len(tris)):
        for le, (a, b) in enumerate(LOCAL_EDGES):
            va, vb = int(tris[c, a]), int(tris[c, b])
            key = (min(va, vb), max(va, vb))
            f = edge_map.get(key)
            if f is None:
                edge_map[key] = len(fverts)
                fverts.append([va, vb])
                fcells.append([c, -1])
                fledge.append([le, -1])
            else:
                if fcells[f][1] != -1:
                    raise MeshError(f"non-manifold edge {key}: more than 2 adjacent triangles")
                fcells[f][1] = c
                fledge[f][1] = le

    fverts = np.asarray(fverts, dtype=np.int64)
    fcells = np.asarray(fcells, dtype=np.int64)
    fledge = np.asarray(fledge, dtype=np.int64)
    boundary = fcells[:, 1] < 0

    p0 = verts[fverts[:, 0]]
    p1 = verts[fverts[:, 1]]
    dvec = p1 - p0
    length = np.linalg.norm(dvec, axis=1)
    # normal = rotate edge direction by -90 deg, then flip so it leaves cell 1
    nrm = np.column_stack([dvec[:, 1], -dvec[:, 0]]) / length[:, None]
    centroids = verts[tris].mean(axis=1)
    mid = 0.5 * (p0 + p1)
    outward = np.einsum("fd,fd->f", nrm, mid - centroids[fcells[:, 0]])
    nrm[outward < 0] *= -1.0
    tangent = np.column_stack([-nrm[:, 1], nrm[:, 0]])

    v = verts[tris]
    e01 = v[:, 1] - v[:, 0]
    e12 = v[:, 2] - v[:, 1]
    e20 = v[:, 0] - v[:, 2]
    areas = 0.5 * (e01[:, 0] * (-e20[:, 1]) - e01[:, 1] * (-e20[:, 0]))
    diam = np.maximum(np.linalg.norm(e01, axis=1),
                      np.maximum(np.linalg.norm(e12, axis=1), np.linalg.norm(e20, axis=1)))

    return Mesh(
        domain=mesh.domain,
        vertices=verts,
        triangles=tris,
        face_vertices=fverts,
        face_cells=fcells,
        face_local_edge=fledge,
        face_normal=nrm,
        face_tangent=tangent,
        face_length=length,
        face_boundary=boundary,
        cell_areas=areas,
        cell_diameters=diam,
        vertex_class=np.arange(len(verts), dtype=np.int64),
        n_vertex_classes=len(verts),
        periodic=False,
    )


def apply_periodic_identification(mesh: Mesh) -> Mesh:
    """Pair opposite boundary faces of the unit square into a torus.

    Paired faces become interior (side 1 = left/bottom copy); vertices are
    merged into identification classes used for dof unification downstream.
    """
    verts = mesh.vertices

    parent = np.arange(len(verts), dtype=np.int64)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    on = lambda coord, val: np.abs(verts[:, coord] - val) < _MATCH_TOL
    for coord in (0, 1):
        lo = np.flatnonzero(on(coord, 0.0))
        hi = np.flatnonzero(on(coord, 1.0))
        other = 1 - coord
        lo_sorted = lo[np.argsort(verts[lo, other])]
        hi_sorted = hi[np.argsort(verts[hi, other])]
        if len(lo_sorted) != len(hi_sorted):
            raise MeshError("periodic seam vertex counts differ")
        if np.max(np.abs(verts[lo_sorted, other] - verts[hi_sorted, other])) > _MATCH_TOL:
            raise MeshError("periodic seam vertices do not match under translation")
        for i, j in zip(lo_sorted, hi_sorted):
            union(int(i), int(j))

    rep = np.array([find(i) for i in range(len(verts))], dtype=np.int64)
    _, vclass = np.unique(rep, return_inverse=True)

    # pair boundary faces: key = sorted class pair (each seam pair is unique)
    bfaces = np.flatnonzero(mesh.face_boundary)
    by_key: dict[tuple[int, int], list[int]] = {}
    for f in bfaces:
        a, b = mesh.face_vertices[f]
        key = tuple(sorted((int(vclass[a]), int(vclass[b]))))
        by_key.setdefault(key, []).append(int(f))

    drop = np.zeros(mesh.n_faces, dtype=bool)
    fcells = mesh.face_cells.copy()
    fledge = mesh.face_local_edge.copy()
    fbound = mesh.face_boundary.copy()
    for key, fl in by_key.items():
        if len(fl) != 2:
            raise MeshError(f"unmatched periodic boundary face with class pair {key}")
        f1, f2 = fl
        # keep the left/bottom copy as side 1
        mid1 = verts[mesh.face_vertices[f1]].mean(axis=0)
        mid2 = verts[mesh.face_vertices[f2]].mean(axis=0)
        if tuple(mid2) < tuple(mid1):
            f1, f2 = f2, f1
        shift = verts[mesh.face_vertices[f2]].mean(axis=0) - verts[mesh.face_vertices[f1]].mean(axis=0)
        res = _seam_translation_residual(mesh, f1, f2, shift, vclass)
        if res > _MATCH_TOL:
            raise MeshError(f"periodic faces {f1},{f2} mismatch by {res:.2e}")
        fcells[f1, 1] = mesh.face_cells[f2, 0]
        fledge[f1, 1] = mesh.face_local_edge[f2, 0]
        fbound[f1] = False
        drop[f2] = True

    keep = ~drop
    return Mesh(
        domain=mesh.domain,
        vertices=verts,
        triangles=mesh.triangles,
        face_vertices=mesh.face_vertices[keep],
        face_cells=fcells[keep],
        face_local_edge=fledge[keep],
        face_normal=mesh.face_normal[keep],
        face_tangent=mesh.face_tangent[keep],
        face_length=mesh.face_length[keep],
        face_boundary=fbound[keep],
        cell_areas=mesh.cell_areas,
        cell_diameters=mesh.cell_diameters,
        vertex_class=vclass,
        n_vertex_classes=int(vclass.max()) + 1,
        periodic=True,
    )


def domain_area(domain: str) -> float:
    return {"unit_square": 1.0, "periodic_square": 1.0, "lshape": 3.0}[domain]


def write_mesh(mesh: Mesh, path: str) -> None:
    """Dump the mesh as plain text.

    Header lines start with '#'; sections: vertices (x y), triangles
    (v0 v1 v2), faces (v0 v1 cell0 cell1 boundary).
    """
    with open(path, "w") as fh:
        fh.write(f"# mhdfem mesh domain={mesh.domain} periodic={int(mesh.periodic)}\n")
        fh.write(f"# vertices {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        fh.write(f"# triangles {mesh.n_cells}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")
        fh.write(f"# faces {mesh.n_faces}\n")
        for f in range(mesh.n_faces):
            a, b = mesh.face_vertices[f]
            c0, c1 = mesh.face_cells[f]
            fh.write(f"{a} {b} {c0} {c1} {int(mesh.face_boundary[f])}\n")


# ---------------------------------------------------------------------------
# generation helpers


def _square_grid(n: int):
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    vid = np.arange((n + 1) * (n + 1)).reshape(n + 1, n + 1)
    tris = []
    for i in range(n):
        for j in range(n):
            v00, v10 = vid[i, j], vid[i + 1, j]
            v01, v11 = vid[i, j + 1], vid[i + 1, j + 1]
            tris.append([v00, v10, v11])
            tris.append([v00, v11, v01])
    return verts, np.asarray(tris, dtype=np.int64)


def _lshape_grid(n: int):
    xs = np.linspace(-1.0, 1.0, n + 1)
    vid = -np.ones((n + 1, n + 1), dtype=np.int64)
    verts = []
    tris = []

    def keep_cell(i, j):
        # exclude cells fully inside the removed quadrant [-1,0]^2
        return not (xs[i + 1] <= 0.0 + 1e-14 and xs[j + 1] <= 0.0 + 1e-14)

    def vertex(i, j):
        if vid[i, j] < 0:
            vid[i, j] = len(verts)
            verts.append([xs[i], xs[j]])
        return vid[i, j]

    for i in range(n):
        for j in range(n):
            if not keep_cell(i, j):
                continue
            v00, v10 = vertex(i, j), vertex(i + 1, j)
            v01, v11 = vertex(i, j + 1), vertex(i + 1, j + 1)
            tris.append([v00, v10, v11])
            tris.append([v00, v11, v01])
    return np.asarray(verts, dtype=float), np.asarray(tris, dtype=np.int64)


def _lshape_boundary_mask(verts: np.ndarray) -> np.ndarray:
    x, y = verts[:, 0], verts[:, 1]
    outer = (np.abs(np.abs(x) - 1.0) < 1e-14) | (np.abs(np.abs(y) - 1.0) < 1e-14)
    notch = ((np.abs(x) < 1e-14) & (y <= 1e-14)) | ((np.abs(y) < 1e-14) & (x <= 1e-14))
    return outer | notch


def _orient_positive(verts: np.ndarray, tris: np.ndarray) -> np.ndarray:
    v = verts[tris]
    cross = ((v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1])
             - (v[:, 1, 1] - v[:, 0, 1]) * (v[:, 2, 0] - v[:, 0, 0]))
    flip = cross < 0
    out = tris.copy()
    out[flip] = out[flip][:, [0, 2, 1]]
    return out


def _min_angle_deg(verts: np.ndarray, tris: np.ndarray) -> float:
    v = verts[tris]
    angles = []
    for k in range(3):
        a = v[:, (k + 1) % 3] - v[:, k]
        b = v[:, (k + 2) % 3] - v[:, k]
        cosang = np.einsum("td,td->t", a, b) / (
            np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
    return float(np.min(angles))


def _jitter_delaunay(verts: np.ndarray, n: int, seed: int):
    """Jitter interior vertices, Delaunay-retriangulate; retry to the angle floor."""
    interior = ~(
        (np.abs(verts[:, 0]) < 1e-14) | (np.abs(verts[:, 0] - 1.0) < 1e-14)
        | (np.abs(verts[:, 1]) < 1e-14) | (np.abs(verts[:, 1] - 1.0) < 1e-14)
    )
    h = 1.0 / n
    rng = np.random.default_rng(seed)
    amplitude = 0.25 * h
    for _ in range(50):
        pts = verts.copy()
        pts[interior] += rng.uniform(-amplitude, amplitude, size=(interior.sum(), 2))
        pts[interior] = np.clip(pts[interior], 0.05 * h, 1.0 - 0.05 * h)
        tri = Delaunay(pts)
        cells = _orient_positive(pts, tri.simplices.astype(np.int64))
        if _min_angle_deg(pts, cells) >= MIN_ANGLE_FLOOR_DEG:
            return pts, cells
        amplitude *= 0.7
    raise MeshError(f"unstructured generation failed the {MIN_ANGLE_FLOOR_DEG} deg floor")


def _jitter_fixed_topology(verts, tris, boundary_mask, n, seed):
    """Jitter interior vertices keeping the structured connectivity (L-shape)."""
    h = 2.0 / n
    rng = np.random.default_rng(seed)
    amplitude = 0.2 * h
    for _ in range(50):
        pts = verts.copy()
        free = ~boundary_mask
        pts[free] += rng.uniform(-amplitude, amplitude, size=(free.sum(), 2))
        if _min_angle_deg(pts, tris) >= MIN_ANGLE_FLOOR_DEG:
            return pts
        amplitude *= 0.7
    raise MeshError(f"unstructured generation failed the {MIN_ANGLE_FLOOR_DEG} deg floor")


def _seam_translation_residual(mesh, f1, f2, shift, vclass):
    """Max endpoint distance between face f2 and face f1 translated by shift."""
    p1 = mesh.vertices[mesh.face_vertices[f1]] + shift
    p2 = mesh.vertices[mesh.face_vertices[f2]]
    d_direct = max(np.linalg.norm(p1[0] - p2[0]), np.linalg.norm(p1[1] - p2[1]))
    d_swapped = max(np.linalg.norm(p1[0] - p2[1]), np.linalg.norm(p1[1] - p2[0]))
    return min(d_direct, d_swapped)


def _check_invariants(mesh: Mesh, structured: bool = True) -> None:
    if np.any(mesh.cell_areas <= 0):
        raise MeshError("triangle with non-positive area")
    area = mesh.cell_areas.sum()
    ref = domain_area(mesh.domain)
    if abs(area - ref) > 1e-12 * ref:
        raise MeshError(f"mesh area {area} != domain area {ref}")
    n_adj = (mesh.face_cells >= 0).sum(axis=1)
    if mesh.periodic:
        if np.any(n_adj != 2):
            raise MeshError("torus has a face without exactly 2 adjacent triangles")
    else:
        if np.any(n_adj[~mesh.face_boundary] != 2) or np.any(n_adj[mesh.face_boundary] != 1):
            raise MeshError("face adjacency count broken")
    if structured:
        ratio = mesh.cell_diameters.max() / mesh.cell_diameters.min()
        if ratio > 4.0 + 1e-9:
            raise MeshError(f"quasi-uniformity violated: h ratio {ratio:.3f}")
