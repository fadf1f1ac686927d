"""Discrete spaces: Nedelec second kind (H(curl)) and continuous Lagrange.

The H(curl) space of degree k is the full vector polynomial space P_k^2 per
triangle with tangentially continuous traces.  Degrees of freedom are edge
tangential moments against shifted Legendre polynomials on the globally
oriented edge (orientation: low vertex class -> high vertex class) plus, for
k = 2, three interior moments.  The Lagrange space of degree d uses vertex
values, edge moments against P_{d-2}, and (for d = 3) the cell mean.  This
moment-based dof choice makes the interpolation operators commute with the
gradient.

Basis functions are constructed per edge-orientation variant as the dual
basis of the reference-element dof functionals and mapped covariantly
(values v = J^{-T} v_ref, curls scaled by 1/det J), which preserves edge
tangential moments exactly.  All spaces are immutable after build and
evaluation is reentrant.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .mesh import LOCAL_EDGES, Mesh, MeshError
from .quadrature import edge_rule, triangle_rule

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

HCURL = "hcurl_nedelec2"
H1 = "h1_lagrange"


def _scalar_monomials(k: int):
    return [(i, d - i) for d in range(k + 1) for i in range(d + 1)]


def _mono_table(monos, pts):
    """Values and first derivatives of scalar monomials at pts (npts, 2)."""
    x, y = pts[:, 0], pts[:, 1]
    n, npts = len(monos), len(pts)
    S = np.empty((n, npts))
    Sx = np.zeros((n, npts))
    Sy = np.zeros((n, npts))
    for m, (i, j) in enumerate(monos):
        S[m] = x**i * y**j
        if i > 0:
            Sx[m] = i * x ** (i - 1) * y**j
        if j > 0:
            Sy[m] = j * x**i * y ** (j - 1)
    return S, Sx, Sy


def _legendre01(q: int, s: np.ndarray) -> np.ndarray:
    if q == 0:
        return np.ones_like(s)
    if q == 1:
        return 2.0 * s - 1.0
    if q == 2:
        return 6.0 * s * s - 6.0 * s + 1.0
    raise ValueError(f"edge moment degree {q} not supported")


def _ref_edge_param(local_edge: int, flip: int, s: np.ndarray):
    """Reference coordinates and (oriented) edge vector for parameter s."""
    a, b = LOCAL_EDGES[local_edge]
    A, B = (REF_VERTICES[a], REF_VERTICES[b]) if not flip else (REF_VERTICES[b], REF_VERTICES[a])
    pts = A[None, :] + s[:, None] * (B - A)[None, :]
    return pts, B - A


@lru_cache(maxsize=None)
def _hcurl_reference(k: int):
    """Dual-basis coefficient matrices for the 8 edge-orientation variants.

    Returns (monos, Cmat) with Cmat shape (8, 2*nms, nloc): column i of
    Cmat[o] holds the vector-monomial coefficients of basis function i
    ((x-component coefficients, then y-component)).
    """
    monos = _scalar_monomials(k)
    nms = len(monos)
    nloc = 3 * (k + 1) + (3 if k == 2 else 0)
    erule = edge_rule(2 * k + 2)
    trule = triangle_rule(2 * k + 2)
    Tpts, Tw = trule.points, trule.weights
    S_tri, _, _ = _mono_table(monos, Tpts)

    Cmat = np.empty((8, 2 * nms, nloc))
    for variant in range(8):
        rows = []
        for e in range(3):
            flip = (variant >> e) & 1
            pts, ev = _ref_edge_param(e, flip, erule.points)
            S, _, _ = _mono_table(monos, pts)
            for q in range(k + 1):
                P = _legendre01(q, erule.points)
                row = np.empty(2 * nms)
                row[:nms] = (S * (erule.weights * P)).sum(axis=1) * ev[0]
                row[nms:] = (S * (erule.weights * P)).sum(axis=1) * ev[1]
                rows.append(row)
        if k == 2:
            # interior moments against (1,0), (0,1), (x,y): each has constant
            # divergence and edgewise-linear normal trace, which makes the
            # interpolant commute with the gradient also on non-polynomial data
            for g in (np.array([1.0, 0.0]) * np.ones_like(Tpts),
                      np.array([0.0, 1.0]) * np.ones_like(Tpts),
                      Tpts):
                row = np.empty(2 * nms)
                row[:nms] = (S_tri * (Tw * g[:, 0])).sum(axis=1)
                row[nms:] = (S_tri * (Tw * g[:, 1])).sum(axis=1)
                rows.append(row)
        V = np.asarray(rows)
        if V.shape != (2 * nms, 2 * nms):
            raise AssertionError("hcurl dof count mismatch")
        Cmat[variant] = np.linalg.inv(V)
    return monos, Cmat


@lru_cache(maxsize=None)
def _lagrange_reference(d: int):
    """Dual-basis coefficients for Lagrange degree d, per orientation variant."""
    monos = _scalar_monomials(d)
    nms = len(monos)
    erule = edge_rule(2 * d)
    trule = triangle_rule(2 * d)
    Cmat = np.empty((8, nms, nms))
    for variant in range(8):
        rows = []
        S_v, _, _ = _mono_table(monos, REF_VERTICES)
        for v in range(3):
            rows.append(S_v[:, v].copy())
        for e in range(3):
            flip = (variant >> e) & 1
            pts, _ = _ref_edge_param(e, flip, erule.points)
            S, _, _ = _mono_table(monos, pts)
            for q in range(d - 1):
                P = _legendre01(q, erule.points)
                rows.append((S * (erule.weights * P)).sum(axis=1))
        if d >= 3:
            S, _, _ = _mono_table(monos, trule.points)
            rows.append((S * trule.weights).sum(axis=1))
        V = np.asarray(rows)
        if V.shape != (nms, nms):
            raise AssertionError("lagrange dof count mismatch")
        Cmat[variant] = np.linalg.inv(V)
    return monos, Cmat


@dataclass
class CellTables:
    """Basis tabulation at shared reference points, for every cell.

    values: (ncells, nloc, npts, 2) for hcurl, (ncells, nloc, npts) scalar;
    curls: (ncells, nloc, npts) for hcurl; grads: scalar -> (..., 2),
    vector -> (..., 2, 2) with grads[..., i, j] = d(component i)/d(x_j).
    """

    points: np.ndarray
    values: np.ndarray
    curls: np.ndarray = None
    grads: np.ndarray = None


@dataclass
class FaceTraces:
    """One-sided traces at face quadrature parameters for one side."""

    cells: np.ndarray    # (nf,) adjacent cell per face
    values: np.ndarray   # (nf, nloc, npts, 2) or (nf, nloc, npts)
    curls: np.ndarray = None
    grads: np.ndarray = None
    normal_comp: np.ndarray = None  # (nf, nloc, npts) value . n_f (hcurl only)
    tangent_comp: np.ndarray = None


class FESpace:
    """Global finite element space over a mesh (see module docstring)."""

    def __init__(self, mesh: Mesh, kind: str, degree: int):
        if kind == HCURL and degree not in (1, 2):
            raise ValueError(f"hcurl degree {degree} unsupported (need 1 or 2)")
        if kind == H1 and degree not in (2, 3):
            raise ValueError(f"lagrange degree {degree} unsupported (need 2 or 3)")
        if kind not in (HCURL, H1):
            raise ValueError(f"unknown space kind {kind!r}")
        if mesh.face_cells is None:
            raise ValueError("mesh connectivity not computed")
        self.mesh = mesh
        self.kind = kind
        self.degree = degree
        self.is_vector = kind == HCURL

        if kind == HCURL:
            self._monos, self._Cmat = _hcurl_reference(degree)
            self.n_edge_dofs = degree + 1
            self.n_cell_dofs = 3 if degree == 2 else 0
            self.n_vertex_dofs = 0
        else:
            self._monos, self._Cmat = _lagrange_reference(degree)
            self.n_edge_dofs = degree - 1
            self.n_cell_dofs = 1 if degree >= 3 else 0
            self.n_vertex_dofs = 1
        self.nloc = (3 * self.n_vertex_dofs + 3 * self.n_edge_dofs + self.n_cell_dofs)

        self._build_dof_map()
        self._orientations()
        J, det = mesh.jacobians()
        self._J = J
        self._det = det
        self._Jinv = np.linalg.inv(J)
        self._JinvT = np.transpose(self._Jinv, (0, 2, 1))
        self._tab_cache: dict[bytes, CellTables] = {}
        self._trace_cache: dict[tuple, tuple] = {}

    # -- dof layout ----------------------------------------------------------

    def _build_dof_map(self):
        mesh = self.mesh
        nf, nt = mesh.n_faces, mesh.n_cells
        ne, nc, nv = self.n_edge_dofs, self.n_cell_dofs, self.n_vertex_dofs

        # face id for each (cell, local_edge)
        f_of = -np.ones((nt, 3), dtype=np.int64)
        for f in range(nf):
            for side in range(2):
                c = mesh.face_cells[f, side]
                if c >= 0:
                    f_of[c, mesh.face_local_edge[f, side]] = f
        if np.any(f_of < 0):
            raise MeshError("cell edge without a face record")
        self.face_of_cell_edge = f_of

        nclass = mesh.n_vertex_classes
        off_v = 0
        off_e = off_v + nv * nclass
        off_c = off_e + ne * nf
        self.ndof = off_c + nc * nt

        cd = np.empty((nt, self.nloc), dtype=np.int64)
        col = 0
        if nv:
            cd[:, 0:3] = mesh.vertex_class[mesh.triangles]
            col = 3
        for e in range(3):
            for q in range(ne):
                cd[:, col] = off_e + f_of[:, e] * ne + q
                col += 1
        for q in range(nc):
            cd[:, col] = off_c + np.arange(nt) * nc + q
            col += 1
        self.cell_dofs = cd

        bmask = np.zeros(self.ndof, dtype=bool)
        for f in mesh.boundary_faces():
            bmask[off_e + f * ne: off_e + f * ne + ne] = True
            if nv:
                for v in mesh.face_vertices[f]:
                    bmask[mesh.vertex_class[v]] = True
        self.boundary_dofs = np.flatnonzero(bmask)

    def _orientations(self):
        mesh = self.mesh
        tris = mesh.triangles
        cls = mesh.vertex_class
        orient = np.zeros(mesh.n_cells, dtype=np.int64)
        for e, (a, b) in enumerate(LOCAL_EDGES):
            ca, cb = cls[tris[:, a]], cls[tris[:, b]]
            if np.any(ca == cb):
                raise MeshError("edge with identified endpoints; mesh too coarse for periodicity")
            orient |= (ca > cb).astype(np.int64) << e
        self.orientation = orient

    # -- tabulation ----------------------------------------------------------

    def _ref_tables(self, pts: np.ndarray):
        """Per-orientation reference values/derivatives at pts."""
        S, Sx, Sy = _mono_table(self._monos, pts)
        nms = len(self._monos)
        C = self._Cmat  # (8, nmono, nloc)
        if self.kind == HCURL:
            cx, cy = C[:, :nms, :], C[:, nms:, :]
            val = np.stack([np.einsum("omi,mp->oip", cx, S),
                            np.einsum("omi,mp->oip", cy, S)], axis=-1)
            curl = np.einsum("omi,mp->oip", cy, Sx) - np.einsum("omi,mp->oip", cx, Sy)
            grad = np.empty(val.shape[:3] + (2, 2))
            grad[..., 0, 0] = np.einsum("omi,mp->oip", cx, Sx)
            grad[..., 0, 1] = np.einsum("omi,mp->oip", cx, Sy)
            grad[..., 1, 0] = np.einsum("omi,mp->oip", cy, Sx)
            grad[..., 1, 1] = np.einsum("omi,mp->oip", cy, Sy)
            return val, curl, grad
        val = np.einsum("omi,mp->oip", C, S)
        grad = np.stack([np.einsum("omi,mp->oip", C, Sx),
                         np.einsum("omi,mp->oip", C, Sy)], axis=-1)
        return val, None, grad

    def tabulate(self, pts: np.ndarray) -> CellTables:
        """Physical basis values (and curls/grads) for all cells at shared
        reference points ``pts`` (npts, 2).  Cached per point set."""
        key = pts.tobytes()
        hit = self._tab_cache.get(key)
        if hit is not None:
            return hit
        o = self.orientation
        if self.kind == HCURL:
            rval, rcurl, rgrad = self._ref_tables(pts)
            val = np.einsum("ced,cipd->cipe", self._JinvT, rval[o])
            curl = rcurl[o] / self._det[:, None, None]
            grad = np.einsum("cae,cipef,cfb->cipab", self._JinvT, rgrad[o], self._Jinv)
            out = CellTables(points=pts, values=val, curls=curl, grads=grad)
        else:
            rval, _, rgrad = self._ref_tables(pts)
            grad = np.einsum("cab,cipb->cipa", self._JinvT, rgrad[o])
            out = CellTables(points=pts, values=rval[o].copy(), grads=grad)
        self._tab_cache[key] = out
        return out

    def evaluate_basis(self, cell: int, pts: np.ndarray):
        """Per-dof values and curls (hcurl) or values and gradients (h1) on
        one physical cell at reference points ``pts``."""
        if not 0 <= cell < self.mesh.n_cells:
            raise IndexError(f"cell index {cell} out of range")
        tab = self.tabulate(np.ascontiguousarray(pts, dtype=float))
        if self.kind == HCURL:
            return tab.values[cell], tab.curls[cell]
        return tab.values[cell], tab.grads[cell]

    # -- face traces ----------------------------------------------------------

    def face_tables(self, faces: np.ndarray, s: np.ndarray, side: int,
                    need_grads: bool = False) -> FaceTraces:
        """Traces of all local basis functions of the given side's cell on
        each face, at face parameters ``s`` (from the low-class endpoint).

        The two sides of a face are evaluated at geometrically corresponding
        points (identical points for an ordinary interior face, translated
        copies for a periodic seam), so jumps can be formed pointwise.
        """
        mesh = self.mesh
        cells = mesh.face_cells[faces, side]
        if np.any(cells < 0):
            raise ValueError("side 2 requested on a boundary face")
        ledges = mesh.face_local_edge[faces, side]
        tris = mesh.triangles
        a = np.array([LOCAL_EDGES[le][0] for le in ledges])
        b = np.array([LOCAL_EDGES[le][1] for le in ledges])
        ca = mesh.vertex_class[tris[cells, a]]
        cb = mesh.vertex_class[tris[cells, b]]
        flips = (ca > cb).astype(np.int64)

        # reference tables for the 6 (local edge, flip) point sets
        key = (s.tobytes(), need_grads)
        ref = self._trace_cache.get(key)
        if ref is None:
            ref = {}
            for le in range(3):
                for fl in range(2):
                    pts, _ = _ref_edge_param(le, fl, s)
                    ref[(le, fl)] = self._ref_tables(pts)
            self._trace_cache[key] = ref

        nfq, npts = len(faces), len(s)
        o = self.orientation[cells]
        if self.kind == HCURL:
            val = np.empty((nfq, self.nloc, npts, 2))
            curl = np.empty((nfq, self.nloc, npts))
            grad = np.empty((nfq, self.nloc, npts, 2, 2)) if need_grads else None
            for le in range(3):
                for fl in range(2):
                    sel = np.flatnonzero((ledges == le) & (flips == fl))
                    if len(sel) == 0:
                        continue
                    rval, rcurl, rgrad = ref[(le, fl)]
                    cs = cells[sel]
                    val[sel] = np.einsum("ced,cipd->cipe", self._JinvT[cs], rval[o[sel]])
                    curl[sel] = rcurl[o[sel]] / self._det[cs, None, None]
                    if need_grads:
                        grad[sel] = np.einsum("cae,cipef,cfb->cipab",
                                              self._JinvT[cs], rgrad[o[sel]], self._Jinv[cs])
            nrm = mesh.face_normal[faces]
            tan = mesh.face_tangent[faces]
            return FaceTraces(cells=cells, values=val, curls=curl, grads=grad,
                              normal_comp=np.einsum("fipd,fd->fip", val, nrm),
                              tangent_comp=np.einsum("fipd,fd->fip", val, tan))
        val = np.empty((nfq, self.nloc, npts))
        grad = np.empty((nfq, self.nloc, npts, 2)) if need_grads else None
        for le in range(3):
            for fl in range(2):
                sel = np.flatnonzero((ledges == le) & (flips == fl))
                if len(sel) == 0:
                    continue
                rval, _, rgrad = ref[(le, fl)]
                val[sel] = rval[o[sel]]
                if need_grads:
                    grad[sel] = np.einsum("cab,cipb->cipa", self._JinvT[cells[sel]], rgrad[o[sel]])
        return FaceTraces(cells=cells, values=val, grads=grad)

    def face_trace_pair(self, face: int, s: np.ndarray, boundary: bool = False):
        """One-sided evaluations of all dofs of both adjacent cells on one
        face, consistently parametrized so jumps are side1 - side2.

        For a boundary face pass ``boundary=True``; side 2 is then None.
        """
        faces = np.array([face])
        is_b = bool(self.mesh.face_boundary[face])
        if is_b and not boundary:
            raise ValueError(f"face {face} is a boundary face (pass boundary=True)")
        t1 = self.face_tables(faces, s, 0, need_grads=True)
        t2 = None if is_b else self.face_tables(faces, s, 1, need_grads=True)
        return t1, t2

    # -- coefficient-field evaluation -----------------------------------------

    def eval_coeff(self, coeffs: np.ndarray, tab: CellTables, what: str = "value"):
        """Evaluate a coefficient field at the tabulated points of all cells."""
        cd = coeffs[self.cell_dofs]  # (nc, nloc)
        table = {"value": tab.values, "curl": tab.curls, "grad": tab.grads}[what]
        return np.einsum("ci,cip...->cp...", cd, table)


def build_space(mesh: Mesh, kind: str, degree: int) -> FESpace:
    """Build a global space with consistent numbering, orientation handling,
    and periodic dof unification (driven by the mesh's vertex classes)."""
    return FESpace(mesh, kind, degree)


def discrete_gradient(v_space: FESpace, q_space: FESpace):
    """Matrix G with (grad q_h) = sum_i (G q)_i phi_i exactly.

    Requires v_space = hcurl degree k and q_space = lagrange degree k+1 on the
    same mesh (the gradient-inclusion property of the de Rham pair).
    """
    from scipy import sparse

    if v_space.kind != HCURL or q_space.kind != H1:
        raise ValueError("discrete_gradient needs (hcurl, lagrange) spaces")
    if q_space.degree != v_space.degree + 1 or v_space.mesh is not q_space.mesh:
        raise ValueError("spaces are not a matching de Rham pair")

    k = v_space.degree
    monos_k = v_space._monos
    monos_d = q_space._monos
    nms_k, nms_d = len(monos_k), len(monos_d)
    index_k = {m: i for i, m in enumerate(monos_k)}
    Dx = np.zeros((nms_k, nms_d))
    Dy = np.zeros((nms_k, nms_d))
    for j, (i, jj) in enumerate(monos_d):
        if i > 0:
            Dx[index_k[(i - 1, jj)], j] = i
        if jj > 0:
            Dy[index_k[(i, jj - 1)], j] = jj

    # N2 reference dof matrices: V = Cmat^{-1}
    Gloc = np.empty((8, v_space.nloc, q_space.nloc))
    for o in range(8):
        Vn2 = np.linalg.inv(v_space._Cmat[o])
        Dstack = np.vstack([Dx @ q_space._Cmat[o], Dy @ q_space._Cmat[o]])
        Gloc[o] = Vn2 @ Dstack

    nt = v_space.mesh.n_cells
    rows = np.repeat(v_space.cell_dofs, q_space.nloc, axis=1).ravel()
    cols = np.tile(q_space.cell_dofs, (1, v_space.nloc)).ravel()
    vals = Gloc[v_space.orientation].ravel()
    # shared dofs are written from both sides with identical values: keep first
    keys = rows * q_space.ndof + cols
    _, first = np.unique(keys, return_index=True)
    G = sparse.coo_matrix((vals[first], (rows[first], cols[first])),
                          shape=(v_space.ndof, q_space.ndof))
    return G.tocsr()
