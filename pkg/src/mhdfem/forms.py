"""Assembly of the bilinear, trilinear, Nitsche, and CIP stabilization forms.

2D operator dictionary (planar reduction of the 3D vector calculus):
    curl v  = dx v2 - dy v1                (scalar)
    curl s  = (dy s, -dx s)                (vector, s scalar)
    w x u   = w * (-u2, u1)                (scalar w times vector u)
    u x B   = u1 B2 - u2 B1                (scalar)
    v x n   = v . t,  t = rot90(n)         (scalar tangential trace)

Forms (volume integrals over the mesh, face sums over interior/boundary
faces):
    a(u, v)       = (curl u, curl v)
    b(v, q)       = (v, grad q)
    c(w; u, v)    = ((curl w) x u, v)          skew-symmetric in (u, v)
    d_h(w, v)     = -sum_bdry ((curl w) x n, v) - sum_bdry ((curl v) x n, w)
                    + alpha sum_bdry h_f^-1 (w x n, v x n)
    s_h(w; u, v)  = sum_int h_f^-1 gamma(w) ([u], [v])
    stilde(w,z;u,v) = sum_int gtilde ([u],[v]) + sum_bdry gtilde (u.n, v.n)
    sigma(w,z;u,v)  = sum_int h_f^2 gtilde ([grad u],[grad v])
    tau(w,z;u,v)    = sum_int h_f^2 gtilde ([curl u],[curl v])
with gamma(w) = max(C_S, |w|_Linf(f)) and gtilde(w, z) = max(C_S,
|w|_Linf(f), |z|_Linf(f)); the face Linf norm is taken as the max Euclidean
norm over the face quadrature points (both sides for interior faces).

Jumps are side1 - side2 of the full vector (and of the full 2x2 gradient),
with sides paired pointwise along the global face parametrization, which
also covers periodic seams.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .fespace import FESpace
from .quadrature import edge_rule, triangle_rule

BILINEAR_KINDS = ("mass", "a_curlcurl", "b_grad", "d_nitsche")
CONVECTION_PATTERNS = ("c_w_uv", "c_v_Bu")
CIP_KINDS = ("s_jump", "stilde_jump", "sigma_gradjump", "tau_curljump")


@dataclass
class FormContext:
    """Mesh, spaces, quadrature, and method parameters for assembly.

    The context caches volume and face tabulations plus per-face base
    matrices, so repeated assembly of the field-dependent forms only scales
    precomputed blocks by the current face weights.
    """

    mesh: object
    v_space: FESpace
    q_space: FESpace
    nu_S: float = 1.0
    nu_M: float = 1.0
    alpha: float = 10.0
    C_S: float = 0.1
    mu_s: float = 0.1
    mu_b: float = 0.1
    mu_sigma: float = 0.025
    mu_tau: float = 0.025
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name in ("alpha", "C_S", "mu_s", "mu_b", "mu_sigma", "mu_tau"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.nu_S < 0 or self.nu_M < 0:
            raise ValueError("diffusivities must be nonnegative")
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")

    @property
    def k(self) -> int:
        return self.v_space.degree

    # -- cached quadrature data ------------------------------------------------

    def volume(self):
        """Volume rule, tabulations, and physical weights W[c, p]."""
        if "vol" not in self._cache:
            rule = triangle_rule(2 * self.k + 2)
            _, det = self.mesh.jacobians()
            self._cache["vol"] = {
                "rule": rule,
                "v": self.v_space.tabulate(rule.points),
                "q": self.q_space.tabulate(rule.points),
                "W": rule.weights[None, :] * np.abs(det)[:, None],
            }
        return self._cache["vol"]

    def interior(self, need_grads: bool = False):
        """Interior face traces, stacked jump tables, and weights."""
        key = ("int", need_grads)
        if key not in self._cache:
            V = self.v_space
            rule = edge_rule(2 * self.k + 2)
            faces = self.mesh.interior_faces()
            t1 = V.face_tables(faces, rule.points, 0, need_grads=need_grads)
            t2 = V.face_tables(faces, rule.points, 1, need_grads=need_grads)
            jval = np.concatenate([t1.values, -t2.values], axis=1)
            jcurl = np.concatenate([t1.curls, -t2.curls], axis=1)
            jgrad = None
            if need_grads:
                jgrad = np.concatenate([t1.grads, -t2.grads], axis=1)
            dofs = np.concatenate(
                [V.cell_dofs[t1.cells], V.cell_dofs[t2.cells]], axis=1)
            self._cache[key] = {
                "faces": faces,
                "rule": rule,
                "t1": t1,
                "t2": t2,
                "jval": jval,
                "jcurl": jcurl,
                "jgrad": jgrad,
                "dofs": dofs,
                "wts": rule.weights[None, :] * self.mesh.face_length[faces][:, None],
                "h": self.mesh.face_length[faces],
            }
        return self._cache[key]

    def boundary(self):
        """Boundary face traces (values/curls/tangential/normal) and weights."""
        if "bdry" not in self._cache:
            V = self.v_space
            rule = edge_rule(2 * self.k + 2)
            faces = self.mesh.boundary_faces()
            if len(faces):
                tr = V.face_tables(faces, rule.points, 0)
                dofs = V.cell_dofs[tr.cells]
                wts = rule.weights[None, :] * self.mesh.face_length[faces][:, None]
            else:
                tr, dofs, wts = None, None, None
            self._cache["bdry"] = {"faces": faces, "rule": rule, "tr": tr,
                                   "dofs": dofs, "wts": wts,
                                   "h": self.mesh.face_length[faces]}
        return self._cache["bdry"]

    def _face_blocks(self, kind: str):
        """Per-face base matrices (unweighted) for the CIP forms."""
        key = ("blocks", kind)
        if key not in self._cache:
            idata = self.interior(need_grads=(kind == "grad"))
            w = idata["wts"]
            if kind == "val":
                B = np.einsum("fp,fipd,fjpd->fij", w, idata["jval"], idata["jval"])
            elif kind == "curl":
                B = np.einsum("fp,fip,fjp->fij", w, idata["jcurl"], idata["jcurl"])
            elif kind == "grad":
                B = np.einsum("fp,fipab,fjpab->fij", w, idata["jgrad"], idata["jgrad"])
            else:
                raise ValueError(kind)
            self._cache[key] = B
        return self._cache[key]

    def _boundary_normal_blocks(self):
        if "bblocks" not in self._cache:
            b = self.boundary()
            if b["tr"] is None:
                self._cache["bblocks"] = None
            else:
                nc = b["tr"].normal_comp
                self._cache["bblocks"] = np.einsum("fp,fip,fjp->fij", b["wts"], nc, nc)
        return self._cache["bblocks"]

    # -- field traces and weights ----------------------------------------------

    def face_linf(self, coeffs: np.ndarray) -> np.ndarray:
        """max |w| over the quadrature points of each interior face (two-sided)."""
        idata = self.interior()
        V = self.v_space
        out = np.zeros(len(idata["faces"]))
        for t in (idata["t1"], idata["t2"]):
            c = coeffs[V.cell_dofs[t.cells]]
            vals = np.einsum("fi,fipd->fpd", c, t.values)
            out = np.maximum(out, np.linalg.norm(vals, axis=2).max(axis=1))
        return out

    def boundary_linf(self, coeffs: np.ndarray) -> np.ndarray:
        b = self.boundary()
        if b["tr"] is None:
            return np.zeros(0)
        c = coeffs[self.v_space.cell_dofs[b["tr"].cells]]
        vals = np.einsum("fi,fipd->fpd", c, b["tr"].values)
        return np.linalg.norm(vals, axis=2).max(axis=1)

    def gamma(self, w: np.ndarray) -> np.ndarray:
        """Face weights gamma(w) = max(C_S, |w|_Linf(f)) on interior faces."""
        return np.maximum(self.C_S, self.face_linf(w))

    def gamma_tilde(self, w: np.ndarray, z: np.ndarray):
        """(interior, boundary) weights max(C_S, |w|_Linf, |z|_Linf)."""
        gi = np.maximum(self.C_S, np.maximum(self.face_linf(w), self.face_linf(z)))
        gb = np.maximum(self.C_S, np.maximum(self.boundary_linf(w), self.boundary_linf(z)))
        return gi, gb

    # -- scatter helpers ---------------------------------------------------------

    def _scatter_cells(self, local, rows_space, cols_space):
        r = np.repeat(rows_space.cell_dofs, cols_space.nloc, axis=1).ravel()
        c = np.tile(cols_space.cell_dofs, (1, rows_space.nloc)).ravel()
        A = sparse.coo_matrix((local.ravel(), (r, c)),
                              shape=(rows_space.ndof, cols_space.ndof))
        return A.tocsr()

    def _scatter_faces(self, blocks, dofs, ndof):
        nl = dofs.shape[1]
        r = np.repeat(dofs, nl, axis=1).ravel()
        c = np.tile(dofs, (1, nl)).ravel()
        return sparse.coo_matrix((blocks.ravel(), (r, c)), shape=(ndof, ndof)).tocsr()


# ---------------------------------------------------------------------------
# bilinear forms


def assemble_bilinear(ctx: FormContext, kind: str):
    """Constant matrices: mass / a_curlcurl on the hcurl space, the pairing
    b_grad with B[i, j] = (phi_i, grad q_j), or the full Nitsche form d_h."""
    if kind not in BILINEAR_KINDS:
        raise ValueError(f"unknown bilinear kind {kind!r}")
    vol = ctx.volume()
    V, Q = ctx.v_space, ctx.q_space
    if kind == "mass":
        loc = np.einsum("cp,cipd,cjpd->cij", vol["W"], vol["v"].values, vol["v"].values)
        return ctx._scatter_cells(loc, V, V)
    if kind == "a_curlcurl":
        loc = np.einsum("cp,cip,cjp->cij", vol["W"], vol["v"].curls, vol["v"].curls)
        return ctx._scatter_cells(loc, V, V)
    if kind == "b_grad":
        loc = np.einsum("cp,cipd,cjpd->cij", vol["W"], vol["v"].values, vol["q"].grads)
        r = np.repeat(V.cell_dofs, Q.nloc, axis=1).ravel()
        c = np.tile(Q.cell_dofs, (1, V.nloc)).ravel()
        return sparse.coo_matrix((loc.ravel(), (r, c)), shape=(V.ndof, Q.ndof)).tocsr()
    return assemble_nitsche_consistency(ctx, "velocity_dh")


def assemble_nitsche_consistency(ctx: FormContext, kind: str = "velocity_dh"):
    """Full d_h matrix: both curl consistency terms plus the alpha-penalty."""
    if kind != "velocity_dh":
        raise ValueError(f"unknown nitsche kind {kind!r}")
    V = ctx.v_space
    b = ctx.boundary()
    if b["tr"] is None:
        return sparse.csr_matrix((V.ndof, V.ndof))
    tr, w, h = b["tr"], b["wts"], b["h"]
    cons = np.einsum("fp,fip,fjp->fij", w, tr.curls, tr.tangent_comp)
    pen = np.einsum("fp,fip,fjp->fij", w / h[:, None], tr.tangent_comp, tr.tangent_comp)
    # rows = test v (index i), cols = trial w (index j):
    # -((curl w) x n, v) -> -cons^T per face; -((curl v) x n, w) -> -cons
    loc = -np.transpose(cons, (0, 2, 1)) - cons + ctx.alpha * pen
    return ctx._scatter_faces(loc, b["dofs"], V.ndof)


def boundary_penalty_matrix(ctx: FormContext):
    """sum_bdry h_f^-1 (w x n, v x n)_f without the alpha factor (the boundary
    part of the ||.||_# norm)."""
    V = ctx.v_space
    b = ctx.boundary()
    if b["tr"] is None:
        return sparse.csr_matrix((V.ndof, V.ndof))
    tr = b["tr"]
    pen = np.einsum("fp,fip,fjp->fij", b["wts"] / b["h"][:, None],
                    tr.tangent_comp, tr.tangent_comp)
    return ctx._scatter_faces(pen, b["dofs"], V.ndof)


def mean_vector(ctx: FormContext) -> np.ndarray:
    """m_j = (q_j, 1)_Omega, the zero-mean constraint row for the pressure."""
    vol = ctx.volume()
    loc = np.einsum("cp,cjp->cj", vol["W"], vol["q"].values)
    m = np.zeros(ctx.q_space.ndof)
    np.add.at(m, ctx.q_space.cell_dofs.ravel(), loc.ravel())
    return m


# ---------------------------------------------------------------------------
# convection (trilinear) forms


def _rot90(v):
    """(-v2, v1) on the last axis."""
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def assemble_convection(ctx: FormContext, w: np.ndarray, pattern: str):
    """Matrices of c with one slot frozen at the discrete field ``w``.

    c_w_uv: K[i, j] = c(w; phi_j, phi_i)   (first slot frozen, skew in (i,j))
    c_v_Bu: K[i, j] = c(phi_i; w, phi_j)   (middle slot frozen at w)
    """
    if pattern not in CONVECTION_PATTERNS:
        raise ValueError(f"unknown convection pattern {pattern!r}")
    vol = ctx.volume()
    V = ctx.v_space
    tab = vol["v"]
    if pattern == "c_w_uv":
        omega = V.eval_coeff(w, tab, "curl")          # (nc, np)
        rot = _rot90(tab.values)                      # rot90 of trial values
        loc = np.einsum("cp,cjpd,cipd->cij", vol["W"] * omega, rot, tab.values)
        return ctx._scatter_cells(loc, V, V)
    wvals = V.eval_coeff(w, tab, "value")             # (nc, np, 2)
    rot_w = _rot90(wvals)
    loc = np.einsum("cp,cip,cjp->cij", vol["W"], tab.curls,
                    np.einsum("cpd,cjpd->cjp", rot_w, tab.values))
    return ctx._scatter_cells(loc, V, V)


def assemble_convection_middle(ctx: FormContext, u: np.ndarray):
    """K[i, j] = c(phi_i; phi_j, u): derivative of c(C; B, u) in the middle slot."""
    vol = ctx.volume()
    V = ctx.v_space
    tab = vol["v"]
    uvals = V.eval_coeff(u, tab, "value")
    # phi_j x u = rot90(u) . phi_j with a sign: (d1 u2 - d2 u1) = -rot90(u).d
    factor = -_rot90(uvals)
    loc = np.einsum("cp,cip,cjp->cij", vol["W"], tab.curls,
                    np.einsum("cpd,cjpd->cjp", factor, tab.values))
    return ctx._scatter_cells(loc, V, V)


def convection_residual(ctx: FormContext, B: np.ndarray, u: np.ndarray) -> np.ndarray:
    """r[i] = c(phi_i; B, u) = (curl phi_i, B x u)."""
    vol = ctx.volume()
    V = ctx.v_space
    tab = vol["v"]
    Bv = V.eval_coeff(B, tab, "value")
    uv = V.eval_coeff(u, tab, "value")
    cross = Bv[..., 0] * uv[..., 1] - Bv[..., 1] * uv[..., 0]
    loc = np.einsum("cp,cip->ci", vol["W"] * cross, tab.curls)
    out = np.zeros(V.ndof)
    np.add.at(out, V.cell_dofs.ravel(), loc.ravel())
    return out


def convection_apply(ctx: FormContext, w: np.ndarray, u: np.ndarray) -> np.ndarray:
    """r[i] = c(w; u, phi_i) without forming the matrix."""
    vol = ctx.volume()
    V = ctx.v_space
    tab = vol["v"]
    omega = V.eval_coeff(w, tab, "curl")
    uv = V.eval_coeff(u, tab, "value")
    f = (vol["W"] * omega)[..., None] * _rot90(uv)
    loc = np.einsum("cpd,cipd->ci", f, tab.values)
    out = np.zeros(V.ndof)
    np.add.at(out, V.cell_dofs.ravel(), loc.ravel())
    return out


def stab_apply(ctx: FormContext, kind: str, gamma_int: np.ndarray,
               gamma_bdry, coeffs: np.ndarray) -> np.ndarray:
    """Action of the CIP form on a coefficient vector (no matrix)."""
    V = ctx.v_space
    idata = ctx.interior(need_grads=(kind == "sigma_gradjump"))
    h = idata["h"]
    wts = idata["wts"]
    out = np.zeros(V.ndof)
    cf = coeffs[idata["dofs"]]  # (nf, 2nloc)
    if kind == "s_jump":
        jump = np.einsum("fi,fipd->fpd", cf, idata["jval"])
        loc = np.einsum("fp,fpd,fipd->fi", wts * (gamma_int / h)[:, None], jump, idata["jval"])
    elif kind == "stilde_jump":
        jump = np.einsum("fi,fipd->fpd", cf, idata["jval"])
        loc = np.einsum("fp,fpd,fipd->fi", wts * gamma_int[:, None], jump, idata["jval"])
    elif kind == "sigma_gradjump":
        jump = np.einsum("fi,fipab->fpab", cf, idata["jgrad"])
        loc = np.einsum("fp,fpab,fipab->fi", wts * (gamma_int * h**2)[:, None], jump, idata["jgrad"])
    elif kind == "tau_curljump":
        jump = np.einsum("fi,fip->fp", cf, idata["jcurl"])
        loc = np.einsum("fp,fp,fip->fi", wts * (gamma_int * h**2)[:, None], jump, idata["jcurl"])
    else:
        raise ValueError(f"unknown cip kind {kind!r}")
    np.add.at(out, idata["dofs"].ravel(), loc.ravel())
    if kind == "stilde_jump":
        b = ctx.boundary()
        if b["tr"] is not None and gamma_bdry is not None and len(gamma_bdry):
            cb = coeffs[b["dofs"]]
            nrm = np.einsum("fi,fip->fp", cb, b["tr"].normal_comp)
            loc = np.einsum("fp,fp,fip->fi", b["wts"] * gamma_bdry[:, None], nrm, b["tr"].normal_comp)
            np.add.at(out, b["dofs"].ravel(), loc.ravel())
    return out


# ---------------------------------------------------------------------------
# CIP stabilization forms


def assemble_cip(ctx: FormContext, w: np.ndarray, z: np.ndarray = None, kind: str = "s_jump"):
    """Jump stabilization matrices with frozen convection-magnitude weights.

    Scalings per kind: s_jump ~ h^-1 gamma(w); stilde_jump ~ gamma_tilde(w,z)
    (no h factor) plus the boundary normal-trace penalty; sigma_gradjump and
    tau_curljump ~ h^2 gamma_tilde(w,z).
    """
    if kind not in CIP_KINDS:
        raise ValueError(f"unknown cip kind {kind!r}")
    if kind == "s_jump":
        return stab_matrix(ctx, kind, ctx.gamma(w))
    gi, gb = ctx.gamma_tilde(w, z if z is not None else w)
    return stab_matrix(ctx, kind, gi, gb)


def stab_matrix(ctx: FormContext, kind: str, gamma_int: np.ndarray,
                gamma_bdry: np.ndarray = None):
    """CIP matrix for given (frozen) face weights; h-scalings applied here."""
    h = ctx.interior()["h"]
    if kind == "s_jump":
        return _scaled_face_sum(ctx, "val", gamma_int / h)
    if kind == "stilde_jump":
        A = _scaled_face_sum(ctx, "val", gamma_int)
        NB = ctx._boundary_normal_blocks()
        if NB is not None and gamma_bdry is not None and len(gamma_bdry):
            A = A + ctx._scatter_faces(NB * gamma_bdry[:, None, None],
                                       ctx.boundary()["dofs"], ctx.v_space.ndof)
        return A
    if kind == "sigma_gradjump":
        return _scaled_face_sum(ctx, "grad", gamma_int * h**2)
    if kind == "tau_curljump":
        return _scaled_face_sum(ctx, "curl", gamma_int * h**2)
    raise ValueError(f"unknown cip kind {kind!r}")


def _scaled_face_sum(ctx: FormContext, block_kind: str, face_weights: np.ndarray):
    blocks = ctx._face_blocks(block_kind)
    idata = ctx.interior()
    return ctx._scatter_faces(blocks * face_weights[:, None, None],
                              idata["dofs"], ctx.v_space.ndof)


# ---------------------------------------------------------------------------
# right-hand sides


def volume_rhs(ctx: FormContext, fvals: np.ndarray) -> np.ndarray:
    """(f, phi_i) with f given by values at the volume quadrature points
    (shape (ncells, npts, 2))."""
    vol = ctx.volume()
    V = ctx.v_space
    loc = np.einsum("cp,cpd,cipd->ci", vol["W"], fvals, vol["v"].values)
    out = np.zeros(V.ndof)
    np.add.at(out, V.cell_dofs.ravel(), loc.ravel())
    return out


def volume_points(ctx: FormContext) -> np.ndarray:
    """Physical coordinates of the volume quadrature points (ncells, npts, 2)."""
    vol = ctx.volume()
    J, _ = ctx.mesh.jacobians()
    v0 = ctx.mesh.vertices[ctx.mesh.triangles[:, 0]]
    return np.einsum("ced,pd->cpe", J, vol["rule"].points) + v0[:, None, :]


def nitsche_rhs(ctx: FormContext, u_bc, t: float = 0.0) -> np.ndarray:
    """Boundary data lifting of d_h for tangential Dirichlet data:
    L_g(v) = -sum ((curl v) x n, g)_f + alpha sum h^-1 (g x n, v x n)_f
    with g = u_bc . t_f; ``u_bc(x, y, t)`` is the vector boundary field.
    """
    V = ctx.v_space
    b = ctx.boundary()
    if b["tr"] is None:
        return np.zeros(V.ndof)
    pts = boundary_points(ctx)
    uv = u_bc(pts[..., 0], pts[..., 1], t)
    gt = np.einsum("fpd,fd->fp", uv, ctx.mesh.face_tangent[b["faces"]])
    tr, w, h = b["tr"], b["wts"], b["h"]
    loc = (-np.einsum("fp,fip->fi", w * gt, tr.curls)
           + ctx.alpha * np.einsum("fp,fip->fi", (w / h[:, None]) * gt, tr.tangent_comp))
    out = np.zeros(V.ndof)
    np.add.at(out, b["dofs"].ravel(), loc.ravel())
    return out


def boundary_points(ctx: FormContext) -> np.ndarray:
    """Physical coordinates of the boundary quadrature points (nf, npts, 2)."""
    b = ctx.boundary()
    mesh = ctx.mesh
    s = b["rule"].points
    p = np.empty((len(b["faces"]), len(s), 2))
    for i, f in enumerate(b["faces"]):
        p0, p1 = mesh.face_side_endpoints(int(f), 0)
        p[i] = (1 - s)[:, None] * p0 + s[:, None] * p1
    return p


# ---------------------------------------------------------------------------
# norms


def hash_norm_sq(ctx: FormContext, A_curl, P_bdry, v: np.ndarray) -> float:
    """||v||_#^2 = ||curl v||^2 + sum_bdry h_f^-1 ||v x n||_f^2."""
    return float(v @ (A_curl @ v) + v @ (P_bdry @ v))
