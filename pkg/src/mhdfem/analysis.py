"""Error norms, the composite space-time energy norm, EOC, and invariants.

The total error norm combines the L-inf-in-time L2 errors of u and B (max
over the time-step endpoints), the time-integrated (trapezoidal) diffusive
terms nu_S ||e_u||_#^2 and nu_M ||curl e_B||^2, and the variant-specific
stabilization seminorms evaluated with the discrete solution's own face
weights gamma(u_h) / gamma_tilde(u_h, B_h).  Spatial integrals use a
quadrature two degrees above the assembly rule.
"""

import numpy as np

from . import forms
from .quadrature import triangle_rule
from .system import MHDSystem, SystemState


def eoc(h1: float, e1: float, h2: float, e2: float) -> float:
    """Experimental order of convergence between two refinement levels."""
    if not (h1 > h2 > 0):
        raise ValueError("need h1 > h2 > 0")
    if e1 <= 0 or e2 <= 0:
        raise ValueError("errors must be positive")
    return float(np.log(e1 / e2) / np.log(h1 / h2))


def monitor_invariants(system: MHDSystem, state: SystemState) -> dict:
    """Energy, cross-helicity, and normalized divergence residuals."""
    M = system.M
    return {
        "energy": 0.5 * float(state.u @ (M @ state.u) + state.B @ (M @ state.B)),
        "cross_helicity": float(state.u @ (M @ state.B)),
        "div_u_residual": system.divergence_residual(state.u),
        "div_B_residual": system.divergence_residual(state.B),
    }


class ErrorIntegrator:
    """Error norms of discrete states against the exact scenario fields."""

    def __init__(self, system: MHDSystem):
        self.system = system
        self.V = system.V
        self.ctx = system.ctx
        k = system.cfg.k
        self.rule = triangle_rule(min(2 * (k + 1) + 2, 10))
        self.tab = self.V.tabulate(self.rule.points)
        mesh = system.mesh
        J, det = mesh.jacobians()
        v0 = mesh.vertices[mesh.triangles[:, 0]]
        self.pts = np.einsum("ced,pd->cpe", J, self.rule.points) + v0[:, None, :]
        self.W = self.rule.weights[None, :] * np.abs(det)[:, None]
        self.bpts = forms.boundary_points(self.ctx) if len(mesh.boundary_faces()) else None

    # -- pieces --------------------------------------------------------------

    def l2_error(self, coeffs: np.ndarray, exact, t: float) -> float:
        uh = self.V.eval_coeff(coeffs, self.tab, "value")
        ue = exact.value(self.pts[..., 0], self.pts[..., 1], t)
        return float(np.sqrt(np.sum(self.W * ((uh - ue) ** 2).sum(-1))))

    def curl_error_sq(self, coeffs: np.ndarray, exact, t: float) -> float:
        ch = self.V.eval_coeff(coeffs, self.tab, "curl")
        ce = exact.curl(self.pts[..., 0], self.pts[..., 1], t)
        return float(np.sum(self.W * (ch - ce) ** 2))

    def hash_err_sq(self, coeffs: np.ndarray, exact, t: float) -> float:
        """||e||_#^2 = ||curl e||^2 + sum_bdry h^-1 ||e x n||_f^2."""
        out = self.curl_error_sq(coeffs, exact, t)
        b = self.ctx.boundary()
        if b["tr"] is not None:
            tr = b["tr"]
            ce = coeffs[self.V.cell_dofs[tr.cells]]
            t_h = np.einsum("fi,fip->fp", ce, tr.tangent_comp)
            ue = exact.value(self.bpts[..., 0], self.bpts[..., 1], t)
            t_e = np.einsum("fpd,fd->fp", ue, self.ctx.mesh.face_tangent[b["faces"]])
            out += float(np.sum((b["wts"] / b["h"][:, None]) * (t_e - t_h) ** 2))
        return out

    def _interior_jump_sq(self, coeffs: np.ndarray, kind: str, wface: np.ndarray) -> float:
        """sum_f w_f int_f [discrete]^2 (exact fields are jump-free)."""
        idata = self.ctx.interior(need_grads=(kind == "grad"))
        cf = coeffs[idata["dofs"]]
        if kind == "val":
            jump = np.einsum("fi,fipd->fpd", cf, idata["jval"])
            per = (jump ** 2).sum(-1)
        elif kind == "grad":
            jump = np.einsum("fi,fipab->fpab", cf, idata["jgrad"])
            per = (jump ** 2).sum((-1, -2))
        else:
            per = np.einsum("fi,fip->fp", cf, idata["jcurl"]) ** 2
        return float(np.sum(idata["wts"] * per * wface[:, None]))

    def _boundary_normal_err_sq(self, coeffs, exact, t, wbdry) -> float:
        b = self.ctx.boundary()
        if b["tr"] is None or not len(wbdry):
            return 0.0
        tr = b["tr"]
        n_h = np.einsum("fi,fip->fp", coeffs[self.V.cell_dofs[tr.cells]], tr.normal_comp)
        ue = exact.value(self.bpts[..., 0], self.bpts[..., 1], t)
        n_e = np.einsum("fpd,fd->fp", ue, self.ctx.mesh.face_normal[b["faces"]])
        return float(np.sum(b["wts"] * (n_e - n_h) ** 2 * wbdry[:, None]))

    def stab_err_sq(self, state: SystemState, scenario, t: float) -> float:
        """Variant stabilization seminorm of the error, weights from u_h, B_h."""
        cfg = self.system.cfg
        ctx = self.ctx
        h = ctx.interior()["h"]
        if cfg.variant == "unstabilized":
            return 0.0
        if cfg.variant in ("method1", "method2"):
            gam = ctx.gamma(state.u)
            out = self._interior_jump_sq(state.u, "val", gam / h)
            if cfg.variant == "method2":
                out += self._interior_jump_sq(state.B, "val", gam / h)
            return out
        gi, gb = ctx.gamma_tilde(state.u, state.B)
        out = self._interior_jump_sq(state.u, "val", gi)
        out += self._boundary_normal_err_sq(state.u, scenario.u_exact, t, gb)
        out += self._interior_jump_sq(state.u, "grad", gi * h**2)
        out += self._interior_jump_sq(state.B, "curl", gi * h**2)
        return out


def error_norms(system: MHDSystem, states: list, scenario, dt: float = None) -> dict:
    """Total-norm entry for one run: a time series (``dt`` given) or a single
    steady state (``dt`` None, instantaneous seminorm values)."""
    integ = ErrorIntegrator(system)
    ue, Be = scenario.u_exact, scenario.B_exact
    if ue is None or Be is None:
        raise ValueError("scenario has no exact solution")
    cfg = system.cfg

    eu, eB, diss = [], [], []
    for s in states:
        eu.append(integ.l2_error(s.u, ue, s.t))
        eB.append(integ.l2_error(s.B, Be, s.t))
        diss.append(cfg.nu_S * integ.hash_err_sq(s.u, ue, s.t)
                    + cfg.nu_M * integ.curl_error_sq(s.B, Be, s.t)
                    + integ.stab_err_sq(s, scenario, s.t))
    eu, eB, diss = map(np.asarray, (eu, eB, diss))
    if dt is None:
        integral = float(diss[-1])
        err_u, err_B = float(eu[-1]), float(eB[-1])
    else:
        w = np.full(len(states), dt)
        w[0] = w[-1] = 0.5 * dt
        integral = float(w @ diss)
        err_u, err_B = float(eu.max()), float(eB.max())
    total = float(np.sqrt(err_u**2 + err_B**2 + integral))
    return {
        "h": system.mesh.h_max,
        "dofs": system.n_unknowns,
        "err_u_L2": err_u,
        "err_B_L2": err_B,
        "dissipation_integral": integral,
        "err_total": total,
    }


def attach_eoc(rows: list) -> list:
    """Add EOC columns between consecutive refinement levels (in place)."""
    for prev, cur in zip(rows, rows[1:]):
        cur["eoc"] = eoc(prev["h"], prev["err_total"], cur["h"], cur["err_total"])
    if rows:
        rows[0].setdefault("eoc", float("nan"))
    return rows
