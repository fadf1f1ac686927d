"""Residuals and Jacobians of the implicit-midpoint step for all variants.

Unknowns per step: velocity u and magnetic field B (H(curl) coefficients at
the new time level), the stage pressure p, for method2 also the magnetic
multiplier phi, plus scalar mean-value multipliers.  All forms are evaluated
at the midpoint fields u_m = (u_old + u_new)/2, B_m likewise; sources at the
stage time t_old + dt/2.

Momentum rows (test v):
    (u+ - u-, v)/dt + nu_S a(u_m, v) + c(u_m; u_m, v) - c(B_m; B_m, v)
    + nu_S d_h(u_m, v) - b(v, p) + [stabilization] = (I_curl f(t_mid), v)
Divergence rows: b(u_m, q) = 0; induction rows (test C):
    (B+ - B-, C)/dt + nu_M a(B_m, C) + c(C; B_m, u_m) + [stabilization]
    [+ b(C, phi) for method2] = (g(t_mid), C)
Method2 adds b(B_m, psi) = 0.

Zero-mean constraint: one divergence row (redundant, since gradients
annihilate constants) is replaced by the pin p[0] = 0 during the solve, and
p is shifted by a constant to exact zero mean afterwards; this leaves u, B
and every retained equation unchanged and keeps the sparse factorization
free of dense constraint rows.  The multipliers lam_p / lam_phi of the
equivalent bordered formulation are identically zero and kept as state
fields.

Stabilization by variant: unstabilized none; method1: mu_s s_h(u_m; u_m, v);
method2 adds mu_b s_h(u_m; B_m, C); method3: mu_s stilde + mu_sigma sigma on
the momentum and mu_tau tau on the induction equation, all weighted by
gamma_tilde(u_m, B_m).  The gamma weights are frozen within each Newton
iteration and refreshed from the current iterate, so the converged state
satisfies the fully implicit system while the Jacobian stays exact for the
frozen-weight residual.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse

from . import forms, interpolate
from .fespace import H1, HCURL, build_space, discrete_gradient

VARIANTS = ("unstabilized", "method1", "method2", "method3")
BOUNDARY_MODES = ("nitsche_dirichlet", "periodic", "inhomogeneous_nitsche")


@dataclass
class MethodConfig:
    """Method variant, physical and stabilization parameters (paper defaults:
    C_S = mu_s = mu_b = 0.1, alpha = 10, mu_sigma = mu_tau = 0.025)."""

    variant: str = "method1"
    nu_S: float = 1.0
    nu_M: float = 1.0
    alpha: float = 10.0
    C_S: float = 0.1
    mu_s: float = 0.1
    mu_b: float = 0.1
    mu_sigma: float = 0.025
    mu_tau: float = 0.025
    k: int = 1
    boundary_mode: str = "nitsche_dirichlet"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.boundary_mode not in BOUNDARY_MODES:
            raise ValueError(f"unknown boundary mode {self.boundary_mode!r}")
        if self.k not in (1, 2):
            raise ValueError("polynomial degree k must be 1 or 2")

    @property
    def has_phi(self) -> bool:
        return self.variant == "method2"


@dataclass
class SystemState:
    """Coefficient vectors at one time level (phi only for method2)."""

    u: np.ndarray
    p: np.ndarray
    B: np.ndarray
    phi: Optional[np.ndarray] = None
    lam_p: float = 0.0
    lam_phi: float = 0.0
    t: float = 0.0
    n_newton: int = 0

    def copy(self) -> "SystemState":
        return SystemState(self.u.copy(), self.p.copy(), self.B.copy(),
                           None if self.phi is None else self.phi.copy(),
                           self.lam_p, self.lam_phi, self.t)


class MHDSystem:
    """Assembled operators for one (mesh, config, scenario) triple."""

    def __init__(self, cfg: MethodConfig, mesh, scenario=None):
        self.cfg = cfg
        self.mesh = mesh
        self.scenario = scenario
        if cfg.boundary_mode == "periodic" and not mesh.periodic:
            raise ValueError("periodic boundary mode needs a periodic mesh")
        self.V = build_space(mesh, HCURL, cfg.k)
        self.Q = build_space(mesh, H1, cfg.k + 1)
        self.ctx = forms.FormContext(
            mesh=mesh, v_space=self.V, q_space=self.Q,
            nu_S=cfg.nu_S, nu_M=cfg.nu_M, alpha=cfg.alpha, C_S=cfg.C_S,
            mu_s=cfg.mu_s, mu_b=cfg.mu_b, mu_sigma=cfg.mu_sigma, mu_tau=cfg.mu_tau)

        self.M = forms.assemble_bilinear(self.ctx, "mass")
        self.A = forms.assemble_bilinear(self.ctx, "a_curlcurl")
        self.Bmat = forms.assemble_bilinear(self.ctx, "b_grad")
        self.D = forms.assemble_nitsche_consistency(self.ctx)
        self.mvec = forms.mean_vector(self.ctx)
        self.G = discrete_gradient(self.V, self.Q)
        self.MG = (self.M @ self.G).tocsr()
        self.Nu = self.V.ndof
        self.Np = self.Q.ndof
        self._vol_pts = forms.volume_points(self.ctx)
        # constant-function coefficients and pinned constraint row (see module doc)
        self.ones_q = interpolate.nodal_interpolate_h1(self.Q, lambda x, y, t=0.0: np.ones_like(x))
        self.pin = 0
        mask = np.ones(self.Np)
        mask[self.pin] = 0.0
        sel = sparse.diags(mask)
        pinrow = sparse.coo_matrix(([1.0], ([self.pin], [self.pin])), shape=(self.Np, self.Np))
        self._selBT = (sel @ self.Bmat.T).tocsr()    # divergence rows (pinned row zeroed)
        self._J_pp = pinrow.tocsr()                  # pin p[0] = 0
        self._rhs_cache: dict = {}
        self._lu = None                              # reusable factorization (timestep)

    # -- state/vector layout ---------------------------------------------------

    @property
    def n_unknowns(self) -> int:
        return 2 * self.Nu + self.Np * (2 if self.cfg.has_phi else 1)

    def pack(self, s: SystemState) -> np.ndarray:
        parts = [s.u, s.p, s.B]
        if self.cfg.has_phi:
            parts.append(s.phi)
        return np.concatenate(parts)

    def unpack(self, x: np.ndarray, t: float) -> SystemState:
        Nu, Np = self.Nu, self.Np
        u = x[:Nu]
        p = x[Nu:Nu + Np]
        B = x[Nu + Np:2 * Nu + Np]
        off = 2 * Nu + Np
        phi = x[off:off + Np] if self.cfg.has_phi else None
        return SystemState(u, p, B, phi, 0.0, 0.0, t)

    def shift_to_zero_mean(self, s: SystemState) -> None:
        """Remove the constant component of p (and phi) in place."""
        area = self.mvec @ self.ones_q
        s.p -= (self.mvec @ s.p / area) * self.ones_q
        if s.phi is not None:
            s.phi -= (self.mvec @ s.phi / area) * self.ones_q

    def zero_state(self, t: float = 0.0) -> SystemState:
        return SystemState(np.zeros(self.Nu), np.zeros(self.Np), np.zeros(self.Nu),
                           np.zeros(self.Np) if self.cfg.has_phi else None, 0.0, 0.0, t)

    # -- stabilization weights ---------------------------------------------------

    def stab_weights(self, u_m: np.ndarray, B_m: np.ndarray) -> dict:
        """Face weights gamma / gamma_tilde of the current midpoint iterate."""
        v = self.cfg.variant
        if v == "unstabilized":
            return {}
        if v in ("method1", "method2"):
            return {"gam": self.ctx.gamma(u_m)}
        gi, gb = self.ctx.gamma_tilde(u_m, B_m)
        return {"gti": gi, "gtb": gb}

    def _stab_matrices(self, w: dict):
        cfg, ctx = self.cfg, self.ctx
        out = {}
        if cfg.variant in ("method1", "method2"):
            out["S"] = forms.stab_matrix(ctx, "s_jump", w["gam"])
        elif cfg.variant == "method3":
            out["St"] = forms.stab_matrix(ctx, "stilde_jump", w["gti"], w["gtb"])
            out["Sg"] = forms.stab_matrix(ctx, "sigma_gradjump", w["gti"])
            out["Tc"] = forms.stab_matrix(ctx, "tau_curljump", w["gti"])
        return out

    # -- sources -----------------------------------------------------------------

    def momentum_rhs(self, t: float) -> np.ndarray:
        """(I_curl f(t), v) plus the Nitsche boundary lifting (if any)."""
        key = ("mom", round(t, 14))
        if key in self._rhs_cache:
            return self._rhs_cache[key]
        rhs = np.zeros(self.Nu)
        sc = self.scenario
        if sc is not None and sc.f is not None:
            fI = interpolate.canonical_interpolate_hcurl(self.V, sc.f, t)
            rhs += self.M @ fI
        if (sc is not None and self.cfg.boundary_mode == "inhomogeneous_nitsche"
                and sc.u_bc is not None):
            rhs += self.cfg.nu_S * forms.nitsche_rhs(self.ctx, sc.u_bc.value, t)
        if len(self._rhs_cache) > 8:
            self._rhs_cache.clear()
        self._rhs_cache[key] = rhs
        return rhs

    def induction_rhs(self, t: float) -> np.ndarray:
        sc = self.scenario
        if sc is None or sc.g is None:
            return np.zeros(self.Nu)
        key = ("ind", round(t, 14))
        if key in self._rhs_cache:
            return self._rhs_cache[key]
        pts = self._vol_pts
        gv = sc.g.value(pts[..., 0], pts[..., 1], t)
        rhs = forms.volume_rhs(self.ctx, gv)
        self._rhs_cache[key] = rhs
        return rhs

    # -- residual / jacobian -------------------------------------------------------

    def residual(self, state_new: SystemState, state_old: SystemState, dt: float,
                 weights: dict = None, steady: bool = False) -> np.ndarray:
        """Implicit-midpoint residual; ``weights`` freezes the gamma factors
        (default: computed from the midpoint of the given states).  With
        ``steady`` the time-derivative terms are dropped and all forms are
        evaluated at state_new directly (direct steady solves)."""
        cfg = self.cfg
        ctx = self.ctx
        if steady:
            u_m, B_m = state_new.u, state_new.B
            t_mid = state_new.t
        else:
            u_m = 0.5 * (state_old.u + state_new.u)
            B_m = 0.5 * (state_old.B + state_new.B)
            t_mid = state_old.t + 0.5 * dt
        if weights is None:
            weights = self.stab_weights(u_m, B_m)

        r_u = np.zeros(self.Nu) if steady else (self.M @ (state_new.u - state_old.u)) / dt
        r_u += cfg.nu_S * (self.A @ u_m + self.D @ u_m)
        r_u += forms.convection_apply(ctx, u_m, u_m) - forms.convection_apply(ctx, B_m, B_m)
        r_u -= self.Bmat @ state_new.p
        if cfg.variant in ("method1", "method2"):
            r_u += cfg.mu_s * forms.stab_apply(ctx, "s_jump", weights["gam"], None, u_m)
        elif cfg.variant == "method3":
            r_u += cfg.mu_s * forms.stab_apply(ctx, "stilde_jump", weights["gti"], weights["gtb"], u_m)
            r_u += cfg.mu_sigma * forms.stab_apply(ctx, "sigma_gradjump", weights["gti"], None, u_m)
        r_u -= self.momentum_rhs(t_mid)

        r_p = self.Bmat.T @ u_m
        r_p[self.pin] = state_new.p[self.pin]

        r_B = np.zeros(self.Nu) if steady else (self.M @ (state_new.B - state_old.B)) / dt
        r_B += cfg.nu_M * (self.A @ B_m)
        r_B += forms.convection_residual(ctx, B_m, u_m)
        if cfg.variant == "method2":
            r_B += cfg.mu_b * forms.stab_apply(ctx, "s_jump", weights["gam"], None, B_m)
            r_B += self.Bmat @ state_new.phi
        elif cfg.variant == "method3":
            r_B += cfg.mu_tau * forms.stab_apply(ctx, "tau_curljump", weights["gti"], None, B_m)
        r_B -= self.induction_rhs(t_mid)

        parts = [r_u, r_p, r_B]
        if cfg.has_phi:
            r_phi = self.Bmat.T @ B_m
            r_phi[self.pin] = state_new.phi[self.pin]
            parts.append(r_phi)
        return np.concatenate(parts)

    def jacobian(self, state_new: SystemState, state_old: SystemState, dt: float,
                 weights: dict = None, steady: bool = False):
        """Exact Jacobian of the frozen-weight residual w.r.t. state_new."""
        cfg = self.cfg
        if steady:
            u_m, B_m = state_new.u, state_new.B
            half = 1.0
        else:
            u_m = 0.5 * (state_old.u + state_new.u)
            B_m = 0.5 * (state_old.B + state_new.B)
            half = 0.5
        if weights is None:
            weights = self.stab_weights(u_m, B_m)
        S = self._stab_matrices(weights)

        C_u = forms.assemble_convection(self.ctx, u_m, "c_w_uv")
        C_B = forms.assemble_convection(self.ctx, B_m, "c_w_uv")
        K_u = forms.assemble_convection(self.ctx, u_m, "c_v_Bu")
        K_B = forms.assemble_convection(self.ctx, B_m, "c_v_Bu")
        Mid_u = forms.assemble_convection_middle(self.ctx, u_m)

        Mdt = 0.0 if steady else self.M / dt
        J_uu = Mdt + half * (cfg.nu_S * (self.A + self.D) + C_u + K_u.T)
        if cfg.variant in ("method1", "method2"):
            J_uu = J_uu + half * cfg.mu_s * S["S"]
        elif cfg.variant == "method3":
            J_uu = J_uu + half * (cfg.mu_s * S["St"] + cfg.mu_sigma * S["Sg"])
        J_uB = -half * (C_B + K_B.T)
        J_Bu = half * K_B
        J_BB = Mdt + half * (cfg.nu_M * self.A + Mid_u)
        if cfg.variant == "method2":
            J_BB = J_BB + half * cfg.mu_b * S["S"]
        elif cfg.variant == "method3":
            J_BB = J_BB + half * cfg.mu_tau * S["Tc"]

        J_pu = half * self._selBT
        if not cfg.has_phi:
            blocks = [
                [J_uu, -self.Bmat, J_uB],
                [J_pu, self._J_pp, None],
                [J_Bu, None, J_BB],
            ]
        else:
            blocks = [
                [J_uu, -self.Bmat, J_uB, None],
                [J_pu, self._J_pp, None, None],
                [J_Bu, None, J_BB, self.Bmat],
                [None, None, J_pu, self._J_pp],
            ]
        return sparse.bmat(blocks, format="csc")

    # -- initial data ----------------------------------------------------------------

    def kernel_constraint(self):
        """Full-column-rank constraint matrix spanning the discrete gradients
        (one Lagrange column dropped to remove the constant)."""
        return self.MG[:, 1:]

    def initial_state(self) -> SystemState:
        """Divergence-consistent L2 projections of the scenario initial data."""
        sc = self.scenario
        C = self.kernel_constraint()
        s = self.zero_state(t=float(getattr(sc, "t0", 0.0)))
        if sc is not None and sc.u0 is not None:
            s.u = interpolate.l2_project_hcurl(self.V, sc.u0, s.t, constraint=C)
        if sc is not None and sc.B0 is not None:
            s.B = interpolate.l2_project_hcurl(self.V, sc.B0, s.t, constraint=C)
        return s

    # -- diagnostics -----------------------------------------------------------------

    def divergence_residual(self, v: np.ndarray) -> float:
        """max_q |b(v, q)| / ||v||_L2 over the pressure basis (0 if v = 0)."""
        nrm = np.sqrt(max(v @ (self.M @ v), 0.0))
        r = np.abs(self.Bmat.T @ v).max()
        return r / nrm if nrm > 0 else r
