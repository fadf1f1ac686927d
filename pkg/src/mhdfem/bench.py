"""Benchmark scenarios and convergence/robustness studies.

Four configurations:
  * smooth       - manufactured decaying vortex pair on the unit square;
                   momentum source f and induction source g derived
                   symbolically from the strong equations.
  * lshape       - stationary singular solution on the L-shaped domain
                   (B = grad of the leading corner singularity, not in H1);
                   sources manufactured; exact boundary data (which vanish).
  * field_loop   - magnetic field loop advected by a constant velocity on
                   the periodic unit square (no exact solution).
  * orszag_tang  - Orszag-Tang vortex on the periodic unit square at
                   nu = 1e-14.

Planar operator dictionary (matching :mod:`forms`): curl v = dx v2 - dy v1,
curl s = (dy s, -dx s), w x u = w(-u2, u1), u x B = u1 B2 - u2 B1.
Momentum source: f = du/dt + nu_S curl(curl u) + (curl u) x u + B x curl B
- grad p; induction source: g = dB/dt + nu_M curl(curl B) - curl(u x B).
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import sympy as sp

from . import analysis
from .interpolate import AnalyticField
from .mesh import generate_mesh
from .system import MethodConfig, MHDSystem
from .timestep import NewtonError, TimeGrid, pseudo_time_to_steady, run_transient, steady_solve

_X, _Y, _T = sp.symbols("x y t", real=True)


def _lamb(expr):
    """Numpy-broadcasting scalar evaluator of a sympy expression."""
    fn = sp.lambdify((_X, _Y, _T), expr, modules="numpy")

    def wrapped(x, y, t=0.0):
        out = fn(np.asarray(x, dtype=float), np.asarray(y, dtype=float), t)
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(x)).copy()

    return wrapped


def _vec_field(e1, e2, curl_expr=None) -> AnalyticField:
    f1, f2 = _lamb(e1), _lamb(e2)

    def value(x, y, t=0.0):
        return np.stack([f1(x, y, t), f2(x, y, t)], axis=-1)

    return AnalyticField(value=value, is_vector=True,
                         curl=None if curl_expr is None else _lamb(curl_expr))


def _scal_field(e) -> AnalyticField:
    return AnalyticField(value=_lamb(e), is_vector=False)


@dataclass
class Scenario:
    """Closed-form data and run protocol for one benchmark."""

    name: str
    domain: str
    mesh_style: str
    boundary_mode: str
    nu_S: float
    nu_M: float
    T: float
    dt_rule: object                      # "formula" or explicit dt
    u0: AnalyticField = None
    B0: AnalyticField = None
    f: Optional[AnalyticField] = None
    g: Optional[AnalyticField] = None
    u_exact: Optional[AnalyticField] = None
    p_exact: Optional[AnalyticField] = None
    B_exact: Optional[AnalyticField] = None
    u_bc: Optional[AnalyticField] = None
    resolutions: tuple = (8, 16, 32)
    methods: tuple = ("method1", "method2", "method3")
    seed: int = 0
    steady: bool = False
    t0: float = 0.0

    def time_grid(self, h: float, k: int) -> TimeGrid:
        if self.dt_rule == "formula":
            return TimeGrid.from_formula(self.T, h, k)
        return TimeGrid(T=self.T, dt=float(self.dt_rule))


def _manufactured(u1, u2, p, B1, B2, nu_S, nu_M):
    """Symbolic sources and derivative fields for exact (u, p, B)."""
    def dx(e):
        return sp.diff(e, _X)

    def dy(e):
        return sp.diff(e, _Y)

    def dt(e):
        return sp.diff(e, _T)
    om_u = dx(u2) - dy(u1)
    om_B = dx(B2) - dy(B1)
    s = u1 * B2 - u2 * B1
    f1 = dt(u1) + nu_S * dy(om_u) + om_u * (-u2) + om_B * B2 - dx(p)
    f2 = dt(u2) - nu_S * dx(om_u) + om_u * u1 - om_B * B1 - dy(p)
    g1 = dt(B1) + nu_M * dy(om_B) - dy(s)
    g2 = dt(B2) - nu_M * dx(om_B) + dx(s)
    return {
        "u": _vec_field(u1, u2, om_u),
        "p": _scal_field(p),
        "B": _vec_field(B1, B2, om_B),
        "f": _vec_field(f1, f2),
        "g": _vec_field(g1, g2),
    }


def scenario_smooth(nu_S: float = 1.0, nu_M: float = 1.0) -> Scenario:
    """Decaying manufactured solution on the unit square (T = 1)."""
    E = sp.exp(-_T / 2)
    sx, cx = sp.sin(sp.pi * _X), sp.cos(sp.pi * _X)
    sy, cy = sp.sin(sp.pi * _Y), sp.cos(sp.pi * _Y)
    u1 = -2 * sp.pi * E * sx**2 * sy * cy
    u2 = 2 * sp.pi * E * sx * cx * sy**2
    p = -E * sp.sin(2 * sp.pi * _X) * sp.cos(2 * sp.pi * _Y)
    B1 = -sp.pi * E * sx * cy
    B2 = sp.pi * E * cx * sy
    d = _manufactured(u1, u2, p, B1, B2, nu_S, nu_M)
    return Scenario(
        name="smooth", domain="unit_square", mesh_style="structured",
        boundary_mode="nitsche_dirichlet", nu_S=nu_S, nu_M=nu_M,
        T=1.0, dt_rule="formula",
        u0=d["u"], B0=d["B"], f=d["f"], g=d["g"],
        u_exact=d["u"], p_exact=d["p"], B_exact=d["B"],
    )


def scenario_lshape(nu_S: float = 1.0, nu_M: float = 1.0) -> Scenario:
    """Stationary singular solution on the L-shaped domain (B not in H1)."""
    sx, cx = sp.sin(sp.pi * _X), sp.cos(sp.pi * _X)
    sy, cy = sp.sin(sp.pi * _Y), sp.cos(sp.pi * _Y)
    u1 = sx**2 * sy * cy
    u2 = -sx * cx * sy**2
    p = sp.Integer(0)
    chi = (_X**2 + _Y**2) ** sp.Rational(1, 3) * sp.sin(sp.Rational(2, 3) * sp.atan2(_Y, _X))
    B1 = sp.diff(chi, _X)
    B2 = sp.diff(chi, _Y)
    d = _manufactured(u1, u2, p, B1, B2, nu_S, nu_M)
    return Scenario(
        name="lshape", domain="lshape", mesh_style="structured",
        boundary_mode="nitsche_dirichlet", nu_S=nu_S, nu_M=nu_M,
        T=0.5, dt_rule=0.05,
        u0=d["u"], B0=d["B"], f=d["f"], g=d["g"],
        u_exact=d["u"], p_exact=d["p"], B_exact=d["B"],
        steady=True,
    )


def scenario_field_loop() -> Scenario:
    """Gardiner-Stone field loop advection on the periodic unit square.

    The vector potential A = 1e-3 (0.3 - r) inside the loop is centered at
    the domain midpoint (r measured from the center); B0 = curl A has
    strength 1e-3 inside the loop and 0 outside; u0 = (1, 1) transports the
    loop back to its initial position at T = 1.
    """
    def B0_value(x, y, t=0.0):
        dx0, dy0 = np.asarray(x) - 0.5, np.asarray(y) - 0.5
        r = np.sqrt(dx0**2 + dy0**2)
        rs = np.where(r < 1e-14, 1.0, r)
        inside = r < 0.3
        bx = np.where(inside, -1e-3 * dy0 / rs, 0.0)
        by = np.where(inside, 1e-3 * dx0 / rs, 0.0)
        return np.stack([bx, by], axis=-1)

    def u0_value(x, y, t=0.0):
        one = np.ones_like(np.asarray(x, dtype=float))
        return np.stack([one, one], axis=-1)

    return Scenario(
        name="field_loop", domain="periodic_square", mesh_style="unstructured",
        boundary_mode="periodic", nu_S=1e-8, nu_M=1e-8,
        T=1.0, dt_rule=1e-3,
        u0=AnalyticField(value=u0_value), B0=AnalyticField(value=B0_value),
        resolutions=(80,), methods=("unstabilized", "method1", "method2", "method3"),
        seed=7,
    )


def scenario_orszag_tang() -> Scenario:
    """Orszag-Tang vortex on the periodic unit square, nu = 1e-14, T = 0.4."""
    def u0_value(x, y, t=0.0):
        return np.stack([-np.sin(2 * np.pi * np.asarray(y)),
                         np.sin(2 * np.pi * np.asarray(x))], axis=-1)

    def B0_value(x, y, t=0.0):
        return np.stack([-np.sin(2 * np.pi * np.asarray(y)),
                         np.sin(4 * np.pi * np.asarray(x))], axis=-1)

    return Scenario(
        name="orszag_tang", domain="periodic_square", mesh_style="unstructured",
        boundary_mode="periodic", nu_S=1e-14, nu_M=1e-14,
        T=0.4, dt_rule=1e-2,
        u0=AnalyticField(value=u0_value), B0=AnalyticField(value=B0_value),
        resolutions=(50,), methods=("unstabilized", "method1", "method2", "method3"),
        seed=11,
    )


def scenario_uniform_flow() -> Scenario:
    """Synthetic check for the inhomogeneous Nitsche lifting: the constant
    field u = (1, 0) (nonzero tangential boundary data) with B = 0 and f = 0
    is an exact steady solution the discretization must reproduce."""
    one = sp.Integer(1)
    d = _manufactured(one, sp.Integer(0), sp.Integer(0), sp.Integer(0), sp.Integer(0), 1.0, 1.0)
    return Scenario(
        name="uniform_flow", domain="unit_square", mesh_style="structured",
        boundary_mode="inhomogeneous_nitsche", nu_S=1.0, nu_M=1.0,
        T=0.1, dt_rule=0.05,
        u0=d["u"], B0=d["B"], f=d["f"], g=d["g"],
        u_exact=d["u"], p_exact=d["p"], B_exact=d["B"], u_bc=d["u"],
        steady=True,
    )


SCENARIOS = {
    "smooth": scenario_smooth,
    "lshape": scenario_lshape,
    "field_loop": scenario_field_loop,
    "orszag_tang": scenario_orszag_tang,
    "uniform_flow": scenario_uniform_flow,
}


def make_scenario(name: str, nu_S: float = None, nu_M: float = None) -> Scenario:
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    factory = SCENARIOS[name]
    if name in ("smooth", "lshape"):
        kw = {}
        if nu_S is not None:
            kw["nu_S"] = nu_S
        if nu_M is not None:
            kw["nu_M"] = nu_M
        return factory(**kw)
    sc = factory()
    if nu_S is not None:
        sc.nu_S = nu_S
    if nu_M is not None:
        sc.nu_M = nu_M
    return sc


# ---------------------------------------------------------------------------
# oracles


def verify_manufactured(scenario: Scenario, n_points: int = 20, seed: int = 0,
                        t_max: float = None) -> float:
    """Max residual of the strong equations at random space-time points,
    with every derivative taken by 4th-order central finite differences of
    the scenario's value callables (independent of the symbolic derivation).
    """
    rng = np.random.default_rng(seed)
    if scenario.domain == "lshape":
        pts = []
        while len(pts) < n_points:
            x, y = rng.uniform(-0.85, 0.85, size=2)
            if (x > 0.15 or y > 0.15) and np.hypot(x, y) > 0.25:
                pts.append((x, y))
        pts = np.array(pts)
    else:
        pts = rng.uniform(0.08, 0.92, size=(n_points, 2))
    x, y = pts[:, 0], pts[:, 1]
    tmax = scenario.T if t_max is None else t_max
    tt = rng.uniform(0.0, tmax, size=n_points) if not scenario.steady else np.zeros(n_points)
    h = 1e-3

    def d4(f, x, y, t, axis):
        e = np.zeros(2)
        e[axis] = 1.0
        return (f(x - 2 * h * e[0], y - 2 * h * e[1], t) - 8 * f(x - h * e[0], y - h * e[1], t)
                + 8 * f(x + h * e[0], y + h * e[1], t) - f(x + 2 * h * e[0], y + 2 * h * e[1], t)) / (12 * h)

    def dt4(f, x, y, t):
        return (f(x, y, t - 2 * h) - 8 * f(x, y, t - h) + 8 * f(x, y, t + h) - f(x, y, t + 2 * h)) / (12 * h)

    u, B, p = scenario.u_exact, scenario.B_exact, scenario.p_exact
    worst = 0.0
    for xi, yi, ti in zip(x, y, tt):
        xi, yi = np.array([xi]), np.array([yi])
        om_u = lambda a, b, c: d4(lambda *s: u.value(*s)[..., 1], a, b, c, 0) - d4(lambda *s: u.value(*s)[..., 0], a, b, c, 1)
        om_B = lambda a, b, c: d4(lambda *s: B.value(*s)[..., 1], a, b, c, 0) - d4(lambda *s: B.value(*s)[..., 0], a, b, c, 1)
        uv = u.value(xi, yi, ti)[0]
        Bv = B.value(xi, yi, ti)[0]
        w_u = om_u(xi, yi, ti)[0]
        w_B = om_B(xi, yi, ti)[0]
        mom = dt4(u.value, xi, yi, ti)[0]
        mom = mom + scenario.nu_S * np.array([d4(om_u, xi, yi, ti, 1)[0], -d4(om_u, xi, yi, ti, 0)[0]])
        mom = mom + w_u * np.array([-uv[1], uv[0]]) + w_B * np.array([Bv[1], -Bv[0]])
        mom = mom - np.array([d4(p.value, xi, yi, ti, 0)[0], d4(p.value, xi, yi, ti, 1)[0]])
        mom = mom - scenario.f.value(xi, yi, ti)[0]

        s_fn = lambda a, b, c: u.value(a, b, c)[..., 0] * B.value(a, b, c)[..., 1] - u.value(a, b, c)[..., 1] * B.value(a, b, c)[..., 0]
        ind = dt4(B.value, xi, yi, ti)[0]
        ind = ind + scenario.nu_M * np.array([d4(om_B, xi, yi, ti, 1)[0], -d4(om_B, xi, yi, ti, 0)[0]])
        ind = ind - np.array([d4(s_fn, xi, yi, ti, 1)[0], -d4(s_fn, xi, yi, ti, 0)[0]])
        if scenario.g is not None:
            ind = ind - scenario.g.value(xi, yi, ti)[0]
        scale = 1.0 + np.abs(scenario.f.value(xi, yi, ti)[0]).max()
        worst = max(worst, np.abs(mom).max() / scale, np.abs(ind).max() / scale)
    return worst


# ---------------------------------------------------------------------------
# studies


def run_single(scenario: Scenario, method: str, k: int, n: int,
               store_states: bool = True, observers=(), dt_override=None):
    """One (scenario, method, k, n) run; returns (system, records, states,
    final_state, grid)."""
    mesh = generate_mesh(scenario.domain, n, scenario.mesh_style, scenario.seed)
    cfg = MethodConfig(variant=method, nu_S=scenario.nu_S, nu_M=scenario.nu_M,
                       k=k, boundary_mode=scenario.boundary_mode)
    system = MHDSystem(cfg, mesh, scenario)
    grid = scenario.time_grid(mesh.h_max, k) if dt_override is None else \
        TimeGrid(T=scenario.T, dt=dt_override)
    records, states, final = run_transient(system, grid, observers=observers,
                                           store_states=store_states)
    return system, records, states, final, grid


def run_steady(scenario: Scenario, method: str, k: int, n: int,
               direct: bool = True):
    """Steady solve for stationary scenarios: damped Newton on the steady
    system (default), falling back to pseudo-time marching."""
    mesh = generate_mesh(scenario.domain, n, scenario.mesh_style, scenario.seed)
    cfg = MethodConfig(variant=method, nu_S=scenario.nu_S, nu_M=scenario.nu_M,
                       k=k, boundary_mode=scenario.boundary_mode)
    system = MHDSystem(cfg, mesh, scenario)
    initial = system.initial_state()
    if direct:
        try:
            return system, steady_solve(system, initial)
        except NewtonError:
            pass
    dt = float(scenario.dt_rule) if scenario.dt_rule != "formula" else 0.05
    return system, pseudo_time_to_steady(system, dt, tol=1e-10, initial_state=initial)


def run_convergence_study(scenario: Scenario, method: str, k: int,
                          resolutions=None, log=None) -> list:
    """Transient (or steady) runs over a refinement sequence with EOCs.

    Solver failures are recorded per row; remaining rows still run.
    """
    rows = []
    for n in (resolutions or scenario.resolutions):
        try:
            if scenario.steady:
                system, final = run_steady(scenario, method, k, n)
                row = analysis.error_norms(system, [final], scenario, dt=None)
            else:
                system, _, states, _, grid = run_single(scenario, method, k, n)
                row = analysis.error_norms(system, states, scenario, dt=grid.dt)
            row.update({"n": n, "method": method, "k": k,
                        "nu_S": scenario.nu_S, "nu_M": scenario.nu_M})
        except Exception as exc:  # noqa: BLE001 - per-row fault isolation
            row = {"n": n, "method": method, "k": k, "error": str(exc)}
        rows.append(row)
        if log:
            log(row)
    ok = [r for r in rows if "err_total" in r]
    analysis.attach_eoc(ok)
    return rows


def field_strength_max(system: MHDSystem, state) -> float:
    """max |B_h| over the volume quadrature points (overshoot diagnostics)."""
    vol = system.ctx.volume()
    Bv = system.V.eval_coeff(state.B, vol["v"], "value")
    return float(np.linalg.norm(Bv, axis=-1).max())


def study_row(scenario_name: str, nu_S, nu_M, overrides: dict,
              method: str, k: int, n: int) -> dict:
    """One study row from picklable arguments (process-pool entry point)."""
    scenario = make_scenario(scenario_name, nu_S, nu_M)
    for key, val in (overrides or {}).items():
        setattr(scenario, key, val)
    try:
        if scenario.steady:
            system, final = run_steady(scenario, method, k, n)
            row = analysis.error_norms(system, [final], scenario, dt=None)
        else:
            system, _, states, _, grid = run_single(scenario, method, k, n)
            row = analysis.error_norms(system, states, scenario, dt=grid.dt)
        row.update({"n": n, "method": method, "k": k,
                    "nu_S": scenario.nu_S, "nu_M": scenario.nu_M})
    except Exception as exc:  # noqa: BLE001 - per-row fault isolation
        row = {"n": n, "method": method, "k": k, "error": str(exc)}
    return row
