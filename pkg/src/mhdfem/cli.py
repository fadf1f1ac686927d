"""Configuration-driven command line front end.

Subcommands:
  run     one transient simulation; writes the time-series CSV and optional
          VTK / contour snapshots of the final state.
  study   a convergence table over mesh resolutions; writes CSV.
  verify  built-in invariant suite (commutation, skew-symmetry, conservation
          smoke test); prints one PASS/FAIL line per check.

Config files are JSON with the following keys (unknown keys are rejected):
  scenario     "smooth" | "lshape" | "field_loop" | "orszag_tang"
  method       variant or list of variants        [default "method1"]
  k            polynomial degree 1 | 2            [default 1]
  n            resolution or list of resolutions  [default: scenario's]
  nu_S, nu_M   diffusivities                      [default: scenario's]
  T, dt        final time and step ("formula" uses dt = h^((k+1)/2)/10)
  style        "structured" | "unstructured"      [default: scenario's]
  seed         mesh jitter seed                   [default: scenario's]
  out          output directory                   [default "out"]
  outputs      subset of ["csv", "series", "vtk", "contours"]

CSV schemas (stable column order):
  series: step,t,newton_iters,energy,cross_helicity,div_u_residual,
          div_B_residual,max_B
  study:  n,h,dofs,err_u_L2,err_B_L2,dissipation_integral,err_total,eoc

Exit codes: 0 success, 1 configuration error, 2 solver error,
3 verification failure.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import analysis, bench, forms, interpolate
from .fespace import H1, HCURL, build_space, discrete_gradient
from .linalg import SingularMatrixError
from .mesh import generate_mesh
from .system import MethodConfig, MHDSystem
from .timestep import NewtonError, TimeGrid, run_transient

CONTOUR_LEVELS = np.linspace(2.5e-5, 1.325e-3, 17)


class ConfigError(Exception):
    pass


_ALLOWED_KEYS = {"scenario", "method", "k", "n", "nu_S", "nu_M", "T", "dt",
                 "style", "seed", "out", "outputs"}
_METHODS = ("unstabilized", "method1", "method2", "method3")


@dataclass
class RunConfig:
    scenario: str
    methods: list
    k: int
    resolutions: list
    nu_S: float = None
    nu_M: float = None
    T: float = None
    dt: object = None
    style: str = None
    seed: int = None
    out: str = "out"
    outputs: list = field(default_factory=lambda: ["csv", "series"])

    def make_scenario(self):
        sc = bench.make_scenario(self.scenario, self.nu_S, self.nu_M)
        if self.T is not None:
            sc.T = self.T
        if self.dt is not None:
            sc.dt_rule = self.dt
        if self.style is not None:
            sc.mesh_style = self.style
        if self.seed is not None:
            sc.seed = self.seed
        return sc


def parse_config(source) -> RunConfig:
    """Parse a JSON config from a path or inline text; validate strictly."""
    if isinstance(source, dict):
        raw = source
    else:
        text = source
        if os.path.exists(source):
            with open(source) as fh:
                text = fh.read()
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    unknown = set(raw) - _ALLOWED_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    if "scenario" not in raw:
        raise ConfigError("missing required key 'scenario'")
    if raw["scenario"] not in bench.SCENARIOS:
        raise ConfigError(f"unknown scenario {raw['scenario']!r}")

    methods = raw.get("method", "method1")
    if isinstance(methods, str):
        methods = [methods]
    for m in methods:
        if m not in _METHODS:
            raise ConfigError(f"unknown method {m!r}")
    k = raw.get("k", 1)
    if k not in (1, 2):
        raise ConfigError(f"unsupported degree k={k} (need 1 or 2)")
    ns = raw.get("n")
    if ns is None:
        ns = []
    elif isinstance(ns, int):
        ns = [ns]
    if any((not isinstance(n, int)) or n < 2 for n in ns):
        raise ConfigError("'n' entries must be integers >= 2")
    style = raw.get("style")
    if style is not None and style not in ("structured", "unstructured"):
        raise ConfigError(f"unknown style {style!r}")
    dt = raw.get("dt")
    if dt is not None and dt != "formula" and not isinstance(dt, (int, float)):
        raise ConfigError("'dt' must be a number or 'formula'")
    outputs = raw.get("outputs", ["csv", "series"])
    bad = set(outputs) - {"csv", "series", "vtk", "contours"}
    if bad:
        raise ConfigError(f"unknown outputs: {sorted(bad)}")
    return RunConfig(
        scenario=raw["scenario"], methods=methods, k=k, resolutions=ns,
        nu_S=raw.get("nu_S"), nu_M=raw.get("nu_M"), T=raw.get("T"), dt=dt,
        style=style, seed=raw.get("seed"), out=raw.get("out", "out"),
        outputs=outputs)


# ---------------------------------------------------------------------------
# output writers


def write_csv(path: str, rows: list, columns: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.16e}"
    return v


def vertex_sample(system: MHDSystem, coeffs: np.ndarray) -> np.ndarray:
    """H(curl) field at mesh vertices by patchwise averaging (the field is
    multivalued at vertices; each adjacent cell contributes its limit)."""
    mesh = system.mesh
    ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    tab = system.V.tabulate(ref)
    vals = system.V.eval_coeff(coeffs, tab, "value")  # (nc, 3, 2)
    out = np.zeros((mesh.n_vertices, 2))
    cnt = np.zeros(mesh.n_vertices)
    np.add.at(out, mesh.triangles.ravel(), vals.reshape(-1, 2))
    np.add.at(cnt, mesh.triangles.ravel(), 1.0)
    return out / cnt[:, None]


def write_vtk(path: str, system: MHDSystem, state) -> None:
    """Legacy ASCII VTK unstructured grid with vertex-sampled u, B, |B|, p."""
    mesh = system.mesh
    u = vertex_sample(system, state.u)
    B = vertex_sample(system, state.B)
    p = state.p[system.Q.mesh.vertex_class]
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nmhdfem snapshot\nASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_vertices} double\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.12g} {y:.12g} 0\n")
        fh.write(f"CELLS {mesh.n_cells} {4 * mesh.n_cells}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {mesh.n_cells}\n")
        fh.write("5\n" * mesh.n_cells)
        fh.write(f"POINT_DATA {mesh.n_vertices}\n")
        fh.write("VECTORS velocity double\n")
        for vx, vy in u:
            fh.write(f"{vx:.12g} {vy:.12g} 0\n")
        fh.write("VECTORS magnetic double\n")
        for vx, vy in B:
            fh.write(f"{vx:.12g} {vy:.12g} 0\n")
        fh.write("SCALARS magnetic_strength double\nLOOKUP_TABLE default\n")
        for v in np.linalg.norm(B, axis=1):
            fh.write(f"{v:.12g}\n")
        fh.write("SCALARS pressure double\nLOOKUP_TABLE default\n")
        for v in p:
            fh.write(f"{v:.12g}\n")


def extract_contours(mesh, z: np.ndarray, levels) -> list:
    """Per-level contour polylines of vertex data by linear interpolation on
    triangles; returns [(level, [polyline arrays (m, 2)])]."""
    out = []
    tris = mesh.triangles
    verts = mesh.vertices
    for level in levels:
        segs = []
        zt = z[tris]
        for c in range(len(tris)):
            pts = []
            for a, b in ((0, 1), (1, 2), (2, 0)):
                za, zb = zt[c, a], zt[c, b]
                if (za - level) * (zb - level) < 0:
                    s = (level - za) / (zb - za)
                    pa, pb = verts[tris[c, a]], verts[tris[c, b]]
                    pts.append((1 - s) * pa + s * pb)
            if len(pts) == 2:
                segs.append((pts[0], pts[1]))
        out.append((float(level), _chain_segments(segs)))
    return out


def _chain_segments(segs, tol=1e-9):
    """Greedy chaining of segments into polylines."""
    polylines = []
    remaining = [(np.asarray(a), np.asarray(b)) for a, b in segs]
    while remaining:
        a, b = remaining.pop()
        chain = [a, b]
        grew = True
        while grew:
            grew = False
            for i, (c, d) in enumerate(remaining):
                if np.linalg.norm(chain[-1] - c) < tol:
                    chain.append(d); remaining.pop(i); grew = True; break
                if np.linalg.norm(chain[-1] - d) < tol:
                    chain.append(c); remaining.pop(i); grew = True; break
                if np.linalg.norm(chain[0] - c) < tol:
                    chain.insert(0, d); remaining.pop(i); grew = True; break
                if np.linalg.norm(chain[0] - d) < tol:
                    chain.insert(0, c); remaining.pop(i); grew = True; break
        polylines.append(np.asarray(chain))
    return polylines


def write_contours(path: str, system: MHDSystem, state, levels=CONTOUR_LEVELS) -> None:
    """Polyline text format: '# level <value>' then one 'x y' pair per line,
    blank line between polylines."""
    B = vertex_sample(system, state.B)
    z = np.linalg.norm(B, axis=1)
    contours = extract_contours(system.mesh, z, levels)
    with open(path, "w") as fh:
        for level, polys in contours:
            fh.write(f"# level {level:.8e}\n")
            for poly in polys:
                for x, y in poly:
                    fh.write(f"{x:.12g} {y:.12g}\n")
                fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands


SERIES_COLUMNS = ["step", "t", "newton_iters", "energy", "cross_helicity",
                  "div_u_residual", "div_B_residual", "max_B"]
STUDY_COLUMNS = ["n", "h", "dofs", "err_u_L2", "err_B_L2",
                 "dissipation_integral", "err_total", "eoc", "error"]


def _series_observer(system, i, state):
    row = analysis.monitor_invariants(system, state)
    row["max_B"] = bench.field_strength_max(system, state)
    return row


def cmd_run(cfg: RunConfig) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    scenario = cfg.make_scenario()
    ns = cfg.resolutions or list(scenario.resolutions)
    for method in cfg.methods:
        for n in ns:
            tag = f"{cfg.scenario}_{method}_k{cfg.k}_n{n}"
            system, records, _, final, _ = bench.run_single(
                scenario, method, cfg.k, n, store_states=False,
                observers=[_series_observer])
            if "series" in cfg.outputs or "csv" in cfg.outputs:
                write_csv(os.path.join(cfg.out, f"series_{tag}.csv"),
                          records, SERIES_COLUMNS)
            if "vtk" in cfg.outputs:
                write_vtk(os.path.join(cfg.out, f"field_{tag}.vtk"), system, final)
            if "contours" in cfg.outputs:
                write_contours(os.path.join(cfg.out, f"contours_{tag}.txt"),
                               system, final)
            print(f"run {tag}: {len(records) - 1} steps written to {cfg.out}")
    return 0


def cmd_study(cfg: RunConfig, threads: int = 1) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    scenario = cfg.make_scenario()
    ns = cfg.resolutions or list(scenario.resolutions)
    overrides = {}
    if cfg.T is not None:
        overrides["T"] = cfg.T
    if cfg.dt is not None:
        overrides["dt_rule"] = cfg.dt
    if cfg.style is not None:
        overrides["mesh_style"] = cfg.style
    if cfg.seed is not None:
        overrides["seed"] = cfg.seed

    failures = 0
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        jobs = [(cfg.scenario, cfg.nu_S, cfg.nu_M, overrides, m, cfg.k, n)
                for m in cfg.methods for n in ns]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            flat = list(pool.map(bench.study_row, *zip(*jobs)))
        by_method = {m: [r for r in flat if r["method"] == m] for m in cfg.methods}
        for rows in by_method.values():
            analysis.attach_eoc([r for r in rows if "err_total" in r])
    else:
        by_method = {m: bench.run_convergence_study(scenario, m, cfg.k, resolutions=ns)
                     for m in cfg.methods}

    for method, rows in by_method.items():
        tag = f"{cfg.scenario}_{method}_k{cfg.k}"
        write_csv(os.path.join(cfg.out, f"study_{tag}.csv"), rows, STUDY_COLUMNS)
        for r in rows:
            if r.get("error"):
                failures += 1
                print(f"study {tag} n={r['n']}: FAILED ({r['error']})")
            else:
                print(f"study {tag} n={r['n']}: err_total={r['err_total']:.4e} "
                      f"eoc={r.get('eoc', float('nan')):.3f}")
    return 2 if failures else 0


def cmd_verify() -> int:
    """Built-in invariant suite; prints PASS/FAIL per check."""
    checks = []

    def check(name, fn):
        try:
            ok, detail = fn()
        except Exception as exc:  # noqa: BLE001
            ok, detail = False, f"exception: {exc}"
        checks.append(ok)
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")

    def commuting():
        mesh = generate_mesh("unit_square", 4)
        V = build_space(mesh, HCURL, 1)
        Q = build_space(mesh, H1, 2)
        G = discrete_gradient(V, Q)
        phi = interpolate.AnalyticField(
            value=lambda x, y, t=0.0: np.sin(np.pi * x) * np.cos(np.pi * y), is_vector=False)
        gphi = interpolate.vector_field(
            lambda x, y, t: np.pi * np.cos(np.pi * x) * np.cos(np.pi * y),
            lambda x, y, t: -np.pi * np.sin(np.pi * x) * np.sin(np.pi * y))
        err = np.abs(interpolate.canonical_interpolate_hcurl(V, gphi)
                     - G @ interpolate.nodal_interpolate_h1(Q, phi)).max()
        return err <= 1e-11, f"max coeff diff {err:.2e}"

    def skew():
        mesh = generate_mesh("unit_square", 4)
        sys_ = MHDSystem(MethodConfig(variant="method1"), mesh)
        rng = np.random.default_rng(0)
        w = rng.standard_normal(sys_.Nu)
        C = forms.assemble_convection(sys_.ctx, w, "c_w_uv")
        err = abs(C + C.T).max()
        return err <= 1e-12, f"||C + C^T||_max {err:.2e}"

    def conservation():
        sc = bench.scenario_orszag_tang()
        sc.nu_S = sc.nu_M = 0.0
        mesh = generate_mesh("periodic_square", 8, "unstructured", sc.seed)
        sys_ = MHDSystem(MethodConfig(variant="unstabilized", nu_S=0.0, nu_M=0.0,
                                      boundary_mode="periodic"), mesh, sc)
        records, _, _ = run_transient(sys_, TimeGrid(T=0.05, dt=1e-2),
                                      observers=[lambda sy, i, s: analysis.monitor_invariants(sy, s)])
        E = np.array([r["energy"] for r in records])
        C = np.array([r["cross_helicity"] for r in records])
        drift = max(np.abs(E - E[0]).max() / E[0], np.abs(C - C[0]).max() / abs(C[0]))
        return drift <= 1e-10, f"max relative drift {drift:.2e}"

    def jacobian_fd():
        mesh = generate_mesh("unit_square", 4)
        cfg = MethodConfig(variant="method1", nu_S=0.5, nu_M=0.5)
        sys_ = MHDSystem(cfg, mesh)
        rng = np.random.default_rng(1)
        old = sys_.zero_state()
        old.u = rng.standard_normal(sys_.Nu)
        old.B = rng.standard_normal(sys_.Nu)
        x = sys_.pack(old) + 0.1 * rng.standard_normal(sys_.n_unknowns)
        new = sys_.unpack(x, 0.01)
        w = sys_.stab_weights(0.5 * (old.u + new.u), 0.5 * (old.B + new.B))
        J = sys_.jacobian(new, old, 0.01, w)
        d = rng.standard_normal(sys_.n_unknowns)
        d /= np.linalg.norm(d)
        eps = 1e-6
        fd = (sys_.residual(sys_.unpack(x + eps * d, 0.01), old, 0.01, w)
              - sys_.residual(sys_.unpack(x - eps * d, 0.01), old, 0.01, w)) / (2 * eps)
        err = np.linalg.norm(fd - J @ d) / np.linalg.norm(J @ d)
        return err <= 1e-6, f"rel FD error {err:.2e}"

    check("commuting diagram I_curl(grad) = grad I_grad", commuting)
    check("convection skew-symmetry", skew)
    check("midpoint conservation smoke test", conservation)
    check("jacobian finite-difference agreement", jacobian_fd)
    return 0 if all(checks) else 3


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mhdfem", description="2D H(curl) MHD solver (see module docstring for config keys)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "study"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file or inline JSON")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="mesh seed override")
        p.add_argument("--threads", type=int, default=1,
                       help="worker processes for study rows (1 = serial)")
    sub.add_parser("verify")
    args = parser.parse_args(argv)

    try:
        if args.command == "verify":
            return cmd_verify()
        cfg = parse_config(args.config)
        if args.out:
            cfg.out = args.out
        if args.seed is not None:
            cfg.seed = args.seed
        if args.command == "run":
            return cmd_run(cfg)
        return cmd_study(cfg, threads=args.threads)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (NewtonError, SingularMatrixError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
