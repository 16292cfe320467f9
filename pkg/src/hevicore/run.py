"""Run orchestration: config handling, time loop, CSV/field outputs, manifest.

The config is a single JSON document with blocks mirroring the library
modules.  Physics-critical keys (equation set, metric scheme, HEVI method)
have no defaults and must be explicit.
"""

import json
import os
import time

import numpy as np

from . import ark, cases, hevi, hyperdiff, mesh as hmesh, metrics as hmetrics
from .euler import EulerOps
from .state import PhysConstants, StateField, convert_state


class ConfigError(Exception):
    pass


DIAG_COLUMNS = ("t", "mass_loss", "dE_int", "dE_kin", "dE_pot", "dE_tot",
                "p_surf_min", "w_max")


def _require(block, key, where):
    if key not in block:
        raise ConfigError(f"missing required key '{key}' in {where}")
    return block[key]


def load_config(path):
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON (line {e.lineno})") from e


def build_mesh_from_config(cfg):
    mb = _require(cfg, "mesh", "config")
    geometry = _require(mb, "geometry", "mesh block")
    mc = hmesh.MeshConfig(
        geometry=geometry,
        panels_per_edge=int(mb.get("panels_per_edge", 1)),
        n_elem_vertical=int(mb.get("n_elem_vertical", 1)),
        degree=int(mb.get("degree", 4)),
        radius=float(mb.get("radius", 6.371e6)),
        z_top=float(mb.get("z_top", 3.0e4)),
        box_extents=tuple(mb.get("box_extents", (1.0, 1.0, 1.0))),
    )
    m = hmesh.build_mesh(mc)
    case = cfg.get("case", {})
    if case.get("name") == "mountain":
        cc = case_config(cfg)
        m = hmesh.apply_terrain(
            m, lambda lam, phi: cases.mountain_height(lam, phi, cc, mc.radius))
    return m


def case_config(cfg):
    cb = cfg.get("case", {})
    return cases.CaseConfig(
        name=cb.get("name", "mountain"),
        dtheta=float(cb.get("dtheta", 10.0)),
        r_pert=cb.get("r_pert"),
        h_m=float(cb.get("h_m", 15.0e3)),
        a_m=float(cb.get("a_m", 5.0e6)),
        T0=float(cb.get("T0", 300.0)),
        rotation=bool(cb.get("rotation", False)),
    )


def hyper_from_config(cfg, mesh, mets, dt):
    hb = cfg.get("hyperdiff")
    if not hb or not hb.get("enabled", True):
        return None
    hd = hyperdiff.HyperDiffConfig(
        alpha=int(hb.get("alpha", 2)),
        mode=hb.get("mode", "scaled"),
        c=tuple(hb.get("c", (0.0045, 0.0045, 0.0001))),
        nu=tuple(hb.get("nu", (0.0, 0.0, 0.0))),
        nu_h=float(hb.get("nu_h", 0.0)),
        nu_v=float(hb.get("nu_v", 0.0)),
        final_stage_only=bool(hb.get("final_stage_only", False)),
    )
    viscous = hyperdiff.build_viscous_metric(mesh, mets, hd, dt=dt)
    return (hd, viscous)


def build_problem(cfg):
    """Mesh, metrics, operators and initial state from a config dict."""
    set_name = _require(cfg, "equation_set", "config")
    scheme = _require(cfg, "metrics", "config")
    hv = _require(cfg, "hevi", "config")
    method = _require(hv, "method", "hevi block")
    if method not in ("nhevi-gmres", "nhevi-lu", "lhevi"):
        raise ConfigError(f"unknown hevi.method {method!r}")
    dt = float(_require(cfg, "dt", "config"))
    if dt <= 0:
        raise ConfigError("dt must be positive")
    m = build_mesh_from_config(cfg)
    mets = hmetrics.build_metrics(m, scheme)
    if cfg.get("project_metrics", scheme == "curl-invariant"):
        mets = hmetrics.project_metrics_to_columns(mets, m)
    cc = case_config(cfg)
    consts = PhysConstants(omega=7.292e-5 if cc.rotation else 0.0)
    ops2nc = EulerOps(m, mets, consts, "2NC")
    if cc.name == "mountain":
        state = cases.init_mountain(ops2nc, cc)
    elif cc.name == "igw":
        state = cases.init_inertia_gravity(ops2nc, cc)
    elif cc.name == "uniform":
        data = np.zeros((m.nglobal, 5))
        data[:, 0] = 1.2
        data[:, 4] = 300.0
        state = StateField("2NC", data)
    else:
        raise ConfigError(f"unknown case {cc.name!r}")
    hyper = hyper_from_config(cfg, m, mets, dt)
    ops = EulerOps(m, mets, consts, set_name, hyper=hyper)
    if set_name != "2NC":
        state = convert_state(state, set_name, consts, ops.Phi_g)
    ncfg = hevi.NewtonConfig(
        newton_tol=float(hv.get("newton_tol", 1e-5)),
        gmres_tol=float(hv.get("gmres_tol", 1e-9)),
        epsilon=hv.get("epsilon", 0.05),
    )
    lstate = None
    if method == "lhevi":
        lstate = hevi.LheviState(
            update_interval=int(hv.get("update_interval", 5)),
            mode=hv.get("lhevi_mode", "PS"),
        )
        if lstate.mode == "RS":
            lstate.reference = state.data[m.col_gid].copy()
    tab = ark.tableau(cfg.get("tableau", "ARK2"))
    return {
        "mesh": m, "metrics": mets, "constants": consts, "ops": ops,
        "state": state, "tab": tab, "method": method, "newton_cfg": ncfg,
        "lhevi_state": lstate, "dt": dt, "case": cc,
    }


def advance(problem, nsteps, counters=None):
    """March nsteps; returns the final state array."""
    ops, tab, dt = problem["ops"], problem["tab"], problem["dt"]
    method = problem["method"]
    q = problem["state"].data
    hyp = ops.hyper[0].final_stage_only if ops.hyper else False
    for _ in range(nsteps):
        if method == "lhevi":
            q = hevi.step_lhevi(ops, tab, q, dt, problem["lhevi_state"],
                                counters=counters, hyper_final_only=hyp)
        else:
            q = hevi.step_nhevi(ops, tab, q, dt,
                                method=("lu" if method == "nhevi-lu" else "gmres"),
                                cfg=problem["newton_cfg"], counters=counters,
                                hyper_final_only=hyp)
    problem["state"] = StateField(problem["state"].set_name, q)
    return q


def format_row(values):
    return ",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in values)


class DiagnosticsWriter:
    """Mass/energy/pressure time series relative to the initial values."""

    def __init__(self, ops, state0):
        self.ops = ops
        d0 = ops.diagnostics(state0)
        self.mass0 = d0["mass"]
        self.e0 = {k: d0[k] for k in ("energy_internal", "energy_kinetic",
                                      "energy_potential", "energy_total")}
        self.rows = []

    def record(self, t, state):
        d = self.ops.diagnostics(state)
        self.rows.append((
            float(t),
            abs(d["mass"] - self.mass0) / self.mass0,
            d["energy_internal"] - self.e0["energy_internal"],
            d["energy_kinetic"] - self.e0["energy_kinetic"],
            d["energy_potential"] - self.e0["energy_potential"],
            d["energy_total"] - self.e0["energy_total"],
            d["p_surface_min"],
            d["w_vertical_max"],
        ))

    def write(self, path):
        with open(path, "w") as f:
            f.write(",".join(DIAG_COLUMNS) + "\n")
            for row in self.rows:
                f.write(format_row(row) + "\n")


def dump_fields(path_prefix, mesh, state, t):
    """Self-describing field dump: raw float64 array plus a text header."""
    arr = state.data
    arr.tofile(path_prefix + ".bin")
    with open(path_prefix + ".hdr", "w") as f:
        f.write(f"dims {arr.shape[0]} {arr.shape[1]}\n")
        f.write("variables " + " ".join(state.variables) + "\n")
        f.write(f"set {state.set_name}\n")
        f.write(f"time {t:.17g}\n")
        f.write(f"n_z {mesh.n_z}\ncolumns {mesh.ncol}\n")


def run_simulation(cfg, out_dir=None):
    """Execute a configured run; writes diagnostics CSV, field dump, manifest."""
    t_setup = time.perf_counter()
    problem = build_problem(cfg)
    out_dir = out_dir or cfg.get("out_dir", ".")
    os.makedirs(out_dir, exist_ok=True)
    dt = problem["dt"]
    t_end = float(_require(cfg, "t_end", "config"))
    nsteps = int(round(t_end / dt))
    cadence = int(cfg.get("diag_every", 1))
    counters = hevi.SolverCounters()
    ops = problem["ops"]
    diag = DiagnosticsWriter(ops, problem["state"])
    diag.record(0.0, problem["state"])
    t_dyn = time.perf_counter()
    for step in range(1, nsteps + 1):
        advance(problem, 1, counters=counters)
        if step % cadence == 0 or step == nsteps:
            diag.record(step * dt, problem["state"])
    wall_dynamics = time.perf_counter() - t_dyn
    diag.write(os.path.join(out_dir, "diagnostics.csv"))
    dump_fields(os.path.join(out_dir, "fields_final"), problem["mesh"],
                problem["state"], nsteps * dt)
    manifest = {
        "config": cfg,
        "counters": counters.report(),
        "wall_seconds_total": time.perf_counter() - t_setup,
        "wall_seconds_dynamics": wall_dynamics,
        "nsteps": nsteps,
        "mesh_summary": problem["mesh"].summary(),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, default=str)
    return {"problem": problem, "diagnostics": diag, "counters": counters,
            "wall_dynamics": wall_dynamics}


def scaling_run(base_cfg, n_z_values, methods=("nhevi-gmres", "nhevi-lu", "lhevi"),
                nsteps=10, out_path=None):
    """Wall time of the dynamics for each method as n_z grows.

    n_z values must be realizable as Ne_zeta * N_zeta + 1; initialization is
    excluded from the timing, matching the short-horizon protocol.
    """
    N_zeta = int(base_cfg.get("mesh", {}).get("degree", 4))
    rows = []
    for n_z in n_z_values:
        ne, rem = divmod(n_z - 1, N_zeta)
        if rem != 0 or ne < 1:
            raise ConfigError(f"n_z={n_z} is not Ne*N+1 with N={N_zeta}")
        for method in methods:
            cfg = json.loads(json.dumps(base_cfg))
            cfg["mesh"]["n_elem_vertical"] = ne
            cfg["hevi"]["method"] = method
            problem = build_problem(cfg)
            counters = hevi.SolverCounters()
            advance(problem, 1, counters=counters)  # warmup / factorizations
            t0 = time.perf_counter()
            advance(problem, nsteps, counters=counters)
            wall = time.perf_counter() - t0
            rows.append((n_z, method, wall))
    if out_path:
        with open(out_path, "w") as f:
            f.write("n_z,method,wall_seconds\n")
            for r in rows:
                f.write(f"{r[0]},{r[1]},{r[2]:.6f}\n")
    return rows


def reference_solution(problem, t_final, dt_ref):
    """Low-storage RK4 integration of the identical semi-discrete system."""
    ops = problem["ops"]
    set_name = problem["state"].set_name
    hyp = ops.hyper[0].final_stage_only if ops.hyper else False

    def rhs(q):
        st = StateField(set_name, q)
        return ops.rhs_horizontal(st, with_hyperdiff=not hyp) + ops.rhs_vertical(st)

    nsteps = int(round(t_final / dt_ref))
    q = problem["state"].data.copy()
    for _ in range(nsteps):
        q = ark.lsrk4_step(q, dt_ref, rhs)
    return StateField(set_name, q)


def convergence_run(base_cfg, tableaus, dts, t_final, methods=("lhevi", "nhevi-lu"),
                    dt_ref=None, out_path=None, newton_tol=1e-12):
    """Temporal L2(theta) errors against the RK4 reference, per tableau/method.

    Unstable runs are excluded and flagged.  Returns rows of
    (method, tableau, dt, error) plus the fitted orders.
    """
    problem = build_problem(base_cfg)
    if dt_ref is None:
        dt_ref = min(dts) / 8.0
    ref = reference_solution(problem, t_final, dt_ref)
    ops = problem["ops"]
    state0 = problem["state"]
    tab_cache = {name: ark.tableau(name) for name in tableaus}
    ncfg = hevi.NewtonConfig(newton_tol=newton_tol, gmres_tol=1e-12)
    rows = []
    for method in methods:
        for name in tableaus:
            tab = tab_cache[name]
            for dt in dts:
                nsteps = int(round(t_final / dt))
                q = state0.data.copy()
                ok = True
                lstate = hevi.LheviState(update_interval=1) if method == "lhevi" else None
                try:
                    for _ in range(nsteps):
                        if method == "lhevi":
                            q = hevi.step_lhevi(ops, tab, q, dt, lstate)
                        else:
                            q = hevi.step_nhevi(ops, tab, q, dt, method="lu", cfg=ncfg)
                        if not np.all(np.isfinite(q)):
                            ok = False
                            break
                except hevi.StageSolveError:
                    ok = False
                if ok:
                    err = cases.l2_relative_error(StateField(state0.set_name, q), ref, ops)
                    rows.append((method, name, float(dt), err))
                else:
                    rows.append((method, name, float(dt), float("nan")))
    orders = {}
    for method in methods:
        for name in tableaus:
            pts = [(dt, e) for m, n, dt, e in rows
                   if m == method and n == name and np.isfinite(e)]
            if len(pts) >= 2:
                p, _ = cases.fit_order([p[0] for p in pts], [p[1] for p in pts])
                orders[(method, name)] = p
    if out_path:
        with open(out_path, "w") as f:
            f.write("method,integrator,dt,error\n")
            for m, n, dt, e in rows:
                f.write(f"{m},{n},{dt:.17g},{e:.17g}\n")
    return {"rows": rows, "orders": orders, "reference": ref, "problem": problem}


def fitted_scaling_exponents(rows):
    """Log-log slope of wall seconds vs n_z per method."""
    out = {}
    methods = sorted({r[1] for r in rows})
    for method in methods:
        pts = sorted((r[0], r[2]) for r in rows if r[1] == method)
        x = np.log([p[0] for p in pts])
        y = np.log([p[1] for p in pts])
        A = np.vstack([x, np.ones_like(x)]).T
        out[method] = float(np.linalg.lstsq(A, y, rcond=None)[0][0])
    return out
