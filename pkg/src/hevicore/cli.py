"""Command line driver.

Subcommands: run, scaling, convergence, stability-region, verify.
Exit codes: 0 success, 2 config error, 3 solver failure.
"""

import argparse
import json
import sys

import numpy as np

from . import ark, hevi, metrics as hmetrics, mesh as hmesh, run as hrun


def _apply_overrides(cfg, args):
    if getattr(args, "method", None):
        cfg.setdefault("hevi", {})["method"] = args.method
    if getattr(args, "tableau", None):
        cfg["tableau"] = args.tableau
    if getattr(args, "out", None):
        cfg["out_dir"] = args.out
    if getattr(args, "workers", None):
        cfg["workers"] = args.workers  # serial is the reproducible default
    return cfg


def cmd_run(args):
    cfg = _apply_overrides(hrun.load_config(args.config), args)
    res = hrun.run_simulation(cfg, out_dir=cfg.get("out_dir", args.out or "."))
    last = res["diagnostics"].rows[-1]
    print(f"steps done; final t={last[0]:g}, mass_loss={last[1]:.3e}, "
          f"wall_dynamics={res['wall_dynamics']:.2f}s")
    return 0


def cmd_scaling(args):
    cfg = _apply_overrides(hrun.load_config(args.config), args)
    n_z = [int(v) for v in args.n_z.split(",")]
    out = (args.out or ".") + "/scaling.csv"
    rows = hrun.scaling_run(cfg, n_z, nsteps=args.steps, out_path=out)
    for r in rows:
        print(f"n_z={r[0]:4d} {r[1]:12s} {r[2]:.3f}s")
    exps = hrun.fitted_scaling_exponents(rows)
    for m, e in sorted(exps.items()):
        print(f"fitted exponent {m}: {e:.2f}")
    print(f"wrote {out}")
    return 0


def cmd_convergence(args):
    cfg = _apply_overrides(hrun.load_config(args.config), args)
    dts = [float(v) for v in args.dts.split(",")]
    tabs = args.tableaus.split(",")
    out = (args.out or ".") + "/convergence.csv"
    res = hrun.convergence_run(cfg, tabs, dts, args.t_final,
                               methods=tuple(args.methods.split(",")),
                               out_path=out)
    for (method, name), p in sorted(res["orders"].items()):
        print(f"{method} {name}: fitted order {p:.2f}")
    print(f"wrote {out}")
    return 0


def cmd_stability(args):
    names = args.tableaus.split(",")
    path = (args.out or ".") + "/stability.csv"
    with open(path, "w") as f:
        f.write("tableau,k_s,k_f,amp\n")
        for name in names:
            grid = ark.stability_region(ark.tableau(name), ks_max=args.ks_max,
                                        kf_max=args.kf_max, n_ks=args.n, n_kf=args.n)
            for a, kf in enumerate(grid.kf):
                for b, ks in enumerate(grid.ks):
                    f.write(f"{name},{ks:.17g},{kf:.17g},{grid.amp[a, b]:.17g}\n")
    print(f"wrote {path}")
    return 0


def _verify_tableaux():
    ok = True
    for name in ark.tableau_names():
        tab = ark.tableau(name)
        r = ark.order_condition_residuals(tab)
        bb = float(np.max(np.abs(tab.b - tab.b_im)))
        line_ok = r <= 1e-12 and bb == 0.0
        ok &= line_ok
        print(f"  {name}: order-condition residual {r:.2e} (tol 1e-12), "
              f"|b - b~| {bb:.1e}  {'PASS' if line_ok else 'FAIL'}")
    return ok


def _verify_metrics():
    cfg = hmesh.MeshConfig(geometry="sphere", panels_per_edge=3, n_elem_vertical=2,
                           degree=4, radius=6.371e6, z_top=3.0e4)
    m = hmesh.build_cubed_sphere(cfg)
    ok = True
    for scheme, tol, expect_fail in (("curl-invariant", 1e-11, False),
                                     ("cross-product", 1e-8, True)):
        mets = hmetrics.build_metrics(m, scheme)
        div = 0.0
        for F in ((1.0, 0.0, 0.0), (0.3, -1.0, 2.0)):
            d = hmetrics.constant_field_divergence(m, mets, F)
            div = max(div, float(np.max(np.abs(d))) * m.cfg.radius)
        if expect_fail:
            line_ok = div >= tol
            print(f"  {scheme}: free-stream divergence {div:.2e} "
                  f"(expected >= {tol})  {'PASS' if line_ok else 'FAIL'}")
        else:
            line_ok = div <= tol
            print(f"  {scheme}: free-stream divergence {div:.2e} "
                  f"(tol {tol})  {'PASS' if line_ok else 'FAIL'}")
        ok &= line_ok
    return ok


def _verify_jacobian():
    from .euler import EulerOps
    from .state import PhysConstants

    m = hmesh.build_box(hmesh.MeshConfig(geometry="box", panels_per_edge=2,
                                         n_elem_vertical=3, degree=4,
                                         box_extents=(1e3, 1e3, 1e3), z_top=1e3))
    mets = hmetrics.project_metrics_to_columns(hmetrics.curl_invariant_metrics(m), m)
    rng = np.random.default_rng(0)
    ok = True
    for set_name in ("2NC", "2C", "3C"):
        ops = EulerOps(m, mets, PhysConstants(omega=0.0), set_name)
        worst = 0.0
        for _ in range(10):
            q = np.zeros((m.nglobal, 5))
            q[:, 0] = 1.2 * (1 + 0.1 * rng.standard_normal(m.nglobal))
            q[:, 1:4] = 2.0 * rng.standard_normal((m.nglobal, 3))
            base = {"2NC": 300.0, "2C": 360.0, "3C": 2.7e5}[set_name]
            q[:, 4] = base * (1 + 0.05 * rng.standard_normal(m.nglobal))
            if set_name == "3C":
                q[:, 4] += q[:, 0] * ops.Phi_g
            qcol = q[m.col_gid]
            worst = max(worst, jacobian_fd_error(ops, qcol, 3.7, rng))
        line_ok = worst <= 1e-6
        ok &= line_ok
        print(f"  {set_name}: max FD-vs-analytic relative error {worst:.2e} "
              f"(tol 1e-6)  {'PASS' if line_ok else 'FAIL'}")
    return ok


def band_matvec(band, kl, ku, v):
    """y = A v for a batch of band-stored matrices (verification helper)."""
    ncol, rows, M = band.shape
    y = np.zeros((ncol, M))
    for j in range(M):
        lo, hi = max(0, j - ku), min(M - 1, j + kl)
        y[:, lo:hi + 1] += band[:, kl + ku + lo - j:kl + ku + hi - j + 1, j] \
            * v[:, j][:, None]
    return y


def jacobian_fd_error(ops, qcol, lam, rng, h=1e-7):
    band = ops.column_jacobian(qcol, lam)
    scale = np.max(np.abs(qcol), axis=(0, 1))
    v = rng.standard_normal(qcol.shape) * scale
    Fp = hevi.residual(ops, qcol + h * v, lam, 0.0)
    Fm = hevi.residual(ops, qcol - h * v, lam, 0.0)
    fd = (Fp - Fm) / (2 * h)
    an = band_matvec(band, ops.kl, ops.ku, v.reshape(ops.ncol, -1)).reshape(qcol.shape)
    return float(np.max(np.abs(an - fd)) / np.max(np.abs(fd)))


def _verify_solvers():
    rng = np.random.default_rng(1)
    n_z, ncol = 8, 4
    M = 5 * n_z
    A = 0.3 * rng.standard_normal((M, M))
    i, j = np.indices(A.shape)
    A[np.abs(i - j) > 9] = 0.0
    vop = hevi.LinearColumnOperator(A, ncol, n_z)
    R = rng.standard_normal((ncol, n_z, 5))
    guess = np.zeros_like(R)
    cfg = hevi.NewtonConfig(newton_tol=1e-12, gmres_tol=1e-12)
    qlu = hevi.solve_stage_lu(vop, 0.7, R, guess, cfg=cfg)
    qgm = hevi.solve_stage_jfnk(vop, 0.7, R, guess, cfg=cfg)
    diff = float(np.max(np.abs(qlu - qgm)) / np.max(np.abs(qlu)))
    ok = diff <= 1e-9
    print(f"  linear stage problem: LU vs JFNK difference {diff:.2e} "
          f"(tol 1e-9)  {'PASS' if ok else 'FAIL'}")
    res = float(np.max(np.abs(hevi.residual(vop, qlu, 0.7, R))))
    ok2 = res <= 1e-10
    print(f"  stage residual at LU solution {res:.2e} (tol 1e-10)  "
          f"{'PASS' if ok2 else 'FAIL'}")
    return ok and ok2


def cmd_verify(args):
    suites = {"tableaux": _verify_tableaux, "metrics": _verify_metrics,
              "jacobian": _verify_jacobian, "solvers": _verify_solvers}
    names = list(suites) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        print(f"[{name}]")
        ok &= suites[name]()
    print("verify:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def main(argv=None):
    ap = argparse.ArgumentParser(prog="hevicore")
    sub = ap.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="run a configured simulation")
    pr.add_argument("--config", required=True)
    pr.add_argument("--out", default=None)
    pr.add_argument("--method", default=None)
    pr.add_argument("--tableau", default=None)
    pr.add_argument("--workers", type=int, default=None)
    pr.set_defaults(func=cmd_run)

    ps = sub.add_parser("scaling", help="wall time vs n_z for the HEVI variants")
    ps.add_argument("--config", required=True)
    ps.add_argument("--n-z", dest="n_z", default="13,25,49,97")
    ps.add_argument("--steps", type=int, default=10)
    ps.add_argument("--out", default=None)
    ps.add_argument("--method", default=None)
    ps.add_argument("--tableau", default=None)
    ps.set_defaults(func=cmd_scaling)

    pc = sub.add_parser("convergence", help="temporal order study")
    pc.add_argument("--config", required=True)
    pc.add_argument("--tableaus", default="ARK2,ARK3,ARS3,ARK4,ARK5")
    pc.add_argument("--dts", default="400,200,100,50,25,12.5")
    pc.add_argument("--t-final", dest="t_final", type=float, default=3600.0)
    pc.add_argument("--methods", default="lhevi,nhevi-lu")
    pc.add_argument("--out", default=None)
    pc.add_argument("--method", default=None)
    pc.add_argument("--tableau", default=None)
    pc.set_defaults(func=cmd_convergence)

    pb = sub.add_parser("stability-region", help="|R| of the split oscillator")
    pb.add_argument("--tableaus", default="ARK2,ARK3,ARS3,ARK4,ARK5")
    pb.add_argument("--ks-max", dest="ks_max", type=float, default=4.0)
    pb.add_argument("--kf-max", dest="kf_max", type=float, default=40.0)
    pb.add_argument("-n", type=int, default=81)
    pb.add_argument("--out", default=None)
    pb.set_defaults(func=cmd_stability)

    pv = sub.add_parser("verify", help="module property suites")
    pv.add_argument("suite", choices=["metrics", "jacobian", "tableaux",
                                      "solvers", "all"])
    pv.set_defaults(func=cmd_verify)

    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except hrun.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except hevi.StageSolveError as e:
        print(f"solver failure: {e} (stage {e.stage}, column {e.column})",
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
