"""Command line: ``python3 -m muskat3d <command> [--config run.ini] [overrides]``.

Commands: green, dn, theta, evolve, compare, sphere, verify, bench.

The optional INI file has the sections below; unknown sections or keys are
an error.  Command-line flags override file values.

    [grid]        n
    [kernel]      fourier_cutoff, image_radius, switch_height
    [quadrature]  split_width, radial_nodes, angular_nodes, interp_order, upsampling
    [evolve]      kappa, epsilon, t_end, dt_max, cfl_safety, output_stride, dn_tol, scheme
    [initial]     kind, modes, seed, band, lip_target, path, mollify_scale, label
    [run]         out, tol, path_route

``modes`` is a list ``k1,k2,amplitude,phase; ...``.  All numbers are written
with 17 significant digits.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

SCHEMA = {
    "grid": {"n": int},
    "kernel": {"fourier_cutoff": int, "image_radius": int, "switch_height": float},
    "quadrature": {"split_width": float, "radial_nodes": int, "angular_nodes": int,
                   "interp_order": int, "upsampling": int},
    "evolve": {"kappa": float, "epsilon": float, "t_end": float, "dt_max": float,
               "cfl_safety": float, "output_stride": int, "dn_tol": float, "scheme": str},
    "initial": {"kind": str, "modes": str, "seed": int, "band": int, "lip_target": float,
                "path": str, "mollify_scale": float, "label": str},
    "run": {"out": str, "tol": float, "path_route": str},
}


class ConfigError(ValueError):
    pass


def parse_modes(text):
    modes = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        parts = [p.strip() for p in chunk.split(",")]
        if len(parts) not in (3, 4):
            raise ConfigError(f"mode {chunk!r} must be k1,k2,amplitude[,phase]")
        k1, k2 = int(parts[0]), int(parts[1])
        a = float(parts[2])
        ph = float(parts[3]) if len(parts) == 4 else 0.0
        modes.append((k1, k2, a, ph))
    return tuple(modes)


def read_config(path):
    """Parse an INI file into {section: {key: typed value}}, rejecting unknown names."""
    cp = configparser.ConfigParser(interpolation=None)
    with open(path) as fh:
        cp.read_file(fh)
    out = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        out[sec] = {}
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            try:
                out[sec][key] = SCHEMA[sec][key](raw)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}") from None
    return out


@dataclass
class RunConfig:
    sections: dict = field(default_factory=dict)

    def get(self, sec, key, default=None):
        return self.sections.get(sec, {}).get(key, default)

    def set(self, sec, key, value):
        if value is not None:
            self.sections.setdefault(sec, {})[key] = value

    @property
    def n(self):
        return int(self.get("grid", "n", 64))

    def kernel(self):
        from .green_kernel import KernelConfig
        return KernelConfig(**self.sections.get("kernel", {}))

    def quadrature(self):
        from ._quadrature import QuadratureConfig
        return QuadratureConfig(**self.sections.get("quadrature", {}))

    def initial(self, section="initial"):
        from .initial_data import InitialDataSpec
        d = dict(self.sections.get(section, {}))
        if "modes" in d:
            d["modes"] = parse_modes(d["modes"]) if isinstance(d["modes"], str) else d["modes"]
        return InitialDataSpec(**d)

    def evolve(self):
        from .evolution import EvolveConfig
        return EvolveConfig(n=self.n, kernel=self.kernel(), quadrature=self.quadrature(),
                            mollify_scale=float(self.get("initial", "mollify_scale", 0.0)),
                            **self.sections.get("evolve", {}))

    def echo(self):
        """Fully resolved settings, as written next to every output."""
        d = {"grid": {"n": self.n}, "kernel": asdict(self.kernel()),
             "quadrature": asdict(self.quadrature())}
        spec = self.initial()
        d["initial"] = {k: (list(map(list, v)) if k == "modes" else v)
                        for k, v in asdict(spec).items()}
        d["run"] = dict(self.sections.get("run", {}))
        d["evolve"] = dict(self.sections.get("evolve", {}))
        return d


# ---------------------------------------------------------------------------
# argument handling


def _common(p, initial=True):
    p.add_argument("--config", help="INI file with run settings")
    p.add_argument("--n", type=int, help="grid points per side (power of two)")
    if initial:
        p.add_argument("--kind", choices=("fourier_sum", "random_bandlimited", "sampled"))
        p.add_argument("--modes", help="k1,k2,amplitude,phase; ...")
        p.add_argument("--seed", type=int)
        p.add_argument("--band", type=int)
        p.add_argument("--lip", type=float, help="rescale the height to this Lipschitz constant")
        p.add_argument("--path", help="height file (.csv, .bin or .f64)")
        p.add_argument("--mollify", type=float, help="mollifier width")
    p.add_argument("--out", help="output file or directory")


def build_config(args):
    cfg = RunConfig(read_config(args.config) if getattr(args, "config", None) else {})
    cfg.set("grid", "n", getattr(args, "n", None))
    for flag, key in (("kind", "kind"), ("modes", "modes"), ("seed", "seed"), ("band", "band"),
                      ("lip", "lip_target"), ("path", "path"), ("mollify", "mollify_scale")):
        cfg.set("initial", key, getattr(args, flag, None))
    for flag in ("kappa", "epsilon", "t_end", "dt_max", "cfl_safety", "output_stride", "scheme"):
        cfg.set("evolve", flag, getattr(args, flag, None))
    cfg.set("run", "out", getattr(args, "out", None))
    cfg.set("run", "tol", getattr(args, "tol", None))
    cfg.set("run", "path_route", getattr(args, "route", None))
    return cfg


def _fmt(x):
    return format(float(x), ".17g")


def _dump(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.bool_,)):
        return bool(o)
    return str(o)


def _height(cfg: RunConfig, section="initial"):
    from .initial_data import build
    return build(cfg.initial(section), cfg.n)


def _sidecar(out, cfg: RunConfig, extra=None):
    d = {"config": cfg.echo()}
    d.update(extra or {})
    Path(str(out) + ".config.json").write_text(
        json.dumps(d, indent=2, sort_keys=True, default=_json_default) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_green(args):
    from .green_kernel import GreenKernel, SingularPointError, KernelAccuracyError
    cfg = build_config(args)
    k = GreenKernel(cfg.kernel())
    pts = []
    if args.points:
        with open(args.points) as fh:
            for row in csv.reader(fh):
                if row and not row[0].strip().startswith(("#", "x")):
                    pts.append(tuple(float(v) for v in row[:3]))
    pts += [tuple(p) for p in (args.point or [])]
    if not pts:
        raise ConfigError("no points given (use --point x1 x2 z or --points file.csv)")
    rows = []
    try:
        for x1, x2, z in pts:
            ev = k.gamma((x1, x2), z, tol=args.tol)
            eg = k.grad_gamma((x1, x2), z, tol=args.tol)
            r = math.sqrt((x1 - round(x1)) ** 2 + (x2 - round(x2)) ** 2 + z * z)
            free = -1.0 / (4 * math.pi * r)
            rows.append([x1, x2, z, ev.value, *ev.gradient, ev.err_bound, eg.err_bound,
                         ev.value / free])
    except (SingularPointError, KernelAccuracyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    header = ["x1", "x2", "z", "value", "d1", "d2", "dz", "err_value", "err_gradient",
              "ratio_free_space"]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    wr = csv.writer(fh)
    wr.writerow(header)
    for r in rows:
        wr.writerow([_fmt(v) for v in r])
    if args.out:
        fh.close()
        _sidecar(args.out, cfg)
    return 0


def _data(cfg: RunConfig, f, args):
    """Boundary data g: the height itself unless --g-modes is given."""
    from .initial_data import fourier_sum
    if args.g_modes:
        return fourier_sum(f.grid, parse_modes(args.g_modes))
    return np.array(f.values)


def cmd_dn(args):
    from .dn_operator import apply_dn, dn_flat_oracle
    cfg = build_config(args)
    f = _height(cfg)
    g = _data(cfg, f, args)
    tol = float(cfg.get("run", "tol", 1e-8))
    route = cfg.get("run", "path_route", "single_layer_tangential")
    res = apply_dn(f, g, tol=tol, cfg=cfg.kernel(), path=route, quad=cfg.quadrature())
    summary = {"n": cfg.n, "path": res.path, "tol": tol, "iterations": res.iterations,
               "mean_abs": res.mean_abs, "pairing": res.pairing, "timing": res.timing}
    if np.ptp(f.values) == 0.0:
        ex = dn_flat_oracle(g)
        nrm = np.linalg.norm(ex)
        summary["flat_oracle_rel_error"] = float(np.linalg.norm(res.values - ex) / nrm) if nrm else float(np.abs(res.values).max())
    out = cfg.get("run", "out")
    if out:
        res.save_csv(out, {"config": cfg.echo()})
    _dump(summary)
    return 0


def cmd_theta(args):
    from .layer_ops import LayerOperators
    cfg = build_config(args)
    f = _height(cfg)
    g = _data(cfg, f, args)
    tol = float(cfg.get("run", "tol", 1e-8))
    ops = LayerOperators(f, cfg.kernel(), cfg.quadrature())
    dens = ops.solve_density(g, tol=tol)
    sheet = ops.sheet_strength(dens)
    r1, r2 = ops.relation_residuals(dens, g)
    summary = {"n": cfg.n, "iterations": dens.iterations, "residual_norm": dens.residual_norm,
               "relation_residual_sup": float(max(np.abs(r1).max(), np.abs(r2).max())),
               "tangency_sup": float(np.abs(np.sum(sheet.w * ops.normal, axis=0)).max())}
    out = cfg.get("run", "out")
    if out:
        dens.save_csv(out, {"config": cfg.echo()})
        sheet.save_csv(str(Path(out).with_suffix("")) + "_w.csv", {"config": cfg.echo()})
    _dump(summary)
    return 0


def cmd_evolve(args):
    from .evolution import EvolutionAborted, run, write_trajectory, modulus_monitor
    cfg = build_config(args)
    ecfg = cfg.evolve()
    f0 = _height(replace(cfg, sections={**cfg.sections,
                                        "initial": {k: v for k, v in cfg.sections.get("initial", {}).items()
                                                    if k != "mollify_scale"}}))
    out = cfg.get("run", "out", "evolve_out")
    try:
        traj, rep = run(f0, ecfg)
    except EvolutionAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.trajectory:
            from .evolution import decay_report
            rep = decay_report(exc.trajectory, ecfg, aborted=str(exc))
            write_trajectory(out, exc.trajectory, rep, ecfg, {"run_config": cfg.echo()})
        return 3
    mods = modulus_monitor(traj, [1.0 / ecfg.n, 0.5])
    write_trajectory(out, traj, rep, ecfg, {"run_config": cfg.echo(),
                                            "modulus": {str(k): {kk: vv for kk, vv in v.items() if kk != "series"}
                                                        for k, v in mods.items()}})
    _dump({"outputs": len(traj), "fitted_l2_rate": rep.fitted_l2_rate, "c_fit": rep.c_fit,
           "predicted_rate_floor": rep.predicted_rate_floor, "monotone_linf": rep.monotone_linf,
           "monotone_lip": rep.monotone_lip, "monotone_l2": rep.monotone_l2,
           "mean_drift": rep.mean_drift, "wall_clock": rep.wall_clock, "out": str(out),
           "experimental": ecfg.experimental})
    return 0


def cmd_compare(args):
    from .evolution import comparison_run
    from .initial_data import fourier_sum
    cfg = build_config(args)
    ecfg = cfg.evolve()
    low = _height(cfg)
    extra = fourier_sum(low.grid, parse_modes(args.high_modes)) if args.high_modes else 0.0
    high = low.with_values(low.values + args.offset + extra)
    if np.any(high.values < low.values) and args.ordered:
        raise ConfigError("the high field must lie above the low field at every node")
    rep = comparison_run(low, high, ecfg)
    res = {"max_ratio": rep.max_ratio, "min_gap": rep.min_gap,
           "initial_distance": rep.initial_distance, "mean_drift": rep.mean_drift,
           "outputs": len(rep.times)}
    out = cfg.get("run", "out")
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        with open(Path(out) / "comparison.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "ratio", "gap"])
            for row in zip(rep.times, rep.ratio_series, rep.gap_series):
                wr.writerow([_fmt(v) for v in row])
        (Path(out) / "report.json").write_text(json.dumps(
            {"report": rep.as_dict(), "config": cfg.echo()}, indent=2, sort_keys=True,
            default=_json_default) + "\n")
    _dump(res)
    return 0


def cmd_sphere(args):
    from .sphere_dn import (RefinementError, random_sphere_points, real_spherical_harmonic,
                            sphere_dn_at_point)
    Y = real_spherical_harmonic(args.l, args.m)
    if args.point:
        pts = np.array([args.point], dtype=float)
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    else:
        pts = random_sphere_points(args.count, args.seed)
    rows = []
    for x in pts:
        try:
            v = sphere_dn_at_point(Y, x, tol=args.tol)
        except RefinementError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        exact = args.l * float(Y(x))
        rows.append({"point": x.tolist(), "value": v.value,
                     "quad_error_estimate": v.quad_error_estimate,
                     "n_refinements": v.n_refinements, "eigen_oracle": exact,
                     "abs_error": abs(v.value - exact)})
    _dump({"l": args.l, "m": args.m, "results": rows}, args.out)
    return 0


def cmd_verify(args):
    from .verification import run_suite, summary
    t0 = time.perf_counter()
    kcfg = build_config(args).kernel()
    results = run_suite(args.suite, n=args.n or 64, log=lambda s: print(s, file=sys.stderr),
                        kernel_cfg=kcfg, tol=args.tol)
    s = summary(results)
    s["seconds"] = time.perf_counter() - t0
    _dump(s, args.out)
    return 0 if s["passed"] else 1


def cmd_bench(args):
    import numba
    from .verification import dn_timing
    sizes = args.sizes or [32, 64]
    dn_timing(sizes[0])
    times = {n: dn_timing(n, repeats=args.repeats) for n in sizes}
    res = {"threads": numba.get_num_threads(), "apply_dn_seconds": times}
    if len(sizes) > 1:
        res["ratios"] = {f"{a}->{b}": times[b] / times[a] for a, b in zip(sizes[:-1], sizes[1:])}
    _dump(res, args.out)
    return 0


def make_parser():
    ap = argparse.ArgumentParser(prog="muskat3d", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("green", help="evaluate Gamma and its gradient at points")
    _common(p, initial=False)
    p.add_argument("--point", nargs=3, type=float, action="append", metavar=("X1", "X2", "Z"))
    p.add_argument("--points", help="CSV file of x1,x2,z rows")
    p.add_argument("--tol", type=float, help="reject evaluations with a larger error bound")
    p.set_defaults(func=cmd_green)

    for name, fn, hlp in (("dn", cmd_dn, "apply the Dirichlet-Neumann operator"),
                          ("theta", cmd_theta, "solve for the double-layer density")):
        p = sub.add_parser(name, help=hlp)
        _common(p)
        p.add_argument("--g-modes", help="boundary data as a Fourier sum (default: g = f)")
        p.add_argument("--tol", type=float, help="density solve tolerance")
        if name == "dn":
            p.add_argument("--route", choices=("single_layer_tangential", "cross_product"))
        p.set_defaults(func=fn)

    for name, fn, hlp in (("evolve", cmd_evolve, "run the regularised evolution"),
                          ("compare", cmd_compare, "co-evolve an ordered pair")):
        p = sub.add_parser(name, help=hlp)
        _common(p)
        for flag, typ in (("kappa", float), ("epsilon", float), ("t_end", float),
                          ("dt_max", float), ("cfl_safety", float), ("output_stride", int)):
            p.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ)
        p.add_argument("--scheme", choices=("euler", "heun"))
        if name == "compare":
            p.add_argument("--offset", type=float, default=0.05, help="constant lift of the high field")
            p.add_argument("--high-modes", help="extra Fourier sum added to the high field")
            p.add_argument("--unordered", dest="ordered", action="store_false")
        p.set_defaults(func=fn)

    p = sub.add_parser("sphere", help="DN operator of the unit ball at boundary points")
    p.add_argument("--l", type=int, default=2)
    p.add_argument("--m", type=int, default=0)
    p.add_argument("--point", nargs=3, type=float)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sphere)

    p = sub.add_parser("verify", help="run acceptance checks; nonzero exit on failure")
    p.add_argument("suite", nargs="?", default="all",
                   choices=("kernel", "layer", "dn", "evolve", "sphere", "bench", "all"))
    p.add_argument("--n", type=int, help="grid of the grid-based checks (default 64)")
    p.add_argument("--config", help="INI file; its [kernel] section is used by the kernel checks")
    p.add_argument("--tol", type=float, default=1e-10, help="certified kernel accuracy")
    p.add_argument("--out", help="write the JSON report here as well")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="time apply_dn across grid sizes")
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--repeats", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
