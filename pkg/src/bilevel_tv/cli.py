"""Command-line front end.

Subcommands: ``gen-data`` writes synthetic test pairs, ``run`` drives a
solver from a flat key=value config file, ``verify`` runs the numerical
check suites, and ``report`` compares run traces against a longer
reference run.  Exit codes: 0 on success, 1 on usage or file errors,
2 on numerical failure (a failed verify check or a fatal solve).
"""

import argparse
import os
import sys

import numpy as np

from .adjoint import KrylovConfig
from .grids import add_noise, blur_kernel, convolve, phantom
from .imageio import read_csv, write_csv, write_pgm
from .problems import DeconvolutionProblem, DenoisingProblem
from .solvers import (ImplicitConfig, NumericalError, StepSizes, read_trace, relative_error,
                      run, write_trace)
from .verify import SUITES, run_suites

# Per-problem defaults for every config key the run subcommand understands.
# Desk-scale values, tuned for 32x32 grids; full 128x128 runs want smaller
# sigma and many more steps.  tau/sigma/theta/n_steps default
# to "auto", which picks the per-method values below.
_COMMON = {
    "method": "fifb",
    "tau": "auto", "sigma": "auto", "theta": "auto", "n_steps": "auto",
    "trace_every": "100",
    "guard_steps": "0",
    "krylov_method": "cg",
    "line_search": "1",
    "sigma_shrink": "0.1",
    "max_probes": "6",
    "data": "",
    "reference": "",
    "out": "run_out",
    "seed": "1",
    "n": "32",
}

DEFAULTS = {
    "denoise": dict(_COMMON, **{
        "gamma": "1e-2", "noise": "0.1", "alpha0": "0",
        "rho": "1e-12", "max_inner": "500000", "stop_patience": "3",
        "krylov_tol": "1e-10", "krylov_max_iter": "10000",
        "implicit_sigma": "5e-5", "scale": "auto",
    }),
    "deconv": dict(_COMMON, **{
        "gamma": "1e-2", "noise": "0.005", "beta": "0.01", "kernel": "0.15,0.1,0.75",
        "alpha0": "0.01,0.33333333333333333,0.33333333333333333,0.33333333333333333",
        "rho": "1e-9", "max_inner": "200000", "stop_patience": "1",
        "krylov_tol": "1e-5", "krylov_max_iter": "2000",
        "implicit_sigma": "7.5e-5", "line_search": "0", "scale": "auto",
    }),
}
DEFAULTS["denoise"]["kernel"] = ""

# Step lengths and counts behind the "auto" defaults.  The exact-adjoint
# method pays a Krylov solve per step, so it runs larger sigma for fewer
# steps; the implicit baseline re-solves the inner problem per step and
# wants outer step counts in the hundreds.
STEP_DEFAULTS = {
    ("denoise", "fefb"): {"tau": 2e-3, "sigma": 5e-5, "theta": None, "n_steps": 2000},
    ("denoise", "fifb"): {"tau": 2e-3, "sigma": 2e-6, "theta": 2e-4, "n_steps": 20000},
    ("denoise", "implicit"): {"tau": None, "sigma": None, "theta": None, "n_steps": 300},
    ("deconv", "fefb"): {"tau": 5e-4, "sigma": 5e-6, "theta": None, "n_steps": 700},
    ("deconv", "fifb"): {"tau": 5e-4, "sigma": 3e-6, "theta": 5e-5, "n_steps": 150000},
    ("deconv", "implicit"): {"tau": None, "sigma": None, "theta": None, "n_steps": 1600},
}


def read_config(path):
    """Flat key=value lines; '#' comments; later keys override earlier ones."""
    cfg = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            cfg[key.strip()] = val.strip()
    return cfg


def _floats(s):
    vals = [t for t in s.split(",") if t.strip()]
    if not vals:
        raise ValueError("expected a comma-separated list of numbers")
    return np.array([float(t) for t in vals])


def _bool(s):
    table = {"0": False, "false": False, "no": False, "1": True, "true": True, "yes": True}
    if s.lower() not in table:
        raise ValueError(f"expected a boolean (0/1), got {s!r}")
    return table[s.lower()]


_CONVERT = {
    "n": int, "seed": int, "n_steps": int, "trace_every": int, "max_inner": int,
    "krylov_max_iter": int, "max_probes": int, "stop_patience": int,
    "tau": float, "sigma": float, "theta": float, "gamma": float, "beta": float,
    "noise": float, "rho": float, "implicit_sigma": float, "sigma_shrink": float,
    "krylov_tol": float,
    "alpha0": _floats, "kernel": _floats,
    "line_search": _bool, "guard_steps": _bool,
    "problem": str, "method": str, "data": str, "out": str, "reference": str,
    "krylov_method": str, "scale": str,
}

# keys where "auto" defers to STEP_DEFAULTS at run time
_AUTO_KEYS = ("tau", "sigma", "theta", "n_steps")


def resolve_config(file_cfg, overrides):
    """Merge defaults, the config file, and CLI overrides, then convert types."""
    merged = dict(file_cfg)
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, _, val = item.partition("=")
        merged[key.strip()] = val.strip()
    problem = merged.get("problem", "")
    if problem not in DEFAULTS:
        raise ValueError(f"config key 'problem' must be one of {sorted(DEFAULTS)}, got {problem!r}")
    cfg = dict(DEFAULTS[problem])
    for key, val in merged.items():
        if key != "problem" and key not in cfg:
            raise ValueError(f"unknown config key {key!r}")
        cfg[key] = val
    out = {"problem": problem}
    for key, val in cfg.items():
        if key == "problem":
            continue
        if key == "scale":
            out[key] = None if val in ("", "auto") else float(val)
            continue
        if key == "kernel" and not val:
            out[key] = None
            continue
        if key in _AUTO_KEYS and val == "auto":
            out[key] = None
            continue
        try:
            out[key] = _CONVERT[key](val)
        except ValueError as exc:
            raise ValueError(f"config key {key!r}: {exc}") from None
    return out


def _load_pair(data_dir):
    b, n = read_csv(os.path.join(data_dir, "truth.csv"))
    z, nz = read_csv(os.path.join(data_dir, "observed.csv"))
    if nz != n:
        raise ValueError(f"{data_dir}: truth is {n}x{n} but observed is {nz}x{nz}")
    return b, z, n


def make_pair(problem, n, seed, noise, kernel_weights=None):
    """Synthesize a (truth, observed) image pair."""
    b = phantom(n, seed)
    if problem == "denoise":
        z = add_noise(b, noise, seed + 1)
    else:
        k = blur_kernel(kernel_weights)
        z = add_noise(convolve(k, b, n), noise, seed + 1)
    return b, z


def cmd_gen_data(args):
    problem = args.problem
    kernel_weights = _floats(args.kernel) if problem == "deconv" else None
    noise = args.noise if args.noise is not None else (0.1 if problem == "denoise" else 0.005)
    b, z = make_pair(problem, args.n, args.seed, noise, kernel_weights)
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "truth.csv"), b, args.n)
    write_pgm(os.path.join(args.out, "truth.pgm"), b, args.n)
    write_csv(os.path.join(args.out, "observed.csv"), z, args.n)
    write_pgm(os.path.join(args.out, "observed.pgm"), z, args.n)
    with open(os.path.join(args.out, "data.txt"), "w") as fh:
        fh.write(f"problem={problem}\nn={args.n}\nseed={args.seed}\nnoise={noise}\n")
        if kernel_weights is not None:
            fh.write("kernel=" + ",".join(repr(float(w)) for w in kernel_weights) + "\n")
    print(f"wrote {problem} pair (n={args.n}, seed={args.seed}, noise={noise}) to {args.out}")
    return 0


def _build_problem(cfg, b, z, n):
    if cfg["problem"] == "denoise":
        return DenoisingProblem(z, b, n, gamma=cfg["gamma"])
    return DeconvolutionProblem(z, b, n, gamma=cfg["gamma"], scale=cfg["scale"], beta=cfg["beta"])


def _load_reference(ref_dir, n_alpha):
    alpha, na = _read_alpha(os.path.join(ref_dir, "alpha.csv"))
    if na != n_alpha:
        raise ValueError(f"{ref_dir}: reference has {na} parameters, expected {n_alpha}")
    u_path = os.path.join(ref_dir, "restored.csv")
    u = read_csv(u_path)[0] if os.path.exists(u_path) else None
    return alpha, u


def _read_alpha(path):
    with open(path) as fh:
        line = fh.readline().strip()
    if not line:
        raise ValueError(f"{path}: empty parameter file")
    try:
        alpha = np.array([float(t) for t in line.split(",")])
    except ValueError:
        raise ValueError(f"{path}: malformed parameter line {line!r}") from None
    return alpha, alpha.size


def cmd_run(args):
    file_cfg = read_config(args.config) if args.config else {}
    cfg = resolve_config(file_cfg, args.set)
    if args.out:
        cfg["out"] = args.out
    if cfg["method"] not in ("fefb", "fifb", "implicit"):
        raise ValueError(f"config key 'method' must be fefb, fifb or implicit, "
                         f"got {cfg['method']!r}")
    fills = STEP_DEFAULTS[(cfg["problem"], cfg["method"])]
    for key in _AUTO_KEYS:
        if cfg[key] is None:
            cfg[key] = fills[key]
    if cfg["data"]:
        b, z, n = _load_pair(cfg["data"])
    else:
        kernel_weights = cfg.get("kernel") if cfg["problem"] == "deconv" else None
        b, z = make_pair(cfg["problem"], cfg["n"], cfg["seed"], cfg["noise"], kernel_weights)
        n = cfg["n"]
    problem = _build_problem(cfg, b, z, n)
    steps = StepSizes(cfg["tau"], cfg["sigma"], cfg["theta"])
    inner = ImplicitConfig(rho=cfg["rho"], max_inner=cfg["max_inner"],
                           stop_patience=cfg["stop_patience"],
                           sigma=cfg["implicit_sigma"], line_search=cfg["line_search"],
                           sigma_shrink=cfg["sigma_shrink"], max_probes=cfg["max_probes"])
    krylov = KrylovConfig(method=cfg["krylov_method"], tol=cfg["krylov_tol"],
                          max_iter=cfg["krylov_max_iter"])
    reference = _load_reference(cfg["reference"], problem.n_alpha) if cfg["reference"] else None
    state, trace = run(problem, cfg["method"], steps=steps, n_steps=cfg["n_steps"],
                       trace_every=cfg["trace_every"], alpha0=cfg["alpha0"], implicit=inner,
                       krylov=krylov, reference=reference, guard_steps=cfg["guard_steps"])
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    write_trace(os.path.join(out, "trace.csv"), trace)
    write_csv(os.path.join(out, "restored.csv"), state.u, n)
    write_pgm(os.path.join(out, "restored.pgm"), state.u, n)
    with open(os.path.join(out, "alpha.csv"), "w") as fh:
        fh.write(",".join(repr(float(a)) for a in state.alpha) + "\n")
    with open(os.path.join(out, "run_config.txt"), "w") as fh:
        fh.write(f"problem={cfg['problem']}\n")
        for key in sorted(k for k in cfg if k != "problem"):
            val = cfg[key]
            if isinstance(val, np.ndarray):
                val = ",".join(repr(float(v)) for v in val)
            elif val is None:
                # "auto" re-resolves on a later read; an absent kernel is ""
                val = "" if key == "kernel" else "auto"
            fh.write(f"{key}={val}\n")
    err_in = relative_error(z, b)
    err_out = relative_error(state.u, b)
    alpha_txt = ", ".join(f"{a:.6g}" for a in state.alpha)
    print(f"method={cfg['method']} steps={state.k} resource={state.resource:.3g}")
    print(f"alpha=[{alpha_txt}]  J={problem.outer_value(state.u):.6g}  "
          f"R={problem.reg_value(state.alpha):.6g}")
    print(f"relative error: observed {err_in:.4f} -> restored {err_out:.4f}")
    for k, msg in state.flags:
        print(f"note (step {k}): {msg}")
    print(f"outputs in {out}")
    return 0


def cmd_verify(args):
    names = args.suite if args.suite else None
    results = run_suites(names)
    for res in results:
        print(res.line())
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "verify.csv"), "w") as fh:
            fh.write("name,metric,bound,passed\n")
            for res in results:
                fh.write(f"\"{res.name}\",{res.metric!r},{res.bound!r},{int(res.passed)}\n")
    return 2 if n_fail else 0


def _max_step(rows):
    return max(r["k"] for r in rows)


def cmd_report(args):
    cols_ref, rows_ref = read_trace(os.path.join(args.reference, "trace.csv"))
    alpha_ref, n_alpha = _read_alpha(os.path.join(args.reference, "alpha.csv"))
    ref_steps = _max_step(rows_ref)
    os.makedirs(args.out, exist_ok=True)
    summary = []
    for run_dir in args.runs:
        cols, rows = read_trace(os.path.join(run_dir, "trace.csv"))
        alpha_cols = [c for c in cols if c.startswith("alpha_")]
        if len(alpha_cols) != n_alpha:
            raise ValueError(f"{run_dir}: trace has {len(alpha_cols)} parameters, "
                             f"reference has {n_alpha}")
        steps = _max_step(rows)
        if ref_steps < 1.4 * steps:
            raise ValueError(
                f"reference run is too short to compare against: {ref_steps} steps "
                f"vs {steps} in {run_dir} (needs at least 40% more)")
        name = os.path.basename(os.path.normpath(run_dir))
        out_path = os.path.join(args.out, f"{name}_report.csv")
        with open(out_path, "w") as fh:
            fh.write("k,resource,wall_s,e_alpha_rel,e_u_rel,grad_norm,J,R\n")
            last = None
            for row in rows:
                alpha = np.array([row[c] for c in alpha_cols])
                e_alpha = relative_error(alpha, alpha_ref)
                e_u = row.get("e_u_rel")
                cells = [str(row["k"]), repr(row["resource"]), repr(row["wall_s"]),
                         repr(e_alpha), "" if e_u is None else repr(e_u),
                         repr(row["grad_norm"]), repr(row["J"]), repr(row["R"])]
                fh.write(",".join(cells) + "\n")
                last = (row, e_alpha)
        row, e_alpha = last
        summary.append((name, steps, row["resource"], e_alpha))
        print(f"{name}: final e_alpha_rel={e_alpha:.3e} at step {steps} "
              f"(resource {row['resource']:.3g}) -> {out_path}")
    with open(os.path.join(args.out, "summary.csv"), "w") as fh:
        fh.write("run,steps,resource,final_e_alpha_rel\n")
        for name, steps, resource, e_alpha in summary:
            fh.write(f"{name},{steps},{resource!r},{e_alpha!r}\n")
    print(f"reference: {ref_steps} steps, alpha=[" +
          ", ".join(f"{a:.6g}" for a in alpha_ref) + "]")
    return 0


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1; argparse's default of 2 is reserved for
    # numerical failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def build_parser():
    parser = _Parser(prog="bilevel-tv",
                     description="Learn TV weights and blur kernels by bilevel optimization.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[], help="write a synthetic truth/observed pair")
    p.add_argument("--problem", choices=("denoise", "deconv"), required=True)
    p.add_argument("--n", type=int, default=32, help="grid side length")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--noise", type=float, default=None,
                   help="noise level (default 0.1 denoise, 0.005 deconv)")
    p.add_argument("--kernel", default="0.15,0.1,0.75",
                   help="deconv blur weights center,cross,ring")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("run", help="run a solver from a config file")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="run the numerical verification suites")
    p.add_argument("--suite", action="append", choices=sorted(SUITES),
                   help="suite to run (repeatable; default all)")
    p.add_argument("--out", help="directory for verify.csv")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="compare run traces against a reference run")
    p.add_argument("--reference", required=True, help="reference run directory")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("runs", nargs="+", help="run directories to compare")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
