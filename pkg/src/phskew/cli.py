"""Command line interface.

Each subcommand reads its inputs, runs one computation and writes two files
into the output directory: ``report.tsv`` (deterministic, byte-identical for
equal inputs and seed, whatever the worker count) and ``manifest.json``
(input hashes, seed, versions, wall time, timestamp).

Exit status: 0 success, 2 refusal or inconclusive result, 1 error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (InconclusiveResolution, InconsistentRates, NoConvergence, NotAnosovBase, ParseError,
                     PhskewError)
from .io import read_ifs, read_run_config, read_skew

EXIT_OK, EXIT_ERROR, EXIT_REFUSED = 0, 1, 2
OUTPUT_ENV = "PHSKEW_OUTPUT"     # the only environment setting: default output directory

TOP_KEYS = {"input": "str", "fiber_matrix": "str", "seed": "int", "workers": "int",
            "output": "str"}
# seed stays None when not given: IFS files then keep their own seed
TOP_DEFAULTS = {"workers": 1, "output": "phskew-out"}

# name -> (kind, default, help)
PARAMS = {
    "certify-matrix": {
        "k": ("int", 1, "power of the base used with --fiber-matrix"),
    },
    "classify-skew": {
        "l": ("int", 1, "dimension index for the three-block class"),
        "ds": ("pairs", None, "dominated splitting rates low:high,...; default splits "
                              "the fiber spectrum at its largest gap"),
    },
    "holonomy": {
        "kind": ("str", "u", "u, s or loop"),
        "y": ("vec", None, "base point"),
        "delta": ("float", 0.01, "leaf distance (loop size for kind=loop)"),
        "samples": ("int", 8, "number of random fiber points"),
        "tol": ("float", 1e-10, "a-posteriori error target"),
        "max_depth": ("int", 200, "depth cap"),
    },
    "accessibility": {
        "y": ("vec", None, "base point of the loop family"),
        "sigma": ("float", 0.02, "loop family scale"),
        "theta": ("float", 0.75, "Holder exponent"),
        "K0": ("int", None, "multiplicity bound of the cover"),
        "eps_light": ("float", None, "lightness constant"),
        "grid_step": ("float", 0.25, "slice sampling step"),
        "tol": ("float", 1e-10, "holonomy tolerance"),
        "x0": ("vec", None, "fiber base point"),
        "max_subsets": ("int", 10000, "cap on enumerated subsets (inconclusive beyond)"),
    },
    "deform-verify": {
        "x": ("vec", None, "fiber point"),
        "h": ("float", 1e-4, "finite-difference step"),
        "tol": ("float", 1e-13, "holonomy tolerance"),
        "loop": ("int", 0, "index of the loop to test"),
        "Lambda": ("float", None, "constant of the residual bound; default C of the deformation"),
        "sweep_sigmas": ("vec", None, "run a sweep over these sigmas"),
        "sweep_periods": ("ivec", None, "periodic orbit periods matching sweep_sigmas"),
        "samples": ("int", 4, "fiber points for the leaf-distance scaling report"),
        "n_max": ("int", 1000000, "cap on the return time search"),
    },
    "certify": {
        "b": ("int", 1, "codimension of the subspaces"),
        "n0": ("int", 2, "word length"),
        "res_x": ("int", 4, "points per axis"),
        "res_E": ("int", 64, "Grassmannian resolution"),
        "samples": ("int", 10000, "Monte Carlo words"),
        "mode": ("str", "auto", "auto, enumerate or mc"),
        "refine": ("bool", True, "local refinement of the extremal subspaces"),
    },
    "lyapunov": {
        "x0": ("vec", None, "initial point"),
        "n": ("int", 100000, "orbit length"),
        "stream_id": ("int", 0, "random stream"),
    },
    "density": {
        "x0": ("vec", None, "initial point"),
        "n": ("int", 1000000, "orbit length"),
        "eps": ("float", 0.01, "half side of the cells"),
        "stream_id": ("int", 0, "random stream"),
        "bins": ("int", 20, "first-visit histogram bins"),
    },
}

CHOICES = {("holonomy", "kind"): ("u", "s", "loop"),
           ("certify", "mode"): ("auto", "enumerate", "mc")}
POSITIVE = {"k", "l", "delta", "samples", "tol", "max_depth", "sigma", "K0", "eps_light",
            "grid_step", "h", "Lambda", "b", "n0", "res_x", "res_E", "n", "eps", "bins",
            "max_subsets", "n_max"}
NONNEG = {"loop", "stream_id"}


# --------------------------------------------------------------- reporting

def fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(fmt(x) for x in np.asarray(v, dtype=object).ravel())
    return str(v).replace("\t", " ").replace("\n", " ")


class Report:
    def __init__(self):
        self.rows = []
        self.tables = {}        # name -> (header, rows), written as name.tsv
        self.verdict = None

    def add(self, section, key, value):
        self.rows.append((section, str(key), fmt(value)))

    def inequality(self, section, row):
        name, lhs, rhs, margin, verdict = row.record()
        for k, v in (("lhs", lhs), ("rhs", rhs), ("margin", margin), ("verdict", verdict)):
            self.add(section, f"{name}.{k}", v)

    def table(self, name, header, rows):
        self.tables[name] = (list(header), [[fmt(v) for v in r] for r in rows])

    def render(self) -> str:
        lines = ["section\tkey\tvalue"] + ["\t".join(r) for r in self.rows]
        return "\n".join(lines) + "\n"

    def render_table(self, name) -> str:
        header, rows = self.tables[name]
        return "\n".join(["\t".join(header)] + ["\t".join(r) for r in rows]) + "\n"


# ---------------------------------------------------------- option parsing

def _parse_flag(kind, text):
    if kind == "int":
        return int(text)
    if kind == "float":
        v = float(text)
        if not math.isfinite(v):
            raise ValueError("must be finite")
        return v
    if kind == "bool":
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"expected true or false, got {text!r}")
    if kind == "vec":
        return tuple(float(t) for t in text.split(","))
    if kind == "ivec":
        return tuple(int(t) for t in text.split(","))
    if kind == "pairs":
        if not text:
            return ()
        return tuple(tuple(float(u) for u in t.split(":", 1)) for t in text.split(","))
    return text


def _flag_type(kind):
    def conv(text):
        try:
            return _parse_flag(kind, text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    conv.__name__ = kind
    return conv


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="phskew", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"phskew {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for cmd, params in PARAMS.items():
        p = sub.add_parser(cmd, help=f"run {cmd}")
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--allow-override", action="store_true",
                       help="let config values win over conflicting flags")
        for key, kind in TOP_KEYS.items():
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=_flag_type(kind),
                           default=None)
        for key, (kind, default, hlp) in params.items():
            names = {f"--{key}", f"--{key.replace('_', '-')}"}
            p.add_argument(*sorted(names), dest=f"p_{key}", type=_flag_type(kind),
                           default=None, help=f"{hlp} (default {fmt(default)})")
    return ap


class Run:
    """Resolved settings for one invocation."""

    def __init__(self, command, values, params, sources):
        self.command = command
        self.values = values
        self.params = params
        self.sources = sources      # role -> Path of every file read
        self.seed = values.get("seed") or 0

    def __getitem__(self, key):
        return self.params[key]


def _same(a, b):
    if isinstance(a, (tuple, list)) and isinstance(b, (tuple, list)):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return a == b


def resolve(args) -> Run:
    cmd = args.command
    spec = PARAMS[cmd]
    cfg_values, cfg_params, base = {}, {}, Path.cwd()
    sources = {}
    if args.config:
        rc = read_run_config(args.config, lambda _c: {k: v[0] for k, v in spec.items()})
        if rc.command is not None and rc.command != cmd:
            raise ParseError(f"config is for {rc.command!r}, not {cmd!r}", path=args.config)
        cfg_values, cfg_params = rc.values, rc.params
        base = Path(args.config).resolve().parent
        sources["config"] = Path(args.config)

    def merge(name, flag, conf, has_conf):
        # returns (value, came_from_config)
        if flag is None:
            return (conf, True) if has_conf else (None, False)
        if has_conf and not _same(flag, conf):
            if args.allow_override:
                return conf, True
            raise ParseError(f"--{name} {fmt(flag)} conflicts with config value {fmt(conf)}; "
                             "pass --allow-override to let the config win", path=args.config)
        return flag, False

    values = {}
    for key in TOP_KEYS:
        v, from_cfg = merge(key, getattr(args, key), cfg_values.get(key), key in cfg_values)
        if from_cfg and key in ("input", "fiber_matrix", "output"):
            v = str(base / v)        # config paths are relative to the config file
        values[key] = TOP_DEFAULTS.get(key) if v is None else v
    if cfg_values.get("output") is None and args.output is None and os.environ.get(OUTPUT_ENV):
        values["output"] = os.environ[OUTPUT_ENV]
    if values["workers"] < 1:
        raise ParseError("workers must be at least 1")
    params = {}
    for key, (kind, default, _) in spec.items():
        v, _ = merge(key, getattr(args, f"p_{key}"), cfg_params.get(key), key in cfg_params)
        params[key] = default if v is None else v
        _validate(cmd, key, params[key])
    if values["input"] is None:
        raise ParseError("no input file given (--input or 'input' in the config)")
    sources["input"] = Path(values["input"])
    if values.get("fiber_matrix"):
        sources["fiber_matrix"] = Path(values["fiber_matrix"])
    return Run(cmd, values, params, sources)


def _validate(cmd, key, v):
    if v is None:
        return
    ch = CHOICES.get((cmd, key))
    if ch is not None and v not in ch:
        raise ParseError(f"{key} must be one of {', '.join(ch)}, got {v!r}")
    if key in POSITIVE and isinstance(v, (int, float)) and not v > 0:
        raise ParseError(f"{key} must be positive, got {v!r}")
    if key in NONNEG and v < 0:
        raise ParseError(f"{key} must be non-negative, got {v!r}")


# ------------------------------------------------------------- subcommands

def _default_base_point(m):
    return np.mod(0.1 * np.arange(1, m + 1) + 0.013, 1.0)


def _default_fiber_point(manifold, dim):
    if manifold == "sphere":
        z = np.zeros(dim + 1)
        z[-1] = 1.0
        return z
    return np.mod(math.sqrt(2.0) * np.arange(1, dim + 1), 1.0)


def _vec(run, key, default, n, what):
    v = run[key]
    v = default if v is None else np.asarray(v, float)
    if v.shape != (n,):
        raise ParseError(f"{key} must have {n} coordinates ({what})")
    return v


def _ifs(run):
    from .ifs import IFSSpec

    spec = read_ifs(run.values["input"])
    if run.values["seed"] is not None:
        spec = IFSSpec(spec.maps, spec.manifold, spec.dim, run.values["seed"])
    run.seed = spec.seed
    return spec


def cmd_certify_matrix(run, rep):
    from .spectral import check_anosov, example_condition_rows, read_matrix_file, spectral_summary

    A = read_matrix_file(run.values["input"])
    s = spectral_summary(A)
    rep.add("matrix", "dim", A.dim)
    rep.add("matrix", "det", A.det)
    rep.add("spectrum", "log_moduli", s.log_moduli)
    rep.add("spectrum", "b", s.b)
    rep.add("spectrum", "chi_bar", s.chi_bar)
    rep.add("spectrum", "chi_hat", s.chi_hat)
    ok = check_anosov(A)
    rep.add("verdict", "anosov", ok)
    fm = run.values.get("fiber_matrix")
    if fm:
        B = read_matrix_file(fm)
        try:
            rows, reduced = example_condition_rows(B, A, run["k"])
        except PhskewError as exc:
            rep.add("conditions", "refused", f"{type(exc).__name__}: {exc}")
            ok = False
        else:
            for r in rows:
                rep.inequality("conditions", r)
            rep.inequality("conditions", reduced)
            ok = ok and all(r.holds for r in rows)
    rep.verdict = "certified" if ok else "refused"
    return EXIT_OK if ok else EXIT_REFUSED


def _largest_gap_split(lm):
    lm = sorted(lm)
    if len(lm) < 2:
        return []
    gaps = [lm[i + 1] - lm[i] for i in range(len(lm) - 1)]
    i = int(np.argmax(gaps))
    if gaps[i] <= 1e-10:
        return []
    return [(lm[i], lm[i + 1])]


def cmd_classify_skew(run, rep):
    from .spectral import classify_skew_product, rates_from_spectra, read_matrix_file, \
        spectral_summary, xi

    fm = run.values.get("fiber_matrix")
    if not fm:
        raise ParseError("classify-skew needs --fiber-matrix")
    base = spectral_summary(read_matrix_file(run.values["input"]))
    fiber = spectral_summary(read_matrix_file(fm))
    ds = list(run["ds"]) if run["ds"] is not None else _largest_gap_split(fiber.log_moduli)
    rep.add("spectrum", "base_log_moduli", base.log_moduli)
    rep.add("spectrum", "fiber_log_moduli", fiber.log_moduli)
    rep.add("splitting", "ds", [f"{a!r}:{b!r}" for a, b in ds])
    try:
        cr = classify_skew_product(base, fiber, ds, run["l"])
        rates = rates_from_spectra(base, fiber)
    except (NotAnosovBase, InconsistentRates) as exc:
        rep.add("class", "refused", str(exc))
        rep.verdict = "refused"
        return EXIT_REFUSED
    for r in cr.rows:
        rep.inequality("inequalities", r)
    for i, n in enumerate(cr.notes):
        rep.add("notes", i, n)
    rep.add("rates", "xi", xi(rates))
    rep.add("class", "U1", cr.in_U1)
    rep.add("class", "U2", cr.in_U2)
    rep.add("class", "DS2", cr.fiber_in_DS2)
    names = [n for n, v in (("U1", cr.in_U1), ("U2", cr.in_U2)) if v]
    rep.verdict = ",".join(names) if names else "none"
    return EXIT_OK if names else EXIT_REFUSED


def _random_fiber_points(F, n, seed):
    rng = np.random.default_rng(seed)
    man, dim = F.fiber.manifold, F.fiber.dim
    if man == "sphere":
        z = rng.standard_normal((n, dim + 1))
        return z / np.linalg.norm(z, axis=1, keepdims=True)
    if man == "euclidean":
        return rng.uniform(-1.0, 1.0, (n, dim))
    return rng.uniform(0.0, 1.0, (n, dim))


def cmd_holonomy(run, rep):
    from .holonomy import loop_holonomy, stable_holonomy, unstable_holonomy
    from .parallel import ordered_map
    from .skew import build_loop_family

    F = read_skew(run.values["input"]).F
    y = _vec(run, "y", _default_base_point(F.m), F.m, "base point")
    kind, tol, cap = run["kind"], run["tol"], run["max_depth"]
    zs = _random_fiber_points(F, run["samples"], run.seed)
    if kind == "loop":
        fam = build_loop_family(F.base, y, run["delta"])
        loop = fam.loop(0.5 * fam.t_max)
        one = lambda z: loop_holonomy(F, loop, z, tol)
        rep.add("loop", "points", loop.points())
    else:
        e = F.geometry.Eu[:, 0] if kind == "u" else F.geometry.Es[:, 0]
        y2 = np.mod(y + run["delta"] * e, 1.0)
        fn = unstable_holonomy if kind == "u" else stable_holonomy
        one = lambda z: fn(F, y, y2, z, tol, max_depth=cap)
        rep.add("leaf", "y1", y)
        rep.add("leaf", "y2", y2)
    res = ordered_map(one, list(zs), run.values["workers"])
    rep.table("samples", ("i", "z", "image", "error", "depth"),
              [(i, z, r.z[0], r.max_error, r.depth) for i, (z, r) in enumerate(zip(zs, res))])
    worst = max((r.max_error for r in res), default=0.0)
    rep.add("summary", "max_error", worst)
    ok = worst < tol
    rep.verdict = "converged" if ok else "inconclusive"
    return EXIT_OK if ok else EXIT_REFUSED


def cmd_accessibility(run, rep):
    from .covering import build_covering, stable_value_check
    from .skew import build_loop_family

    F = read_skew(run.values["input"]).F
    y = _vec(run, "y", _default_base_point(F.m), F.m, "base point")
    x0 = _vec(run, "x0", _default_fiber_point(F.fiber.manifold, F.c), F.fiber.ambient_dim,
              "fiber point")
    fam = build_loop_family(F.base, y, run["sigma"])
    cov = build_covering(F.c, run["eps_light"], run["theta"], run["K0"])
    rep.add("family", "C0", fam.C0)
    rep.add("family", "t_max", fam.t_max)
    rep.add("covering", "K0", cov.K0)
    rep.add("covering", "K1", cov.K1)
    rep.add("covering", "spacing", cov.spacing)
    rep.add("covering", "boundary_values", sum(len(cov.boundary_values(i)) for i in range(cov.c)))
    sv = stable_value_check(F, fam, x0, cov, run["grid_step"], run["tol"],
                            theta=run["theta"], max_subsets=run["max_subsets"],
                            workers=run.values["workers"])
    rep.add("check", "delta", sv.delta)
    rep.add("check", "holder_constant", sv.holder_constant)
    rep.add("check", "subsets_checked", sv.subsets_checked)
    rep.table("margins", ("axis", "subset", "separation", "delta", "verdict"),
              [(a, sub if isinstance(sub, str) else ";".join(fmt(v) for v in sub), sep, dl, vd)
               for a, sub, sep, dl, vd in sv.rows])
    if sv.witness:
        for k in sorted(sv.witness):
            rep.add("witness", k, sv.witness[k])
    rep.verdict = sv.verdict
    return EXIT_OK if sv.verdict == "pass" else EXIT_REFUSED


def _rates_xi(F):
    from .skew import skew_rates
    from .spectral import xi

    try:
        return xi(skew_rates(F))
    except PhskewError:
        return None


def cmd_deform_verify(run, rep):
    from .deformation import (build_deformation, linear_approx_sweep, verify_apriori,
                              verify_linear_approx)
    from .skew import build_loop_family, recurrence_time

    cfg = read_skew(run.values["input"])
    F = cfg.F
    x = _vec(run, "x", _default_fiber_point(F.fiber.manifold, F.c), F.fiber.ambient_dim,
             "fiber point")
    xi_val = _rates_xi(F)
    rep.add("rates", "xi", xi_val)
    if run["sweep_sigmas"] is not None:
        periods = run["sweep_periods"]
        if periods is None or len(periods) != len(run["sweep_sigmas"]):
            raise ParseError("sweep_periods must match sweep_sigmas in length")
        if xi_val is None or xi_val <= 0:
            rep.verdict = "inconclusive"
            return EXIT_REFUSED
        size = cfg.deformation["dictionary_size"] if cfg.deformation else 1
        sw = linear_approx_sweep(F, run["sweep_sigmas"], periods, x, xi_val, size,
                                 h=run["h"], tol=run["tol"], workers=run.values["workers"])
        rep.table("sweep", ("sigma", "period", "R", "residual"), sw.rows)
        rep.add("fit", "slope", sw.slope)
        rep.add("fit", "intercept", sw.intercept)
        rep.add("fit", "r2", sw.r2)
        rep.add("fit", "Lambda", sw.Lambda)
        rep.verdict = "pass" if sw.passed else "fail"
        return EXIT_OK if sw.passed else EXIT_REFUSED

    d = cfg.deformation
    if d is None:
        raise ParseError("skew file has no deformation section", path=run.values["input"])
    loops, c0 = [], d["C0"]
    for lp in d["loops"]:
        fam = build_loop_family(F.base, lp["y"], d["sigma"])
        loops.append(fam.loop(lp["t_frac"] * fam.t_max))
        c0 = fam.C0 if d["C0"] is None else c0
    if run["loop"] >= len(loops):
        raise ParseError(f"loop index {run['loop']} out of range (have {len(loops)})")
    V = build_deformation(loops, d["sigma"], d["dictionary_size"], C0=c0, fiber_dim=F.c,
                          manifold=F.fiber.manifold)
    R = recurrence_time(F, V.Q_center, V.Q_radius, run["n_max"]).n
    lam = V.C if run["Lambda"] is None else run["Lambda"]
    lr = verify_linear_approx(F, V, loops[run["loop"]], x, run["h"], run["tol"], xi_val, lam, R)
    rep.add("deformation", "n_params", V.n_params)
    rep.add("deformation", "C", V.C)
    rep.add("deformation", "R", R)
    rep.add("deformation", "Lambda", lam)
    for j in range(len(lr.residuals)):
        rep.add("param", f"{j}.fd", lr.fd[j])
        rep.add("param", f"{j}.predicted", lr.predicted[j])
        rep.add("param", f"{j}.residual", lr.residuals[j])
    rep.add("summary", "residual", lr.residual)
    if xi_val is not None:
        rep.add("summary", "bound", run["tol"] + lam * math.exp(-R * xi_val))
    rep.add("summary", "bound_ok", lr.bound_ok)
    # second report: an unstable segment across the steep part of the bump at
    # y1 (a quarter to three quarters of its radius), where the derivative
    # grows linearly with the leaf distance
    lp = loops[run["loop"]]
    rad = V.terms[0].profile.radius if V.terms else d["sigma"]
    eu = F.geometry.Eu[:, 0]
    ya = np.mod(lp.y1 + 0.25 * rad * eu, 1.0)
    yb = np.mod(lp.y1 + 0.75 * rad * eu, 1.0)
    zs = np.vstack([x, _random_fiber_points(F, run["samples"] - 1, run.seed)])
    ap = verify_apriori(F, V, ya, yb, zs, run["h"], run["tol"])
    rep.add("apriori", "leaf_distance", ap.leaf_distance)
    rep.add("apriori", "sup_derivative", ap.sup_derivative)
    rep.add("apriori", "sup_derivative_half", ap.sup_derivative_half)
    rep.add("apriori", "ratio", ap.ratio)
    rep.add("apriori", "ratio_ok", ap.ratio_ok)
    if lr.bound_ok is None:
        rep.verdict = "inconclusive"
        return EXIT_REFUSED
    ok = lr.bound_ok and ap.ratio_ok
    rep.verdict = "pass" if ok else "fail"
    return EXIT_OK if ok else EXIT_REFUSED


def cmd_certify(run, rep):
    from .ifs import UniformityCertificate, certify_uniformity

    spec = _ifs(run)
    res = certify_uniformity(spec, run["b"], run["n0"], (run["res_x"], run["res_E"]),
                             run["samples"], run["mode"], run["refine"], run.values["workers"])
    rep.add("ifs", "k", spec.k)
    rep.add("ifs", "seed", spec.seed)
    rep.add("grid", "resolution", res.resolution)
    rep.add("bounds", "C_max", res.C_max)
    rep.add("bounds", "D_min", res.D_min)
    rep.add("bounds", "kappa1", res.kappa1)
    rep.add("bounds", "kappa2", res.kappa2)
    if isinstance(res, UniformityCertificate):
        rep.add("bounds", "C_stderr", res.C_stderr)
        rep.add("bounds", "D_stderr", res.D_stderr)
        rep.add("certificate", "exact", res.exact)
        rep.add("certificate", "confidence", res.confidence)
        rep.add("certificate", "samples", res.samples)
        rep.add("witness", "C.x", res.C_witness[0])
        rep.add("witness", "C.E", res.C_witness[1].frame)
        rep.add("witness", "D.x", res.D_witness[0])
        rep.add("witness", "D.E", res.D_witness[1].frame)
        rep.verdict = "certified"
        return EXIT_OK
    rep.add("refusal", "reason", res.reason)
    rep.add("refusal", "value", res.value)
    rep.add("refusal", "stderr", res.stderr)
    rep.add("refusal", "x", res.x)
    rep.add("refusal", "E", res.E.frame)
    rep.verdict = "refused"
    return EXIT_REFUSED


def cmd_lyapunov(run, rep):
    from .ifs import lyapunov_spectrum

    spec = _ifs(run)
    x0 = _vec(run, "x0", _default_fiber_point(spec.manifold, spec.dim), spec.ambient_dim,
              "initial point")
    ex = lyapunov_spectrum(spec, x0, run["n"], run["stream_id"])
    rep.add("ifs", "seed", spec.seed)
    rep.add("ifs", "stream_id", run["stream_id"])
    rep.add("lyapunov", "n", run["n"])
    rep.add("lyapunov", "exponents", ex)
    rep.add("lyapunov", "sum", float(np.sum(ex)))
    rep.verdict = "ok"
    return EXIT_OK


def cmd_density(run, rep):
    from .ifs import orbit_density

    spec = _ifs(run)
    x0 = _vec(run, "x0", _default_fiber_point(spec.manifold, spec.dim), spec.ambient_dim,
              "initial point")
    d = orbit_density(spec, x0, run["n"], run["eps"], run["stream_id"], run["bins"])
    rep.add("ifs", "seed", spec.seed)
    rep.add("grid", "eps", d.eps)
    rep.add("grid", "cell_side", 2 * d.eps)
    rep.add("density", "cells_total", d.cells_total)
    rep.add("density", "cells_visited", d.cells_visited)
    rep.add("density", "coverage", d.coverage)
    rep.add("density", "largest_empty_radius", d.largest_empty_radius)
    rep.add("density", "final_point", d.final_point)
    rep.table("first_visits", ("step_lo", "step_hi", "new_cells"),
              [(int(d.hist_edges[i]), int(d.hist_edges[i + 1]), int(c))
               for i, c in enumerate(d.hist_counts)])
    rep.verdict = "ok"
    return EXIT_OK


HANDLERS = {
    "certify-matrix": cmd_certify_matrix,
    "classify-skew": cmd_classify_skew,
    "holonomy": cmd_holonomy,
    "accessibility": cmd_accessibility,
    "deform-verify": cmd_deform_verify,
    "certify": cmd_certify,
    "lyapunov": cmd_lyapunov,
    "density": cmd_density,
}


# -------------------------------------------------------------------- main

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions():
    out = {"phskew": __version__, "python": platform.python_version(), "numpy": np.__version__}
    for mod in ("scipy", "numba", "yaml"):
        try:
            out[mod] = __import__(mod).__version__
        except ImportError:
            out[mod] = None
    return out


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse reports usage errors with status 2, which is reserved here
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    t0 = time.perf_counter()
    rep = Report()
    try:
        run = resolve(args)
        try:
            code = HANDLERS[args.command](run, rep)
        except (NoConvergence, InconclusiveResolution) as exc:
            rep.add("inconclusive", type(exc).__name__, str(exc))
            rep.verdict = "inconclusive"
            code = EXIT_REFUSED
        rep.add("result", "verdict", rep.verdict)
        out = Path(run.values["output"])
        out.mkdir(parents=True, exist_ok=True)
        text = rep.render()
        (out / "report.tsv").write_text(text)
        files = {"report.tsv": hashlib.sha256(text.encode()).hexdigest()}
        for name in sorted(rep.tables):
            t = rep.render_table(name)
            (out / f"{name}.tsv").write_text(t)
            files[f"{name}.tsv"] = hashlib.sha256(t.encode()).hexdigest()
        manifest = {
            "command": args.command,
            "exit_code": code,
            "verdict": rep.verdict,
            "inputs": {role: {"path": str(p), "sha256": _sha256(p)}
                       for role, p in sorted(run.sources.items())},
            "params": {k: v for k, v in sorted(run.params.items())},
            "seed": run.seed,
            "workers": run.values["workers"],
            "outputs_sha256": files,
            "versions": _versions(),
            "wall_time_s": time.perf_counter() - t0,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=list) + "\n")
    except (ParseError, PhskewError, OSError, ValueError) as exc:
        print(f"phskew: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"{args.command}: {rep.verdict} ({out / 'report.tsv'})")
    return code


if __name__ == "__main__":
    sys.exit(main())
