"""Command line entry point: ``cantorpv <command> ...``.

Every command writes one JSON report (stdout or ``--out``).  Reports carry a
hash of the normalized command arguments and contain no timestamps, so equal
inputs give byte-identical files for any ``--workers`` value.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .cantor import (PRESETS, CantorError, config_from_json, corner_points, envelope_seq,
                     preset)
from .hungerford import (FamilySystem, FrostmanMeasure, build_nu, validate_family_system,
                         verify_growth)
from .kernels import for_config
from .martingale import (Evaluator, pv_estimate, traces,
                         verify_bounds)
from .quadrature import (IntegralRequest, atomization_bound, brute_force, default_workers,
                         treecode_batch)
from .stopping import EXPLORATORY, STRICT, StoppingParams, build_forest, check_forest


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers

def _digits(text: str | None) -> tuple:
    if text is None or text.strip() in ("", "-"):
        return ()
    return tuple(int(t) for t in text.replace(",", " ").split())


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def load_config(spec):
    """Preset name, path to a JSON file, or an already parsed dict."""
    if isinstance(spec, dict):
        return config_from_json(spec)
    if spec in PRESETS:
        return preset(spec)
    if spec and os.path.exists(spec):
        with open(spec) as fh:
            return config_from_json(json.load(fh))
    raise UsageError(f"config {spec!r} is neither a preset ({', '.join(PRESETS)}) nor a file")


def spec_hash(spec: dict) -> str:
    blob = json.dumps(spec, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def dump_report(report: dict, path: str | None) -> str:
    text = json.dumps(_clean(report), indent=1, sort_keys=True) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        folder = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=".json")
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    return text


def _envelope_report(config, C_emp):
    b = envelope_seq(config, C_emp)
    return {"C_emp": C_emp, "b": list(b.values), "provenance": "C_emp frozen from fixture run"}


# --------------------------------------------------------------------------
# operations (shared by subcommands and experiment files)

def op_config_validate(p: dict) -> tuple[dict, bool]:
    cfg = load_config(p["config"])
    return {"config": cfg.to_json(), "sides": cfg.sides[: cfg.max_generation + 1],
            "densities": cfg.densities, "valid": True}, True


def op_quad(p: dict) -> tuple[dict, bool]:
    cfg = load_config(p["config"])
    kernel = for_config(p.get("kernel", "cauchy"), cfg)
    if p.get("point") is not None:
        from .cantor import point_from_digits
        x = point_from_digits(cfg, _digits(p["point"]))
    else:
        x = np.array(_floats(p["x"]))
    exclude = None if p.get("exclude") in (None, "none") else _digits(p["exclude"])
    tol = float(p.get("tol", 1e-8))
    req = IntegralRequest.make(x, exclude, tol)
    res = treecode_batch(cfg, kernel, [req], workers=p.get("workers", 1))[0]
    out = {"x": x, "exclude": exclude, "kernel": kernel.label, "tol": tol,
           "result": res.to_json(), "within_tol": res.error_bound <= tol}
    ok = res.error_bound <= tol
    if p.get("brute"):
        N = int(p["brute"])
        bf = brute_force(cfg, kernel, req, N)
        ab = atomization_bound(cfg, kernel, req, N)
        gap = float(np.linalg.norm(bf - res.value))
        agree = gap <= res.error_bound + ab
        out["brute"] = {"N": N, "value": bf, "atomization_bound": ab, "difference": gap,
                        "agree": agree}
        ok = ok and agree
    return out, ok


def op_trace(p: dict) -> tuple[dict, bool]:
    cfg = load_config(p["config"])
    kernel = for_config(p.get("kernel", "cauchy"), cfg)
    ev = Evaluator(cfg, kernel, float(p.get("tol", 1e-6)), workers=p.get("workers", 1))
    C_emp = p.get("C_emp")
    env = envelope_seq(cfg, C_emp) if C_emp else None
    n_max = int(p.get("n_max", cfg.max_generation - 1))
    tr = traces(ev, [_digits(p["point"])], n_max, env)[0]
    if p.get("csv"):
        with open(p["csv"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n"] + [f"T{i}" for i in range(cfg.d)] + [f"S{i}" for i in range(cfg.d)]
                       + ["a", "b", "errT", "errS"])
            for r in tr.rows:
                w.writerow([r.n, *map(repr, map(float, r.T)), *map(repr, map(float, r.S)),
                            repr(r.a), "" if r.b is None else repr(r.b),
                            repr(r.errT), repr(r.errS)])
    return {"kernel": kernel.label, "trace": tr.to_json()}, True


def op_verify(p: dict) -> tuple[dict, bool]:
    cfg = load_config(p["config"])
    kernel = for_config(p.get("kernel", "cauchy"), cfg)
    pts = corner_points(cfg, int(p.get("points", 64)), cfg.max_generation,
                        seed=int(p.get("seed", 0)))
    ev = Evaluator(cfg, kernel, float(p.get("tol", 1e-6)), workers=p.get("workers", 1))
    rep = verify_bounds(cfg, kernel, pts, int(p.get("n_max", 8)), caps=p.get("caps"),
                        evaluator=ev)
    return {"kernel": kernel.label, "points": len(pts), "seed": int(p.get("seed", 0)),
            "bounds": rep.to_json(),
            "failed": {e.name: e.to_json() for e in rep.entries if e.failed}}, not rep.failed


def op_pv(p: dict) -> tuple[dict, bool]:
    cfg = load_config(p["config"])
    kernel = for_config(p.get("kernel", "cauchy"), cfg)
    if p.get("eps"):
        eps = sorted(_floats(p["eps"]), reverse=True)
    else:
        lo, hi = (int(k) for k in str(p.get("powers", "1:10")).split(":"))
        eps = [2.0 ** (-k) for k in range(lo, hi + 1)]
    tol = float(p.get("tol", 1e-6))
    res = pv_estimate(cfg, kernel, _digits(p["point"]), eps, tol)
    vals = np.array([r.value for r in res])
    errs = np.array([r.error_bound for r in res])
    steps = [float(np.linalg.norm(b - a)) for a, b in zip(vals, vals[1:])]
    tail = [float(np.max(np.linalg.norm(vals[k:, None] - vals[None, k:], axis=-1)))
            for k in range(len(vals))]
    return {"kernel": kernel.label, "epsilons": eps,
            "values": vals, "error_bounds": errs, "successive_gaps": steps,
            "tail_oscillation": tail}, True


def _load_report(path: str) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    return doc["report"] if "spec_hash" in doc and "report" in doc else doc


def _forest_system(doc: dict) -> FamilySystem:
    fams = [[()]] + [[tuple(n["address"]) for n in fam] for fam in doc["families"]]
    parent = {}
    for fam in doc["families"]:
        for n in fam:
            parent[tuple(n["address"])] = tuple(n["parent"]) if n["parent"] is not None else ()
    return FamilySystem(doc["config"]["d"], fams, parent, "stopping-forest")


def op_stopping(p: dict) -> tuple[dict, bool]:
    cfg = load_config(p["config"])
    kernel = for_config(p.get("kernel", "cauchy"), cfg)
    params = StoppingParams(float(p["M"]), float(p["C_emp"]), int(p["depth"]),
                            p.get("mode", STRICT))
    forest = build_forest(cfg, kernel, params, float(p.get("tol", 1e-4)),
                          workers=p.get("workers", 1))
    checks = check_forest(forest)
    doc = forest.to_json()
    doc["checks"] = checks
    doc["sizes"] = [len(f) for f in forest.families]
    ok = checks["disjoint"]["ok"] and checks["nested"]["ok"] and checks["coverage"]["ok"]
    if params.mode == STRICT:
        ok = ok and checks["descent"]["ok"] and "escalated" not in checks["alternatives"]
    return doc, ok


def op_hungerford_build(p: dict) -> tuple[dict, bool]:
    doc = _load_report(p["forest"])
    system = _forest_system(doc) if "families" in doc and "params" in doc \
        else FamilySystem.from_json(doc)
    measure = build_nu(system, p.get("eps"), p.get("c"), float(doc.get("config", {})
                                                              .get("alpha", 1.0)))
    out = measure.to_json()
    out["config"] = doc.get("config")
    out["hypotheses"] = validate_family_system(system, measure.eps, measure.c)
    return out, True


def op_hungerford_verify(p: dict) -> tuple[dict, bool]:
    doc = _load_report(p["nu"])
    measure = FrostmanMeasure.from_json(doc)
    cfg = config_from_json(doc["config"]) if doc.get("config") else preset("garnett")
    rep = verify_growth(measure, cfg)
    rep["note"] = "bound verified implies dim >= beta by the mass distribution principle"
    return rep, rep["ok"]


OPERATIONS = {
    "config": op_config_validate, "quad": op_quad, "trace": op_trace, "verify": op_verify,
    "pv": op_pv, "stopping": op_stopping, "hungerford-build": op_hungerford_build,
    "hungerford-verify": op_hungerford_verify,
}


def run_operation(name: str, params: dict, out: str | None) -> int:
    # the worker count never changes results, so it stays out of the hash
    spec_params = {k: v for k, v in params.items() if k != "workers"}
    spec = {"operation": name, "params": spec_params, "version": __version__}
    report, ok = OPERATIONS[name](params)
    dump_report({"spec_hash": spec_hash(spec), "spec": spec, "ok": bool(ok),
                 "report": report}, out)
    return 0 if ok else 1


def run_experiment(path: str) -> int:
    """Run an experiment file: ``{"operation", "config", "kernel", "params", "out", "seed"}``."""
    with open(path) as fh:
        exp = json.load(fh)
    name = exp.get("operation")
    if name == "hungerford":
        name = "hungerford-" + exp.get("params", {}).get("step", "build")
    if name not in OPERATIONS:
        raise UsageError(f"unknown operation {name!r}; known: {sorted(OPERATIONS)}")
    params = dict(exp.get("params", {}))
    for key in ("config", "kernel", "seed"):
        if key in exp:
            params.setdefault(key, exp[key])
    return run_operation(name, params, exp.get("out"))


# --------------------------------------------------------------------------
# argument parsing

def _common(p, kernel=True):
    p.add_argument("--config", default="garnett",
                   help="preset name (%s) or JSON file" % ", ".join(PRESETS))
    if kernel:
        p.add_argument("--kernel", default="cauchy",
                       help="cauchy | riesz:ALPHA | oddpower:M | probe")
    p.add_argument("--out", default=None, help="report path (default stdout)")
    p.add_argument("--workers", type=int, default=None,
                   help="threads (default: CANTOR_PV_THREADS or all cores)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cantorpv", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    cfg = sub.add_parser("config", help="configuration tools")
    cfg_sub = cfg.add_subparsers(dest="sub", required=True)
    v = cfg_sub.add_parser("validate", help="check a configuration")
    _common(v, kernel=False)

    q = sub.add_parser("quad", help="certified truncated integral at one point")
    _common(q)
    q.add_argument("--x", help="target coordinates, comma separated")
    q.add_argument("--point", help="target as digits of a point of K")
    q.add_argument("--exclude", help="digits of the excluded cube (default none)")
    q.add_argument("--tol", type=float, default=1e-8)
    q.add_argument("--brute", type=int, help="also compare with brute force at this depth")

    t = sub.add_parser("trace", help="T_n and S_n along one point")
    _common(t)
    t.add_argument("--point", required=True)
    t.add_argument("--n-max", type=int)
    t.add_argument("--tol", type=float, default=1e-6)
    t.add_argument("--C-emp", type=float)
    t.add_argument("--csv", help="also write the trace table as CSV")

    vb = sub.add_parser("verify", help="verification suites")
    vb_sub = vb.add_subparsers(dest="sub", required=True)
    b = vb_sub.add_parser("bounds", help="worst ratios of the increment inequalities")
    _common(b)
    b.add_argument("--points", type=int, default=64)
    b.add_argument("--n-max", type=int, default=8)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--tol", type=float, default=1e-6)
    b.add_argument("--caps", help="JSON file mapping inequality names to caps")

    st = sub.add_parser("stopping", help="stopping-time families")
    st_sub = st.add_subparsers(dest="sub", required=True)
    r = st_sub.add_parser("run", help="build a stopping forest")
    _common(r)
    r.add_argument("-M", type=float, required=True)
    r.add_argument("--C-emp", type=float, required=True)
    r.add_argument("--mode", choices=[STRICT, EXPLORATORY], default=STRICT)
    r.add_argument("--depth", type=int, required=True)
    r.add_argument("--tol", type=float, default=1e-4)

    h = sub.add_parser("hungerford", help="measures on family systems")
    h_sub = h.add_subparsers(dest="sub", required=True)
    hb = h_sub.add_parser("build", help="build nu from a forest or family system")
    hb.add_argument("--forest", required=True)
    hb.add_argument("--out", default=None)
    hb.add_argument("--eps", help="override eps (fraction string)")
    hb.add_argument("--c", help="override c (fraction string)")
    hv = h_sub.add_parser("verify", help="growth bounds for a built measure")
    hv.add_argument("--nu", required=True)
    hv.add_argument("--out", default=None)

    pv = sub.add_parser("pv", help="truncated integrals over shrinking balls")
    _common(pv)
    pv.add_argument("--point", required=True)
    pv.add_argument("--eps", help="radii, comma separated")
    pv.add_argument("--powers", default="1:10", help="radii 2^-k for k in LO:HI")
    pv.add_argument("--tol", type=float, default=1e-6)

    rn = sub.add_parser("run", help="run a JSON experiment file")
    rn.add_argument("experiment")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    params = {k: v for k, v in vars(args).items()
              if v is not None and k not in ("cmd", "sub", "out")}
    if "workers" not in params and args.cmd not in ("hungerford", "run"):
        params["workers"] = default_workers()
    if args.cmd == "verify" and params.get("caps"):
        with open(params["caps"]) as fh:
            params["caps"] = json.load(fh)
    name = {"config": "config", "quad": "quad", "trace": "trace", "verify": "verify",
            "stopping": "stopping", "pv": "pv"}.get(args.cmd)
    if args.cmd == "hungerford":
        name = "hungerford-" + args.sub
    try:
        if args.cmd == "run":
            return run_experiment(args.experiment)
        return run_operation(name, params, getattr(args, "out", None))
    except (CantorError, UsageError, ValueError, OSError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
