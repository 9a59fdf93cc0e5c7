"""Command-line front end.

Every command writes a JSON report (``--out`` or stdout). Curve commands
also write a headerless CSV when ``--csv`` is given. Settings resolve in
the order command-line flag, then the JSON ``--config`` file, then the
built-in default.

Exit codes: 0 on success, 2 when ``calibrate`` refuses because the audit
does not certify size control, 1 on any other error. Errors are reported
as a JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .covariance import Ar2Param, ar1_matrix, ar2_matrix, harmonic_basis
from .diagnostics import (
    TAG_AR1,
    TAG_AR2,
    TAG_GLS,
    TAG_HET,
    InapplicableError,
    audit,
    audit_ar2,
    audit_gls,
    audit_het,
    estimate_k_bounds,
    genericity_verdicts,
)
from .estimators import HetVariant, LagWindow, RhoEstimatorSpec
from .model import LinearModel, Restriction, Tolerances, null_representative
from .montecarlo import (
    DEFAULT_RHO_GRID,
    RADIAL_LAWS,
    AuditRefusalError,
    calibrate_critical,
    elliptical_null_check,
    power_probe,
    size_curve_ar1,
)
from .statistics import Family, TestDefinition, build_adjusted, display_value
from .streams import McConfig

SCHEMA = 1

COMMANDS = (
    "audit",
    "audit-ar2",
    "audit-gls",
    "audit-het",
    "genericity",
    "calibrate",
    "size-curve",
    "power-curve",
    "elliptical-check",
    "concentration",
)

DEFAULTS = {
    "test": "weighted",
    "kernel": "bartlett",
    "bandwidth": None,
    "weights": None,
    "a1": 1,
    "a2": "n",
    "variant": "HC0",
    "C": None,
    "adjust": False,
    "normalize_q": False,
    "seed": 0,
    "reps": 100_000,
    "chunk": 8192,
    "rank_factor": 64.0,
    "membership_tol": 1e-8,
    "tie_tol": 1e-8,
    "x": None,
    "R": None,
    "r": None,
    "out": None,
    "csv": None,
    "delta": 0.05,
    "rho_grid": None,
    "tol_c": 1e-4,
    "cert_reps": 1_000_000,
    "mu1": None,
    "rho": 0.0,
    "sigma2": 1.0,
    "radial": "uniformSphereScale",
    "n": None,
    "k": None,
    "designs": 1000,
    "intercept": False,
    "directions": 32,
    "k_bounds": False,
    "nu": None,
    "r_mod": None,
}


class UsageError(Exception):
    """Invalid command line, configuration or input files."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# CSV interchange


def read_csv(path: str | Path) -> np.ndarray:
    """Headerless comma-separated matrix; a single line or column is a 1 x m / m x 1 matrix."""
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise UsageError(f"cannot parse {path}: {exc}") from exc


def format_csv(M: np.ndarray) -> str:
    """17 significant digits, enough to round-trip every double."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return "".join(",".join(format(v, ".17g") for v in row) + "\n" for row in M)


def write_csv(path: str | Path, M: np.ndarray) -> None:
    Path(path).write_text(format_csv(M))


# ---------------------------------------------------------------------------
# parsing


def _grid(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("inputs")
    g.add_argument("--x", help="design matrix CSV (n x k)")
    g.add_argument("--R", help="restriction matrix CSV (q x k)")
    g.add_argument("--r", help="restriction right-hand side CSV (q values); zeros if omitted")
    g.add_argument("--config", help="JSON file with default settings")
    g.add_argument("--out", help="JSON report path (stdout if omitted)")
    g.add_argument("--csv", help="CSV output path for curves and matrices")
    t = common.add_argument_group("test")
    t.add_argument("--test", choices=[f.value for f in Family])
    t.add_argument("--kernel", choices=["bartlett", "parzen", "qs", "custom"])
    t.add_argument("--bandwidth", type=float)
    t.add_argument("--weights", help="CSV of lag weights (custom kernel) or the n x n matrix (gq test)")
    t.add_argument("--a1", type=int, choices=[1, 2])
    t.add_argument("--a2", choices=["n", "n-1"])
    t.add_argument("--variant", choices=[v.value for v in HetVariant] + ["F"])
    t.add_argument("--C", type=float, help="critical value")
    t.add_argument("--adjust", action="store_const", const=True, default=None)
    t.add_argument("--normalize-q", dest="normalize_q", action="store_const", const=True, default=None,
                   help="divide reported statistic values by q (display only)")
    m = common.add_argument_group("simulation")
    m.add_argument("--seed", type=int)
    m.add_argument("--reps", type=int)
    m.add_argument("--chunk", type=int)
    tol = common.add_argument_group("tolerances")
    tol.add_argument("--rank-factor", dest="rank_factor", type=float)
    tol.add_argument("--membership-tol", dest="membership_tol", type=float)
    tol.add_argument("--tie-tol", dest="tie_tol", type=float)

    parser = _Parser(prog="robustsize", description="Size and power audits for autocorrelation- and "
                     "heteroskedasticity-robust tests in the Gaussian linear model.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("audit", parents=[common], help="concentration audit for the chosen test")
    p = sub.add_parser("audit-ar2", parents=[common], help="audit against AR(2) harmonic concentration")
    p.add_argument("--directions", type=int)
    p = sub.add_parser("audit-gls", parents=[common], help="audit the FGLS and OLS-AR(1) tests")
    p.add_argument("--k-bounds", dest="k_bounds", action="store_const", const=True, default=None,
                   help="also estimate the lower size constants by simulation")
    sub.add_parser("audit-het", parents=[common], help="audit under heteroskedasticity")
    p = sub.add_parser("genericity", parents=[common], help="verdicts over random Gaussian designs")
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--designs", type=int)
    p.add_argument("--intercept", action="store_const", const=True, default=None)
    p = sub.add_parser("calibrate", parents=[common], help="critical value with simulated sup-size <= delta")
    p.add_argument("--delta", type=float)
    p.add_argument("--rho-grid", dest="rho_grid", type=_grid)
    p.add_argument("--tol-c", dest="tol_c", type=float)
    p.add_argument("--cert-reps", dest="cert_reps", type=int)
    p = sub.add_parser("size-curve", parents=[common], help="null rejection probability over AR(1) grid")
    p.add_argument("--rho-grid", dest="rho_grid", type=_grid)
    p = sub.add_parser("power-curve", parents=[common], help="rejection probability at alternative means")
    p.add_argument("--mu1", help="CSV whose rows are alternative mean vectors")
    p.add_argument("--rho", type=float)
    p.add_argument("--sigma2", type=float)
    p = sub.add_parser("elliptical-check", parents=[common], help="Gaussian vs elliptical null rejection")
    p.add_argument("--radial", choices=list(RADIAL_LAWS))
    p.add_argument("--rho", type=float)
    p = sub.add_parser("concentration", parents=[common], help="AR(2) correlation matrix near its harmonic limit")
    p.add_argument("--nu", type=float)
    p.add_argument("--r-mod", "--modulus", dest="r_mod", type=float, help="root modulus (also accepted as --r)")
    p.add_argument("--n", type=int)
    return parser


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    unknown = set(data) - set(DEFAULTS)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return data


def parse_and_validate(argv: list[str] | None = None) -> dict:
    """Resolve flags, config file and defaults into one settings dict.

    Raises
    ------
    UsageError
        On unknown flags, unreadable files or inconsistent dimensions.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "concentration":
        # ``--r`` names the root modulus for this command
        argv = [a if a != "--r" else "--r-mod" for a in argv]
    ns = vars(build_parser().parse_args(argv))
    config = _load_config(ns.pop("config", None))
    command = ns.pop("command")
    cfg = {"command": command}
    for key, default in DEFAULTS.items():
        flag = ns.get(key)
        cfg[key] = flag if flag is not None else config.get(key, default)
    for key in ("seed", "reps", "chunk", "designs", "cert_reps", "directions"):
        if cfg[key] is not None:
            cfg[key] = int(float(cfg[key]))
    if cfg["rho_grid"] is not None and isinstance(cfg["rho_grid"], str):
        cfg["rho_grid"] = _grid(cfg["rho_grid"])
    _load_inputs(cfg)
    return cfg


def _load_inputs(cfg: dict) -> None:
    command = cfg["command"]
    cfg["tolerances"] = Tolerances(cfg["rank_factor"], cfg["membership_tol"], cfg["tie_tol"])
    if command == "concentration":
        for key in ("nu", "r_mod", "n"):
            if cfg[key] is None:
                raise UsageError(f"concentration needs --{'r' if key == 'r_mod' else key}")
        return
    if cfg["R"] is None:
        raise UsageError("--R is required")
    R = read_csv(cfg["R"])
    if command == "genericity":
        if cfg["n"] is None or cfg["k"] is None:
            raise UsageError("genericity needs --n and --k")
        k = cfg["k"]
    else:
        if cfg["x"] is None:
            raise UsageError("--x is required")
        X = read_csv(cfg["x"])
        cfg["X"] = X
        k = X.shape[1]
    if R.shape[1] != k:
        raise UsageError(f"dimension mismatch: R has {R.shape[1]} columns but X has {k}")
    r = np.zeros(R.shape[0]) if cfg["r"] is None else read_csv(cfg["r"]).ravel()
    if r.size != R.shape[0]:
        raise UsageError(f"dimension mismatch: r has {r.size} entries but R has {R.shape[0]} rows")
    cfg["Rmat"], cfg["rvec"] = R, r
    if cfg["weights"] is not None:
        cfg["weights_arr"] = read_csv(cfg["weights"])
    if cfg["mu1"] is not None:
        cfg["mu1_arr"] = read_csv(cfg["mu1"])


# ---------------------------------------------------------------------------
# construction helpers


def _rho_spec(cfg: dict) -> RhoEstimatorSpec:
    return RhoEstimatorSpec(int(cfg["a1"]), 0 if cfg["a2"] == "n" else 1)


def _critical(cfg: dict, required: bool = True) -> float:
    if cfg["C"] is None:
        if required:
            raise UsageError("--C is required for this command")
        return 1.0
    return float(cfg["C"])


def make_definition(cfg: dict, C: float) -> TestDefinition:
    fam = Family(cfg["test"])
    if fam is Family.WEIGHTED:
        if cfg["kernel"] == "custom":
            if "weights_arr" not in cfg:
                raise UsageError("custom kernel needs --weights")
            window = LagWindow("custom", custom=tuple(cfg["weights_arr"].ravel()))
        else:
            if cfg["bandwidth"] is None:
                raise UsageError("the weighted test needs --bandwidth")
            window = LagWindow(cfg["kernel"], float(cfg["bandwidth"]))
        return TestDefinition.weighted(window, C)
    if fam is Family.GQ:
        if "weights_arr" not in cfg:
            raise UsageError("the gq test needs --weights with an n x n matrix")
        return TestDefinition.general_quadratic(cfg["weights_arr"], C)
    if fam is Family.EICKER:
        return TestDefinition.eicker(C)
    if fam is Family.HET:
        if cfg["variant"] == "F":
            raise UsageError("variant F belongs to --test f")
        return TestDefinition.het(cfg["variant"], C)
    if fam is Family.FGLS:
        return TestDefinition.fgls(_rho_spec(cfg), C)
    if fam is Family.OLS_AR1:
        return TestDefinition.ols_ar1(_rho_spec(cfg), C)
    return TestDefinition.uncorrected_f(C)


def _design(cfg: dict) -> tuple[LinearModel, Restriction]:
    tol = cfg["tolerances"]
    model = LinearModel(cfg["X"], tol)
    restriction = Restriction(cfg["Rmat"], cfg["rvec"], tol)
    restriction.check_compatible(model)
    return model, restriction


def _with_adjustment(cfg: dict, defn: TestDefinition, model, restriction) -> TestDefinition:
    if not cfg["adjust"]:
        return defn
    return defn.with_adjustment(build_adjusted(model, restriction, cfg["tolerances"].membership))


def theorem_tag(defn: TestDefinition) -> str:
    if defn.family in (Family.FGLS, Family.OLS_AR1):
        return TAG_GLS
    if defn.family in (Family.HET, Family.F):
        return TAG_HET
    return TAG_AR1


def _mc(cfg: dict) -> McConfig:
    return McConfig(reps=cfg["reps"], seed=cfg["seed"], chunk=cfg["chunk"])


def _header(cfg: dict, theorem: str, mc: bool) -> dict:
    out = {"schema": SCHEMA, "command": cfg["command"], "theorem": theorem,
           "tolerances": cfg["tolerances"].as_dict(), "seed": cfg["seed"]}
    out["reps"] = cfg["reps"] if mc else None
    return out


def _report_dict(report, cfg: dict, q: int) -> dict:
    d = report.as_dict()
    if cfg["normalize_q"]:
        for e in d["evidence"]:
            e["T"] = display_value(e["T"], q, True)
        d["normalized_by_q"] = True
    return d


# ---------------------------------------------------------------------------
# commands


def _cmd_audit(cfg: dict) -> tuple[dict, np.ndarray | None, int]:
    model, restriction = _design(cfg)
    defn = _with_adjustment(cfg, make_definition(cfg, _critical(cfg)), model, restriction)
    rep = audit(model, restriction, defn)
    out = _header(cfg, rep.theorem, False)
    out.update(test=defn.describe(), report=_report_dict(rep, cfg, restriction.q))
    return out, None, 0


def _cmd_audit_ar2(cfg: dict):
    model, restriction = _design(cfg)
    defn = _with_adjustment(cfg, make_definition(cfg, _critical(cfg)), model, restriction)
    rep = audit_ar2(model, restriction, defn, direction_samples=cfg["directions"], seed=cfg["seed"])
    out = _header(cfg, TAG_AR2, False)
    out.update(test=defn.describe(), report=_report_dict(rep, cfg, restriction.q))
    return out, None, 0


def _cmd_audit_gls(cfg: dict):
    model, restriction = _design(cfg)
    spec, C = _rho_spec(cfg), _critical(cfg)
    out = _header(cfg, TAG_GLS, bool(cfg["k_bounds"]))
    out["rho_estimator"] = spec.describe()
    reports = {}
    for fam in (Family.FGLS, Family.OLS_AR1):
        rep = _report_dict(audit_gls(model, restriction, spec, C, fam), cfg, restriction.q)
        if cfg["k_bounds"]:
            bounds = {}
            for direction in ("e+", "e-"):
                try:
                    kb = estimate_k_bounds(model, restriction, spec, direction, _mc(cfg), fam)
                    bounds[direction] = {"K1": kb.k1, "K2": kb.k2, "se": kb.se}
                except InapplicableError as exc:
                    bounds[direction] = {"inapplicable": str(exc)}
            rep["k_bounds"] = bounds
        reports[fam.value] = rep
    out["reports"] = reports
    return out, None, 0


def _cmd_audit_het(cfg: dict):
    model, restriction = _design(cfg)
    C = _critical(cfg)
    rep = audit_het(model, restriction, cfg["variant"], C)
    out = _header(cfg, TAG_HET, False)
    out.update(variant=cfg["variant"], C=C, report=_report_dict(rep, cfg, restriction.q))
    return out, None, 0


def _cmd_genericity(cfg: dict):
    tol = cfg["tolerances"]
    restriction = Restriction(cfg["Rmat"], cfg["rvec"], tol)
    defn = make_definition(cfg, _critical(cfg))
    counts = genericity_verdicts(cfg["n"], cfg["k"], restriction, defn, cfg["designs"], cfg["seed"],
                                 bool(cfg["intercept"]))
    total = cfg["designs"]
    miss = sum(v for key, v in counts.items() if key.value in ("Inconclusive", "BoundaryTie"))
    out = _header(cfg, theorem_tag(defn), False)
    out.update(test=defn.describe(), n=cfg["n"], k=cfg["k"], designs=total, intercept=bool(cfg["intercept"]),
               counts={key.value: counts[key] for key in sorted(counts, key=lambda v: v.value)},
               fraction=(total - miss) / total)
    return out, None, 0


def _rho_grid(cfg: dict) -> tuple[float, ...]:
    return DEFAULT_RHO_GRID if cfg["rho_grid"] is None else tuple(cfg["rho_grid"])


def _cmd_calibrate(cfg: dict):
    model, restriction = _design(cfg)
    defn = _with_adjustment(cfg, make_definition(cfg, _critical(cfg, required=False)), model, restriction)
    out = _header(cfg, theorem_tag(defn), True)
    out.update(test=defn.describe(), rho_grid=list(_rho_grid(cfg)), cert_reps=cfg["cert_reps"])
    try:
        res = calibrate_critical(defn, model, restriction, float(cfg["delta"]), _rho_grid(cfg), _mc(cfg),
                                 float(cfg["tol_c"]), cfg["cert_reps"])
    except AuditRefusalError as exc:
        out.update(refused=True, verdict=exc.verdict.value, message=str(exc))
        return out, None, 2
    out.update(refused=False, result=res.as_dict())
    return out, None, 0


def _cmd_size_curve(cfg: dict):
    model, restriction = _design(cfg)
    defn = _with_adjustment(cfg, make_definition(cfg, _critical(cfg)), model, restriction)
    curve = size_curve_ar1(defn, model, restriction, _rho_grid(cfg), _mc(cfg))
    rows = np.array([[rho, e.p, e.se] for rho, e in curve])
    out = _header(cfg, theorem_tag(defn), True)
    out.update(test=defn.describe(), chunk=cfg["chunk"],
               curve=[{"rho": rho, "p": e.p, "se": e.se} for rho, e in curve],
               sup_size=max(e.p for _, e in curve))
    return out, rows, 0


def _cmd_power_curve(cfg: dict):
    model, restriction = _design(cfg)
    if "mu1_arr" not in cfg:
        raise UsageError("power-curve needs --mu1")
    mu1 = cfg["mu1_arr"]
    if mu1.shape[1] != model.n:
        raise UsageError(f"dimension mismatch: --mu1 rows have {mu1.shape[1]} entries, expected {model.n}")
    defn = _with_adjustment(cfg, make_definition(cfg, _critical(cfg)), model, restriction)
    rho, sigma2 = float(cfg["rho"]), float(cfg["sigma2"])
    pts = power_probe(defn, model, restriction, list(mu1), sigma2, ar1_matrix(model.n, rho), _mc(cfg))
    rows = np.array([[p.distance, p.estimate.p, p.estimate.se] for p in pts])
    out = _header(cfg, theorem_tag(defn), True)
    out.update(test=defn.describe(), rho=rho, sigma2=sigma2, chunk=cfg["chunk"],
               curve=[{"distance": p.distance, "p": p.estimate.p, "se": p.estimate.se} for p in pts])
    return out, rows, 0


def _cmd_elliptical(cfg: dict):
    model, restriction = _design(cfg)
    defn = _with_adjustment(cfg, make_definition(cfg, _critical(cfg)), model, restriction)
    rho = float(cfg["rho"])
    res = elliptical_null_check(defn, model, restriction, ar1_matrix(model.n, rho), cfg["radial"], _mc(cfg))
    out = _header(cfg, theorem_tag(defn), True)
    out.update(test=defn.describe(), rho=rho, radial=cfg["radial"], chunk=cfg["chunk"], result=res.as_dict())
    return out, None, 0


def _cmd_concentration(cfg: dict):
    n, nu, r = int(cfg["n"]), float(cfg["nu"]), float(cfg["r_mod"])
    sigma = ar2_matrix(n, Ar2Param(r, nu))
    E = harmonic_basis(n, nu).basis
    dist = float(np.linalg.norm(sigma - E @ E.T))
    out = _header(cfg, TAG_AR2, False)
    out.update(n=n, nu=nu, r=r, frobenius_distance=dist)
    if cfg["csv"] is None:
        out["sigma"] = sigma.tolist()
    return out, sigma, 0


_DISPATCH = {
    "audit": _cmd_audit,
    "audit-ar2": _cmd_audit_ar2,
    "audit-gls": _cmd_audit_gls,
    "audit-het": _cmd_audit_het,
    "genericity": _cmd_genericity,
    "calibrate": _cmd_calibrate,
    "size-curve": _cmd_size_curve,
    "power-curve": _cmd_power_curve,
    "elliptical-check": _cmd_elliptical,
    "concentration": _cmd_concentration,
}


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dump_json(obj: dict) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def dispatch(cfg: dict) -> int:
    """Run the resolved command and write its outputs; returns the exit code."""
    out, rows, code = _DISPATCH[cfg["command"]](cfg)
    text = dump_json(out)
    if cfg["out"] is None:
        sys.stdout.write(text)
    else:
        Path(cfg["out"]).write_text(text)
    if rows is not None and cfg["csv"] is not None:
        write_csv(cfg["csv"], rows)
    return code


def _error(kind: str, message: str) -> int:
    sys.stderr.write(dump_json({"schema": SCHEMA, "error": {"type": kind, "message": message}}))
    return 1


def main(argv: list[str] | None = None) -> int:
    try:
        cfg = parse_and_validate(argv)
    except UsageError as exc:
        return _error("usage", str(exc))
    try:
        return dispatch(cfg)
    except UsageError as exc:
        return _error("usage", str(exc))
    except Exception as exc:  # reported as a JSON error object
        return _error(type(exc).__name__, str(exc))


if __name__ == "__main__":
    raise SystemExit(main())
