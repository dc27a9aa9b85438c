"""Command-line front end.

Subcommands: ``solve``, ``classify``, ``nad``, ``fixture`` and ``dual-check``.
A problem comes either from a built-in fixture (``--fixture``) or from a
JSON config (``--config``); see ``docs/config.md`` for the schema.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .contact import certificate, contact_set, d1_residuals, fixed_certificate, verify_support_optimality
from .exceptions import ConfigError, PersuasionError, PreconditionFailure, ToleranceFailure
from .fixtures import FIXTURE_IDS, fixture, run_fixture
from .lp import DiscreteProblem, make_problem, solve_lp
from .model import Prior, model_from_config, prior_from_config
from .nad import nad_shoot, nad_verify, sand_lever_assign
from .structure import (
    classify_dippedness,
    full_disclosure_test,
    local_ndSDD_test,
    pairs_nested,
    pooling_test,
    sdpd_verdict,
    twist_check,
)

SCHEMA_VERSION = 1
GRID_CAP = 5001
EXIT_OK, EXIT_INFEASIBLE, EXIT_TOLERANCE, EXIT_PRECONDITION, EXIT_USAGE = 0, 2, 3, 5, 64


class UsageError(ConfigError):
    code = "usage_error"


@dataclass
class Tolerances:
    lp: float = 1e-9
    gap: float = 1e-8
    gamma: Optional[float] = None
    nad: float = 1e-3

    def __post_init__(self):
        for k, v in vars(self).items():
            if v is not None and not (v > 0):
                raise ConfigError(f"tolerance {k} must be positive", tolerance=k, value=v)


@dataclass
class RunConfig:
    source: str
    model: object
    prior: Prior
    grid_a: Optional[int]
    grid_theta: Optional[int]
    a_mode: str
    tol: Tolerances
    out: Path
    emit_csv: bool
    params: dict = field(default_factory=dict)
    fixture_id: Optional[str] = None
    orientation: str = "auto"
    steps: int = 500
    mesh: int = 2000


# --------------------------------------------------------------------------
# output helpers


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x) + 0.0)
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    """Deterministic CSV with shortest round-trip floats."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# configuration


def _parse_value(s: str):
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            pass
    if s.lower() in ("true", "false"):
        return s.lower() == "true"
    return s


def parse_params(items) -> dict:
    out = {}
    for it in items or []:
        if "=" not in it:
            raise UsageError(f"--param expects key=value, got {it!r}", param=it)
        k, v = it.split("=", 1)
        out[k.strip()] = _parse_value(v.strip())
    return out


def _grid(value, name):
    if value is None:
        return None
    value = int(value)
    if not 2 <= value <= GRID_CAP:
        raise ConfigError(f"{name} must lie in [2, {GRID_CAP}]", grid=name, value=value)
    return value


def load_config(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}", path=str(path))
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}", path=str(path)) from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object", path=str(path))
    ver = cfg.get("schema_version")
    if ver != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {ver!r}", expected=SCHEMA_VERSION)
    return cfg


def build_run_config(args) -> RunConfig:
    params = parse_params(getattr(args, "param", None))
    cfg = {}
    fid = getattr(args, "fixture", None)
    if getattr(args, "config", None):
        cfg = load_config(args.config)
        fid = fid or cfg.get("fixture")
    grid_cfg = cfg.get("grid", {})
    tol_cfg = dict(cfg.get("tolerances", {}))
    for k in ("lp", "gap", "gamma", "nad"):
        v = getattr(args, f"tol_{k}", None)
        if v is not None:
            tol_cfg[k] = v
    try:
        tol = Tolerances(**tol_cfg)
    except TypeError as exc:
        raise ConfigError(f"unknown tolerance key: {exc}") from exc
    if fid:
        fx = fixture(fid, **{**cfg.get("params", {}), **params})
        model, prior, source = fx.model, fx.prior, f"fixture:{fid}"
        default_a = fx.default_resolution if fid not in ("rs", "quantile") else 201
    elif cfg:
        if "model" not in cfg or "prior" not in cfg:
            raise ConfigError("config needs 'model' and 'prior' (or 'fixture')")
        mcfg = dict(cfg["model"])
        mcfg["parameters"] = {**mcfg.get("parameters", {}), **params}
        model, prior, source = model_from_config(mcfg), prior_from_config(cfg["prior"]), f"config:{args.config}"
        default_a = 101
    else:
        raise UsageError("one of --fixture or --config is required")
    ga = _grid(getattr(args, "grid_a", None) or grid_cfg.get("a") or default_a, "grid_a")
    gt = _grid(getattr(args, "grid_theta", None) or grid_cfg.get("theta"), "grid_theta")
    out = Path(getattr(args, "out", None) or cfg.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return RunConfig(
        source=source,
        model=model,
        prior=prior,
        grid_a=ga,
        grid_theta=gt,
        a_mode=getattr(args, "a_mode", None) or grid_cfg.get("a_mode", "uniform"),
        tol=tol,
        out=out,
        emit_csv=bool(getattr(args, "emit_csv", False)),
        params=params,
        fixture_id=fid,
        orientation=getattr(args, "orientation", "auto") or "auto",
        steps=int(getattr(args, "steps", 500) or 500),
        mesh=int(getattr(args, "mesh", 2000) or 2000),
    )


def _problem(rc: RunConfig) -> DiscreteProblem:
    return make_problem(rc.model, rc.prior, grid_a=rc.grid_a, grid_theta=rc.grid_theta or 201, a_mode=rc.a_mode)


def _state_grid(rc: RunConfig, n_default: int) -> np.ndarray:
    if rc.prior.has_atoms:
        return np.asarray(rc.prior.atoms, dtype=float)
    return np.linspace(*rc.prior.support, rc.grid_theta or n_default)


# --------------------------------------------------------------------------
# commands


def cmd_solve(rc: RunConfig) -> int:
    prob = _problem(rc)
    sol = solve_lp(prob, tol=rc.tol.lp)
    cert = certificate(prob, sol.dual_row_prices, eps_gamma=rc.tol.gamma)
    cs = contact_set(prob, cert)
    ver = verify_support_optimality(prob, sol.outcome, cert)
    dip = classify_dippedness(sol.outcome)
    nested, witness = pairs_nested(sol.outcome, rc.model)

    write_csv(rc.out / "outcome.csv", ["a", "theta", "mass"], sol.outcome.to_rows())
    write_csv(rc.out / "dual.csv", ["theta", "p"], cert.price_rows())
    write_csv(rc.out / "dual_q.csv", ["a", "q", "q_lo", "q_hi", "rule"], cert.multiplier_rows())
    write_csv(rc.out / "contact.csv", ["a", "theta", "in_gamma", "in_gamma_star"], cs.rows())
    gap_ok = abs(sol.gap) <= rc.tol.gap
    summary = {
        "source": rc.source,
        "params": rc.params,
        **sol.summary(),
        "dual_value": float(sol.dual_row_prices @ prob.prior_mass),
        "grid": {"a": int(prob.a_grid.size), "theta": int(prob.theta_grid.size), "a_mode": rc.a_mode},
        "verification": ver.to_dict(),
        "structure": {"dipped": dip.verdict, "dippedness": dip.to_dict(), "pairs_nested": nested,
                      "nesting_witness": witness},
        "tolerances": vars(rc.tol),
        "ok": bool(gap_ok and ver.ok),
    }
    write_json(rc.out / "summary.json", summary)
    if not gap_ok:
        raise ToleranceFailure("duality gap exceeds tolerance", gap=sol.gap, tolerance=rc.tol.gap)
    if not ver.ok:
        raise ToleranceFailure("support point off the contact set or dual infeasible", **ver.to_dict())
    return EXIT_OK


def classify_report(rc: RunConfig) -> dict:
    model = rc.model
    A = np.linspace(*model.a_bounds, rc.grid_a if rc.grid_a and rc.grid_a <= 41 else 21)
    T = _state_grid(rc, 21)
    tw = twist_check(model, A, T)
    sd = sdpd_verdict(model, A, T)
    fd = full_disclosure_test(model, T)
    pool = pooling_test(model, T)
    try:
        local = local_ndSDD_test(model, A).to_dict()
    except PersuasionError as exc:
        local = {"skipped": exc.to_dict()}
    return {
        "source": rc.source,
        "params": rc.params,
        "grid": {"a": int(A.size), "theta": int(T.size)},
        "twist_ok": tw.ok,
        "twist": tw.to_dict(),
        "sdpd": sd.verdict,
        "sdpd_detail": sd.to_dict(),
        "full_disclosure": fd.to_dict(),
        "pooling": pool.to_dict(),
        "local_ndsdd": local,
    }


def cmd_classify(rc: RunConfig) -> int:
    write_json(rc.out / "structure.json", classify_report(rc))
    return EXIT_OK


def _orientation(rc: RunConfig) -> tuple[str, bool]:
    if rc.orientation != "auto":
        return rc.orientation, True
    if rc.model.family == "quantile":
        return "dipped", False
    A = np.linspace(*rc.model.a_bounds, 9)
    T = np.linspace(*rc.prior.support, 9)
    v = sdpd_verdict(rc.model, A, T)
    if v.verdict == "strict_dipped":
        return "dipped", True
    if v.verdict == "strict_peaked":
        return "peaked", True
    raise PreconditionFailure("no strict dipped or peaked structure to shoot along", precondition="sdpd",
                              verdict=v.verdict)


def cmd_nad(rc: RunConfig) -> int:
    from .nad import _require_density

    _require_density(rc.prior)
    orient, check = _orientation(rc)
    sol = nad_shoot(rc.model, rc.prior, orientation=orient, mesh=rc.mesh, steps=rc.steps, check_preconditions=check)
    rep = nad_verify(sol, rc.model, rc.prior, tol=rc.tol.nad)
    grid = np.linspace(*rc.prior.support, rc.grid_theta or 2001)
    out = sand_lever_assign(sol, rc.prior, rc.model, grid)
    sol.to_csv(rc.out / "nad.csv")
    write_csv(rc.out / "nad_outcome.csv", ["a", "theta", "mass"], out.to_rows())
    from .lp import value_under

    report = {
        "source": rc.source,
        "params": rc.params,
        **sol.summary(),
        "verification": rep.to_dict(),
        "sand_lever_value": value_under(out, rc.model),
        "ok": rep.ok,
    }
    write_json(rc.out / "report.json", report)
    if not rep.ok:
        raise ToleranceFailure("boundary verification failed", **rep.to_dict())
    return EXIT_OK


def cmd_fixture(fid: str, resolution: Optional[int], params: dict, out: Path, emit_csv: bool) -> int:
    rep = run_fixture(fid, resolution, **params)
    write_json(out / "report.json", rep.to_dict())
    if emit_csv:
        _emit_artifacts(rep.artifacts, out)
    if not rep.ok:
        failed = [c.name for c in rep.checks if not c.passed]
        raise ToleranceFailure("fixture checks failed", fixture=fid, failed=failed)
    return EXIT_OK


def _emit_artifacts(art: dict, out: Path) -> None:
    if "nad" in art:
        art["nad"].to_csv(out / "nad.csv")
    if "outcome" in art:
        write_csv(out / "nad_outcome.csv", ["a", "theta", "mass"], art["outcome"].to_rows())
    if "lp_solution" in art:
        sol, prob = art["lp_solution"], art["problem"]
        write_csv(out / "outcome.csv", ["a", "theta", "mass"], sol.outcome.to_rows())
        write_csv(out / "dual.csv", ["theta", "p"], list(zip(prob.theta_grid, sol.dual_row_prices)))
    if "certificate" in art:
        write_csv(out / "dual_q.csv", ["a", "q", "q_lo", "q_hi", "rule"], art["certificate"].multiplier_rows())


def load_certificate(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"certificate file not found: {path}", path=str(path))
    try:
        cert = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"certificate is not valid JSON: {exc}") from exc
    for key in ("theta", "p", "a", "q"):
        if key not in cert:
            raise ConfigError(f"certificate needs key {key!r}", missing=key)
    return {k: np.asarray(cert[k], dtype=float) for k in ("theta", "p", "a", "q")}


def cmd_dual_check(rc: RunConfig, cert_path: str) -> int:
    c = load_certificate(cert_path)
    order_t, order_a = np.argsort(c["theta"]), np.argsort(c["a"])
    theta, p, a, q = c["theta"][order_t], c["p"][order_t], c["a"][order_a], c["q"][order_a]
    prob = DiscreteProblem(model=rc.model, a_grid=a, theta_grid=theta, prior_mass=rc.prior.masses_on(theta))
    miss = float(rc.prior.masses_on(theta).sum())
    if abs(miss - 1.0) > 1e-9:
        raise ConfigError("certificate state grid must carry the whole prior", captured_mass=miss)
    cert = fixed_certificate(prob, p, q, eps_gamma=rc.tol.gamma)
    r = d1_residuals(prob, cert)
    min_r = float(np.nanmin(r))
    i, j = np.unravel_index(int(np.nanargmin(r)), r.shape)
    cs = contact_set(prob, cert)
    feasible = min_r >= -rc.tol.gap
    report = {
        "source": rc.source,
        "feasible": feasible,
        "min_residual": min_r,
        "argmin": {"a": float(a[i]), "theta": float(theta[j])},
        "dual_value": float(p @ prob.prior_mass),
        "contact_points": int(cs.in_gamma.sum()),
        "tolerance": rc.tol.gap,
    }
    write_json(rc.out / "report.json", report)
    write_csv(rc.out / "contact.csv", ["a", "theta", "in_gamma", "in_gamma_star"], cs.rows())
    if not feasible:
        raise ToleranceFailure("certificate violates dual feasibility", min_residual=min_r)
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(sp):
    sp.add_argument("--fixture", help="built-in fixture id")
    sp.add_argument("--config", help="JSON problem config")
    sp.add_argument("--param", action="append", metavar="K=V", help="override a numeric parameter")
    sp.add_argument("--grid-a", type=int, help="number of action nodes")
    sp.add_argument("--grid-theta", type=int, help="number of state nodes (density priors)")
    sp.add_argument("--a-mode", choices=("uniform", "matched", "union"))
    sp.add_argument("--tol-lp", type=float, help="simplex reduced-cost tolerance")
    sp.add_argument("--tol-gap", type=float, help="allowed duality gap / dual infeasibility")
    sp.add_argument("--tol-gamma", type=float, help="contact-set binding tolerance")
    sp.add_argument("--tol-nad", type=float, help="boundary verification tolerance")
    sp.add_argument("--out", help="output directory (default: config 'out', else .)")
    sp.add_argument("--emit-csv", action="store_true", help="write artifact curves as CSV")
    sp.add_argument("--jobs", type=int, default=1, help="cap on worker threads")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="persuasion", description="Optimal signals by linear programming and boundary shooting.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    s = sub.add_parser("solve", help="solve the discretised problem and certify it")
    _common(s)
    c = sub.add_parser("classify", help="run the structural tests without solving")
    _common(c)
    n = sub.add_parser("nad", help="shoot the pooling boundaries for a density prior")
    _common(n)
    n.add_argument("--orientation", choices=("auto", "dipped", "peaked"), default="auto")
    n.add_argument("--steps", type=int, default=500)
    n.add_argument("--mesh", type=int, default=2000)
    f = sub.add_parser("fixture", help="run a built-in fixture against its closed forms")
    f.add_argument("id")
    f.add_argument("--resolution", type=int)
    f.add_argument("--param", action="append", metavar="K=V")
    f.add_argument("--out", default=".")
    f.add_argument("--emit-csv", action="store_true")
    f.add_argument("--jobs", type=int, default=1)
    d = sub.add_parser("dual-check", help="verify a user-supplied (p, q) certificate")
    _common(d)
    d.add_argument("--certificate", required=True, help="JSON with theta, p, a, q arrays")
    return ap


def _error_exit(exc: BaseException, out: Path) -> int:
    if isinstance(exc, PersuasionError):
        body, code = exc.to_dict(), exc.exit_code
    else:
        body = {"error": "internal_error", "message": str(exc), "details": {"type": type(exc).__name__,
                "traceback": traceback.format_exc()}}
        code = 1
    body["exit_code"] = code
    text = json.dumps(_clean(body), indent=2, sort_keys=True)
    print(text, file=sys.stderr)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(text + "\n")
    except OSError:
        pass
    return code


def _out_hint(argv) -> Path:
    # so that parse errors still land next to the requested outputs
    for i, tok in enumerate(argv):
        if tok == "--out" and i + 1 < len(argv):
            return Path(argv[i + 1])
        if tok.startswith("--out="):
            return Path(tok.split("=", 1)[1])
    return Path(".")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    out = _out_hint(argv)
    try:
        args = build_parser().parse_args(argv)
        out = Path(getattr(args, "out", None) or ".")
        if not args.command:
            raise UsageError("a subcommand is required", choices=["solve", "classify", "nad", "fixture", "dual-check"])
        if args.jobs is not None and args.jobs < 1:
            raise UsageError("--jobs must be positive")
        with threadpool_limits(limits=args.jobs):
            if args.command == "fixture":
                if args.id not in FIXTURE_IDS:
                    fixture(args.id)
                out.mkdir(parents=True, exist_ok=True)
                return cmd_fixture(args.id, args.resolution, parse_params(args.param), out, args.emit_csv)
            rc = build_run_config(args)
            out = rc.out
            if args.command == "solve":
                return cmd_solve(rc)
            if args.command == "classify":
                return cmd_classify(rc)
            if args.command == "nad":
                return cmd_nad(rc)
            return cmd_dual_check(rc, args.certificate)
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        return _error_exit(exc, out)


if __name__ == "__main__":
    sys.exit(main())
