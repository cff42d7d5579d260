"""Command-line front end.

Every verb writes one JSON RunReport (schema "1") to stdout or --out.  The
report echoes the command, the toolkit version, a SHA-256 hash of the
canonical JSON of the command and config, the verb's payload and timings.

Exit codes: 0 success, 1 computational failure, 2 usage error,
3 rejected certificate.

CSV column orders (frozen):
  spectrum:     index,value,residual_norm
  weyl:         envelope_width,residual,kinetic,potential
  necessity:    scale,quotient
  continuity:   h,mu,mu_perturbed,deviation
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from typing import Any, Sequence

from . import __version__
from .errors import MultipolarError, UsageError

SCHEMA = "1"
VERBS = ("classify", "mu", "spectrum", "certify", "sa-check", "weyl", "experiment", "report")
EXPERIMENTS = ("necessity", "sufficiency", "zero-crossing", "attainability", "continuity",
               "spectrum-count")
# keys that never enter the config hash
_UNHASHED = ("out", "plot")


@dataclass
class Command:
    verb: str
    options: dict = field(default_factory=dict)
    input: str | None = None


@dataclass
class RunReport:
    command: dict
    version: str
    config_hash: str
    results: Any
    timings: dict
    exit_code: int = 0
    plot: str | None = None

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, "command": self.command, "version": self.version,
                "config_hash": self.config_hash, "results": self.results, "timings": self.timings}

    def to_json(self) -> str:
        return dumps(self.to_dict())


def _clean(obj):
    """Replace non-finite floats by None so the output is strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        return _clean(obj.item())
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def config_hash(command: Command, config: dict | None) -> str:
    opts = {k: v for k, v in command.options.items() if k not in _UNHASHED}
    blob = json.dumps(_clean({"verb": command.verb, "options": opts, "config": config}),
                      sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------- parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)

    def exit(self, status=0, message=None):
        if status:
            raise UsageError(message or "usage error")
        if message:
            sys.stderr.write(message)
        raise SystemExit(status)


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _build_parser() -> _Parser:
    root = _Parser(prog="multipolar", add_help=True)
    sub = root.add_subparsers(dest="verb", parser_class=_Parser)

    def verb(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--out", help="write the JSON report here instead of stdout")
        p.add_argument("--plot", help="optional SVG output path")
        return p

    p = verb("classify", "mass conditions for a configuration")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--masses", type=_floats, required=True)

    for name in ("mu", "spectrum"):
        p = verb(name, "Galerkin mu_hat" if name == "mu" else "lowest nu_k")
        p.add_argument("--config", required=True)
        p.add_argument("--mesh", default="default", help="default, coarse, fine or a MeshSpec JSON file")
        p.add_argument("--levels", type=int, default=1, help="number of nested meshes")
        p.add_argument("--extrapolate", type=float, default=None, help="Richardson order")
        if name == "spectrum":
            p.add_argument("--k", type=int, default=3)
        else:
            p.add_argument("--export-matrices", default=None, help="Matrix Market prefix")

    p = verb("certify", "build or recheck a positivity certificate")
    p.add_argument("--mode", choices=("shattering", "separation", "infinity"))
    p.add_argument("--config")
    p.add_argument("--second", help="second config for separation")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--gamma", type=float, default=None, help="tail strength for infinity mode")
    p.add_argument("--recheck", help="certificate or report JSON to re-verify")

    p = verb("sa-check", "per-pole essential self-adjointness")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--mass", type=float, action="append")
    p.add_argument("--masses", type=_floats)
    p.add_argument("--ode-verify", action="store_true")

    p = verb("weyl", "Weyl packet residuals")
    p.add_argument("--config", required=True)
    p.add_argument("--lambda", dest="spectral_point", type=float, default=1.0)
    p.add_argument("--widths", type=_floats, default=[4.0, 8.0, 16.0])
    p.add_argument("--translation", type=float, default=32.0)

    p = verb("experiment", "named study")
    p.add_argument("--name", choices=EXPERIMENTS, required=True)
    p.add_argument("--config")
    p.add_argument("--masses", type=_floats)
    p.add_argument("--mode", choices=("spread", "concentrate"), default="spread")
    p.add_argument("--displacements", type=_floats, default=[0.2, 0.1, 0.05])
    p.add_argument("--mesh", default="default")
    p.add_argument("--k", type=int, default=6)

    p = verb("report", "render a stored report")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("json", "csv"), default="csv")
    return root


def _attach_negative_values(argv: list) -> list:
    """Glue '--masses -1,-0.5' into '--masses=-1,-0.5'; argparse would read the list as a flag."""
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        nxt = argv[i + 1] if i + 1 < len(argv) else None
        if (tok.startswith("--") and "=" not in tok and nxt is not None and len(nxt) > 1
                and nxt[0] == "-" and (nxt[1].isdigit() or nxt[1] == ".")):
            out.append(f"{tok}={nxt}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def parse(argv: Sequence[str]) -> Command:
    argv = list(argv)
    if not argv:
        raise UsageError("missing verb; one of " + ", ".join(VERBS))
    if argv[0] not in VERBS and not argv[0].startswith("-"):
        raise UsageError(f"unknown verb {argv[0]!r}")
    ns = _build_parser().parse_args(_attach_negative_values(argv))
    if ns.verb is None:
        raise UsageError("missing verb")
    opts = {k: v for k, v in vars(ns).items() if k != "verb"}
    verb = ns.verb
    if verb == "certify":
        if not opts["recheck"]:
            if not opts["mode"] or not opts["config"]:
                raise UsageError("certify needs --mode and --config, or --recheck")
            if opts["mode"] == "separation" and not opts["second"]:
                raise UsageError("separation needs --second")
            if opts["mode"] == "infinity" and opts["gamma"] is None:
                raise UsageError("infinity mode needs --gamma")
    if verb == "sa-check" and not (opts["mass"] or opts["masses"]):
        raise UsageError("sa-check needs --mass or --masses")
    if verb == "experiment":
        need_cfg = opts["name"] in ("attainability", "continuity", "spectrum-count")
        if need_cfg and not opts["config"]:
            raise UsageError(f"experiment {opts['name']} needs --config")
        if not need_cfg and not opts["masses"]:
            raise UsageError(f"experiment {opts['name']} needs --masses")
    for key in ("levels", "k"):
        if key in opts and opts[key] is not None and opts[key] < 1:
            raise UsageError(f"--{key} must be positive")
    inp = opts.get("config") or opts.get("input") or opts.get("recheck")
    return Command(verb, opts, inp)


# ---------------------------------------------------------------- helpers


def _read_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc


def _load_config(path: str):
    from .core import PotentialSpec

    raw = _read_json(path)
    body = {k: v for k, v in raw.items() if k not in ("mesh", "grid")}
    try:
        spec = PotentialSpec.from_dict(body)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: invalid potential: {exc}") from exc
    return spec, raw.get("mesh"), raw.get("grid"), raw


def _mesh_spec(choice: str, block: dict | None):
    from .mesh import DEFAULT_MESH, MeshSpec

    base = MeshSpec.from_dict(block) if block else DEFAULT_MESH
    if choice == "default":
        return base
    if choice == "coarse":
        return base.refined(-2)
    if choice == "fine":
        return base.refined(1)
    return MeshSpec.from_dict(_read_json(choice))


def _grid(block: dict | None):
    from .radial import PROFILE_GRID, LogGrid

    if not block:
        return PROFILE_GRID
    return LogGrid(float(block["s_min"]), float(block["s_max"]), int(block["n"]))


def _solve(spec, ms, kind, levels, order, k=1):
    from .galerkin import assemble, compute_mu, compute_nu, nested_meshes, refine_and_extrapolate

    if levels > 1:
        return [refine_and_extrapolate(spec, nested_meshes(ms, levels), kind, k=k, order=order)]
    forms = assemble(spec, ms)
    if kind == "mu":
        res = [compute_mu(forms)]
    else:
        res = compute_nu(forms, k)
    for r in res:
        r.refinement_history = [(f"depth={ms.pole_refine_depth},n0={ms.base_cells_per_axis},"
                                 f"dofs={forms.A.shape[0]}", r.value)]
    return res


# ---------------------------------------------------------------- verbs


def _classify(o, _cfg):
    from .core import classify_masses

    return classify_masses(o["masses"], o["dim"]).to_dict(), 0, None


def _mu(o, cfg):
    spec, mblock, _, _ = cfg
    ms = _mesh_spec(o["mesh"], mblock)
    if o.get("export_matrices"):
        from .galerkin import assemble

        assemble(spec, ms).export_matrix_market(o["export_matrices"])
    res = _solve(spec, ms, "mu", o["levels"], o["extrapolate"])[0]
    return res.to_dict(), 0, None


def _spectrum(o, cfg):
    spec, mblock, _, _ = cfg
    ms = _mesh_spec(o["mesh"], mblock)
    if o["levels"] > 1:
        res = [_solve(spec, ms, "nu", o["levels"], o["extrapolate"], k=j)[0] for j in range(1, o["k"] + 1)]
    else:
        res = _solve(spec, ms, "nu", 1, None, k=o["k"])
    rows = [r.to_dict() for r in res]
    payload = {"nu": [r["value"] for r in rows], "results": rows,
               "negative_count": sum(1 for r in rows if r["value"] < 0)}
    return payload, 0, None


def _certify(o, cfg):
    from .certificates import (Certificate, build_infinity_perturbation, build_separation,
                               build_shattering, recheck)

    if o["recheck"]:
        raw = _read_json(o["recheck"])
        if "results" in raw and "certificate" in raw.get("results", {}):
            raw = raw["results"]["certificate"]
        cert = Certificate.from_dict(raw)
        fresh = recheck(cert)
        a, b = cert.min_residual, fresh.min_residual
        agree = abs(a - b) <= 1e-12 * max(abs(a), abs(b), 1e-300)
        payload = {"certificate": fresh.to_dict(), "stored_min_residual": a,
                   "recomputed_min_residual": b, "agrees": agree}
        return payload, 0 if (agree and fresh.accepted) else 3, None
    spec, _, gblock, raw = cfg
    grid = _grid(gblock)
    verification = raw.get("verification")
    mode = o["mode"]
    extra = {}
    if mode == "shattering":
        delta, cert = build_shattering(spec, o["alpha"], grid=grid, verification=verification)
        extra["delta"] = delta
    elif mode == "separation":
        spec2 = _load_config(o["second"])[0]
        y, cert = build_separation(spec, spec2, grid=grid, verification=verification)
        extra["translation"] = list(map(float, y))
    else:
        r_tilde, cert = build_infinity_perturbation(spec, o["gamma"], grid=grid, verification=verification)
        extra["R_tilde"] = r_tilde
    payload = {"certificate": cert.to_dict(), "accepted": cert.accepted, **extra}
    return payload, 0 if cert.accepted else 3, None


def _sa_check(o, _cfg):
    from .core import classify_masses, hardy_constant
    from .radial import deficiency_solution

    masses = list(o["mass"] or []) + list(o["masses"] or [])
    N = o["dim"]
    H = hardy_constant(N)
    poles = []
    for m in masses:
        row = {"mass": m, "threshold": H - 1.0,
               "self_adjoint": classify_masses([m], N).essentially_self_adjoint}
        if o["ode_verify"]:
            if m < H - 1e-6:
                prof, in_l2 = deficiency_solution(m, 1.0, 1.0, -1.0, N)
                row["deficiency_in_L2"] = in_l2
                row["numeric_in_L2"] = prof.meta["numeric_in_L2"]
                row["consistent"] = in_l2 == (not row["self_adjoint"])
            else:
                row["deficiency_in_L2"] = None
        poles.append(row)
    payload = {"dim": N, "poles": poles, "self_adjoint": all(p["self_adjoint"] for p in poles)}
    return payload, 0, None


def _weyl(o, cfg):
    from .galerkin import WeylPacket, weyl_residual

    spec = cfg[0]
    lam = o["spectral_point"]
    N = spec.dim
    kvec = (math.sqrt(lam),) + (0.0,) * (N - 1)
    shift = (o["translation"],) + (0.0,) * (N - 1)
    rows = []
    for w in o["widths"]:
        r = weyl_residual(spec, lam, WeylPacket(w, shift, kvec))
        rows.append({"envelope_width": w, **{k: r[k] for k in ("residual", "kinetic", "potential")}})
    ratios = [rows[j + 1]["residual"] / rows[j]["residual"] for j in range(len(rows) - 1)]
    plot = None
    if o.get("plot"):
        from .experiments import svg_line_plot

        plot = svg_line_plot([r["envelope_width"] for r in rows], [r["residual"] for r in rows],
                             "envelope width", "residual")
    return {"spectral_point": lam, "translation": o["translation"], "rows": rows,
            "ratios": ratios}, 0, plot


def _experiment(o, cfg):
    from . import experiments as ex

    name = o["name"]
    plot = None
    if name == "necessity":
        masses = o["masses"]
        if o["mode"] == "concentrate" or len(masses) == 1:
            config = [(0.0, 0.0, 0.0)] * len(masses)
            mode = "concentrate"
        else:
            config = [(2.0 * j - (len(masses) - 1), 0.0, 0.0) for j in range(len(masses))]
            mode = "spread"
        scales = ex.default_scales(mode)
        fam = ex.ScalingFamily(ex.LogProfileBase(), (0.0, 0.0, 0.0), scales, mode)
        tr = ex.necessity_trace(masses, config, fam)
        payload = tr.to_dict()
        if o.get("plot"):
            plot = tr.to_svg()
    elif name == "sufficiency":
        payload = ex.sufficiency_pipeline(o["masses"]).to_dict()
    elif name == "zero-crossing":
        masses = o["masses"]
        neg = [j for j, m in enumerate(masses) if m < 0]
        pos = [m for m in masses if m >= 0]
        far = [(0.0, 10.0, 0.0)] * len(neg)
        path = ex.ConfigurationPath.cluster(tuple(pos) + tuple(masses[j] for j in neg), far, 1e-2, 1.0)
        payload = ex.zero_crossing(path.masses, path).to_dict()
    else:
        spec, mblock, _, _ = cfg
        ms = _mesh_spec(o["mesh"], mblock)
        if name == "attainability":
            payload = ex.attainability_report(spec, [ms]).to_dict()
        elif name == "continuity":
            rep = ex.continuity_report(spec, o["displacements"], mesh=ms)
            payload = rep.to_dict()
            if o.get("plot"):
                plot = ex.svg_line_plot(list(o["displacements"]), rep.deviations, "h", "deviation")
        else:
            from .galerkin import nested_meshes

            payload = ex.negative_eigenvalue_count(spec, nested_meshes(ms, 2), k=o["k"]).to_dict()
    return {"name": name, "report": payload}, 0, None if plot is None else plot


def _csv(results: dict, verb: str) -> str:
    if verb == "spectrum":
        rows = [(r["index"], r["value"], r["residual_norm"]) for r in results["results"]]
        head = "index,value,residual_norm"
    elif verb == "weyl":
        rows = [(r["envelope_width"], r["residual"], r["kinetic"], r["potential"]) for r in results["rows"]]
        head = "envelope_width,residual,kinetic,potential"
    elif verb == "experiment" and results.get("name") == "necessity":
        rep = results["report"]
        rows = list(zip(rep["scales"], rep["values"]))
        head = "scale,quotient"
    elif verb == "experiment" and results.get("name") == "continuity":
        rows = [(r["h"], r["mu"], r["mu_perturbed"], r["deviation"]) for r in results["report"]["rows"]]
        head = "h,mu,mu_perturbed,deviation"
    else:
        flat = {k: v for k, v in results.items() if not isinstance(v, (dict, list))}
        return "key,value\n" + "".join(f"{k},{json.dumps(v)}\n" for k, v in sorted(flat.items()))
    return head + "\n" + "".join(",".join(repr(v) if isinstance(v, float) else str(v) for v in r) + "\n"
                                 for r in rows)


def _report(o, _cfg):
    raw = _read_json(o["input"])
    if raw.get("schema") != SCHEMA or "results" not in raw:
        raise UsageError(f"{o['input']} is not a schema {SCHEMA} run report")
    verb = raw.get("command", {}).get("verb")
    if o["format"] == "csv":
        text = _csv(raw["results"], verb)
    else:
        text = dumps(raw["results"])
    return {"source_verb": verb, "format": o["format"], "text": text}, 0, None


_DISPATCH = {"classify": _classify, "mu": _mu, "spectrum": _spectrum, "certify": _certify,
             "sa-check": _sa_check, "weyl": _weyl, "experiment": _experiment, "report": _report}
_NEEDS_CONFIG = ("mu", "spectrum", "weyl")


def execute(command: Command) -> RunReport:
    """Run a parsed command.  Module errors become a structured error payload."""
    o = command.options
    t0 = time.perf_counter()
    cfg = None
    raw_cfg = None
    if o.get("config") and not (command.verb == "certify" and o.get("recheck")):
        cfg = _load_config(o["config"])
        raw_cfg = cfg[3]
    elif command.verb in _NEEDS_CONFIG:
        raise UsageError(f"{command.verb} needs --config")
    if command.verb == "certify" and o.get("second"):
        raw_cfg = {"first": raw_cfg, "second": _read_json(o["second"])}
    if command.verb in ("report",) or o.get("recheck"):
        raw_cfg = _read_json(command.input)
    digest = config_hash(command, raw_cfg)
    echo = {"verb": command.verb, "options": _clean(o), "input": command.input}
    plot = None
    try:
        payload, code, plot = _DISPATCH[command.verb](o, cfg)
    except UsageError:
        raise
    except MultipolarError as exc:
        payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        code = exc.exit_code
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        code = 1
    timings = {"total_seconds": time.perf_counter() - t0}
    return RunReport(echo, __version__, digest, payload, timings, code, plot)


def _write_atomic(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        command = parse(argv)
        report = execute(command)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        sys.stdout.write(dumps({"schema": SCHEMA, "error": {"type": "UsageError", "message": str(exc)}}))
        return 2
    text = report.to_json()
    if command.options.get("out"):
        _write_atomic(command.options["out"], text)
    else:
        sys.stdout.write(text)
    if command.options.get("plot") and report.plot:
        _write_atomic(command.options["plot"], report.plot)
    return report.exit_code


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
