"""Command-line entry point: ``bbeltrami {verify,simulate,census,spectral}``.

Reports are JSON written with sorted keys and no timestamps, so a fixed
configuration reproduces byte-identical files on the same platform.  Exit
status is 0 when every check passes, 1 when a check fails and 2 for usage or
specification errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .bfield import (
    FieldVanishesError,
    GlobalTorusField,
    SurfaceMetric,
    SymmetricBField,
    beltrami_residual,
    contact_check,
    divergence_residual,
    field_from_json,
    from_hamiltonian,
)
from .census import NonMorseError, classify_equilibria, escape_census
from .dynamics import ClassifyOptions, IntegrateOptions, Trajectory, classify_orbit, integrate, limit_set_estimate
from .spectral import (
    EmptyEigenspaceError,
    conformal_eigenpair,
    eigen_residual_check,
    enumerate_eigenspace,
    morse_audit,
    sample_eigenfunction,
    sheared_eigenpair,
    trig_eigen_residual,
)
from .trig import TrigPolynomial

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- helpers ----------------------------------------------------------------


def _clean(obj: Any) -> Any:
    """Make ``obj`` JSON-serialisable; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def config_hash(config: dict[str, Any]) -> str:
    blob = json.dumps(_clean(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _read_json(spec: str, what: str) -> Any:
    text = spec
    if not spec.lstrip().startswith(("{", "[")):
        path = Path(spec)
        if not path.is_file():
            raise UsageError(f"{what}: no such file {spec!r}")
        text = path.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def load_field(spec: str | None, B: float, C: float):
    if spec is None:
        raise UsageError("--field is required")
    if spec.lower() in ("abc", "babc"):
        return GlobalTorusField.babc(B, C)
    data = _read_json(spec, "field")
    try:
        return field_from_json(data)
    except ValueError as exc:
        raise UsageError(f"field: {exc}") from exc


def load_metric(spec: str | None, fld=None):
    """Return ``(metric, eigenpair or None)``."""
    if spec is None:
        return None, None
    name, _, arg = spec.partition(":")
    if name == "conformal":
        pair = conformal_eigenpair(float(arg) if arg else 0.3)
        return pair.metric, pair
    if name == "sheared":
        f = fld.Xz if fld is not None else TrigPolynomial.parse("cos x + 0.5 sin y")
        lam = abs(fld.lam) if fld is not None else 1.0
        pair = sheared_eigenpair(f, lam)
        return pair.metric, pair
    data = _read_json(spec, "metric")
    try:
        metric = SurfaceMetric.from_json(data)
        metric.validate()
    except ValueError as exc:
        raise UsageError(f"metric: {exc}") from exc
    return metric, None


def _config(args: argparse.Namespace) -> dict[str, Any]:
    cfg = {k: v for k, v in vars(args).items() if k not in ("out", "func")}
    cfg["version"] = __version__
    return cfg


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    p = out / name
    p.write_text(text)
    return p


# -- verify -----------------------------------------------------------------


def cmd_verify(args: argparse.Namespace) -> int:
    fld = load_field(args.field, args.B, args.C)
    metric, pair = load_metric(args.metric, fld)
    tol = args.tol
    checks: dict[str, Any] = {}
    br = beltrami_residual(fld, n=args.gridN)
    checks["beltrami"] = {**br.to_json(), "max": br.max, "pass": br.max <= tol}
    dv = divergence_residual(fld, n=args.gridN)
    checks["divergence"] = {"residual": dv, "pass": dv <= tol}
    try:
        cc = contact_check(fld, n=args.gridN)
        checks["contact"] = {**cc.to_json(), "pass": cc.min_density > 0}
    except FieldVanishesError as exc:
        checks["contact"] = {"error": str(exc), "pass": False}
    lam = fld.lam
    er = trig_eigen_residual(fld.Xz, lam, args.gridN)
    checks["eigenTrig"] = {"residual": er, "pass": er <= tol}
    if metric is not None:
        if pair is not None:
            u, lam_m, label = pair.Xz, pair.lam, pair.name
        else:
            u, lam_m, label = fld.Xz, lam, "field Xz"
        r1 = eigen_residual_check(u, metric, lam_m, args.gridN)
        r2 = eigen_residual_check(u, metric, lam_m, 2 * args.gridN)
        ratio = r1 / r2 if r2 > 0 else math.inf
        entry = {"eigenfunction": label, "gridN": [args.gridN, 2 * args.gridN], "residual": [r1, r2], "ratio": ratio}
        if pair is not None:
            entry["pass"] = abs(ratio - 4) <= 0.5
        else:
            entry["informational"] = True
        checks["eigenMetric"] = entry
    ok = all(c.get("pass", True) for c in checks.values())
    report = {"command": "verify", "configHash": config_hash(_config(args)), "field": fld.to_json(),
              "tolerance": tol, "checks": checks, "pass": ok}
    p = _write(Path(args.out), "verify.json", dumps(report))
    for name, c in sorted(checks.items()):
        status = "info" if c.get("informational") else ("PASS" if c.get("pass") else "FAIL")
        print(f"{name:12s} {status}")
    print(f"wrote {p}")
    return EXIT_OK if ok else EXIT_FAIL


# -- simulate ---------------------------------------------------------------


def _parse_start(text: str) -> tuple[float, float, float]:
    try:
        vals = [float(eval_num(v)) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"--start {text!r}: {exc}") from exc
    if len(vals) != 3:
        raise UsageError(f"--start {text!r}: expected x,y,z")
    return vals[0], vals[1], vals[2]


def eval_num(text: str) -> float:
    """Parse a number, allowing multiples of ``pi`` such as ``pi/2`` or ``3*pi/2``."""
    t = text.strip().replace(" ", "")
    if "pi" not in t:
        return float(t)
    num, _, den = t.partition("/")
    coef = num.replace("pi", "").rstrip("*") or "1"
    if coef == "-":
        coef = "-1"
    value = float(coef) * math.pi
    return value / float(den) if den else value


def _merge_directions(verdict) -> Trajectory:
    bw = verdict.outcomes.get("backward")
    fw = verdict.outcomes.get("forward")
    parts = []
    if bw is not None:
        t = bw.trajectory
        sl = slice(None, None, -1)
        parts.append((t.t[sl], t.x[sl], t.y[sl], t.z[sl], t.H[sl]))
    if fw is not None:
        t = fw.trajectory
        k = 1 if bw is not None else 0
        parts.append((t.t[k:], t.x[k:], t.y[k:], t.z[k:], t.H[k:]))
    cols = [np.concatenate([p[i] for p in parts]) for i in range(5)]
    ref = (fw or bw).trajectory
    return Trajectory(cols[0], cols[1], cols[2], cols[3], ref.chart, cols[4], np.zeros_like(cols[0]), ref.termination)


def cmd_simulate(args: argparse.Namespace) -> int:
    fld = load_field(args.field, args.B, args.C)
    starts = [_parse_start(s) for s in (args.start or [])]
    if not starts:
        raise UsageError("at least one --start x,y,z is required")
    out = Path(args.out)
    verdicts = []
    for i, st in enumerate(starts):
        if args.on_z:
            try:
                tr = integrate(fld, st, (0.0, args.tmax), IntegrateOptions(rtol=args.rtol, on_z=True, sample_dt=0.01))
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
            lim = limit_set_estimate(tr, "omega")
            entry = {"start": list(st), "kind": "onZ", "trajectory": tr.summary(), "omega": lim.to_json()}
        else:
            try:
                v = classify_orbit(fld, st, ClassifyOptions(t_max=args.tmax, rtol=args.rtol))
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
            tr = _merge_directions(v)
            entry = v.to_json()
        name = f"trajectory_{i:03d}.csv"
        _write(out, name, tr.to_csv())
        entry["csv"] = name
        verdicts.append(entry)
        print(f"start {i}: {entry['kind']}{' (inconclusive)' if entry.get('inconclusive') else ''} -> {name}")
    report = {"command": "simulate", "configHash": config_hash(_config(args)), "field": fld.to_json(), "verdicts": verdicts}
    p = _write(out, "verdicts.json", dumps(report))
    print(f"wrote {p}")
    return EXIT_OK


# -- census -----------------------------------------------------------------


def _census_one(fld, opts: ClassifyOptions, grid_n: int):
    audit = morse_audit(fld.Xz, n=grid_n)
    records = classify_equilibria(fld, audit)
    return escape_census(fld, records, opts)


def cmd_census(args: argparse.Namespace) -> int:
    opts = ClassifyOptions(t_max=args.tmax, rtol=args.rtol)
    out = Path(args.out)
    cfg_hash = config_hash(_config(args))
    if args.mu is None:
        fld = load_field(args.field, args.B, args.C)
        try:
            rep = _census_one(fld, opts, args.gridN)
        except NonMorseError as exc:
            raise UsageError(f"census: {exc}") from exc
        doc = {**rep.to_json(), "command": "census", "configHash": cfg_hash}
        _write(out, "census.json", dumps(doc))
        _write(out, "escapes.csv", rep.escape_csv())
        c = doc["counts"]
        print(f"equilibria {c['equilibria']}  seeds {c['seeds']}  escapes {c['escapeOrbits']}  "
              f"SPOs {c['singularPeriodic']}  inconclusive {c['inconclusive']}")
        print(f"bound {doc['bound']['requiredEscapes']} (or an SPO): {'met' if rep.bound_satisfied else 'VIOLATED'}")
        return EXIT_OK if rep.bound_satisfied else EXIT_FAIL
    try:
        basis = enumerate_eigenspace(args.mu)
    except EmptyEigenspaceError as exc:
        raise UsageError(str(exc)) from exc
    lam = math.sqrt(args.mu)
    rows, skipped, csv_parts = [], [], []
    all_ok = True
    n_verdicts = n_inconclusive = 0
    for i in range(args.samples):
        seed = args.seed + i
        f = sample_eigenfunction(basis, seed)
        fld = from_hamiltonian(lam, f)
        try:
            rep = _census_one(fld, opts, args.gridN)
        except NonMorseError as exc:
            skipped.append({"seed": seed, "reason": str(exc)})
            continue
        j = rep.to_json()
        all_ok &= rep.bound_satisfied
        n_verdicts += j["counts"]["seeds"]
        n_inconclusive += j["counts"]["inconclusive"]
        rows.append({"seed": seed, "Xz": f.to_json(), "counts": j["counts"], "bound": j["bound"],
                     "singularPeriodicPairs": j["singularPeriodicPairs"], "equilibria": j["equilibria"]})
        body = rep.escape_csv().splitlines()
        if not csv_parts:
            csv_parts.append("sample," + body[0])
        csv_parts.extend(f"{seed},{line}" for line in body[1:])
        print(f"seed {seed}: escapes {j['counts']['escapeOrbits']} SPOs {j['counts']['singularPeriodic']} "
              f"inconclusive {j['counts']['inconclusive']} bound {'met' if rep.bound_satisfied else 'VIOLATED'}")
    doc = {
        "schema_version": "1.0", "command": "census", "configHash": cfg_hash, "mu": args.mu, "lambda": lam,
        "samples": rows, "skipped": skipped,
        "summary": {"reports": len(rows), "skipped": len(skipped), "allBoundsMet": all_ok,
                    "verdicts": n_verdicts, "inconclusive": n_inconclusive,
                    "inconclusiveFraction": n_inconclusive / n_verdicts if n_verdicts else 0.0},
    }
    _write(out, "census.json", dumps(doc))
    _write(out, "escapes.csv", "\n".join(csv_parts) + ("\n" if csv_parts else ""))
    print(f"{len(rows)} reports, {len(skipped)} skipped, bounds {'all met' if all_ok else 'VIOLATED'}")
    return EXIT_OK if all_ok else EXIT_FAIL


# -- spectral ---------------------------------------------------------------


def _audit_line(audit, **extra) -> dict[str, Any]:
    return {**extra, "isMorse": audit.is_morse, "zeroSetRegular": audit.zero_set_regular,
            "generic": audit.generic, "counts": audit.counts, "eulerCharacteristic": audit.euler_characteristic,
            "minAbsHessDet": audit.min_abs_hess_det, "minAbsCriticalValue": audit.min_abs_critical_value}


def cmd_spectral(args: argparse.Namespace) -> int:
    try:
        basis = enumerate_eigenspace(args.mu)
    except EmptyEigenspaceError as exc:
        raise UsageError(str(exc)) from exc
    lines = [{"kind": "basis", "configHash": config_hash(_config(args)), **basis.to_json()}]
    morse = generic = 0
    for i in range(args.samples):
        seed = args.seed + i
        f = sample_eigenfunction(basis, seed)
        a = morse_audit(f, n=args.gridN)
        morse += a.is_morse
        generic += a.generic
        lines.append(_audit_line(a, kind="sample", seed=seed))
    ok = True
    for expr in args.inject or []:
        try:
            f = TrigPolynomial.parse(expr)
        except ValueError as exc:
            raise UsageError(f"--inject {expr!r}: {exc}") from exc
        a = morse_audit(f, n=args.gridN)
        lines.append(_audit_line(a, kind="injected", expression=expr, onShell=all(
            k1 * k1 + k2 * k2 == args.mu for k1, k2 in f.modes)))
        ok &= a.euler_characteristic == 0 or not a.is_morse
    if args.samples:
        lines.append({"kind": "summary", "samples": args.samples, "morseFraction": morse / args.samples,
                      "genericFraction": generic / args.samples})
    text = "".join(json.dumps(_clean(l), sort_keys=True) + "\n" for l in lines)
    p = _write(Path(args.out), "spectral.jsonl", text)
    print(f"mu {args.mu}: dim {basis.dim}, modes {basis.modes}")
    if args.samples:
        print(f"Morse fraction {morse / args.samples:.4f}  generic fraction {generic / args.samples:.4f}")
    for l in lines:
        if l["kind"] == "injected":
            print(f"inject {l['expression']!r}: {'Morse' if l['isMorse'] else 'non-Morse'}")
    print(f"wrote {p}")
    return EXIT_OK if ok else EXIT_FAIL


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--field", help="'abc', a JSON field document, or a path to one")
    common.add_argument("--B", type=float, default=1.0, help="b-ABC coefficient B (default 1)")
    common.add_argument("--C", type=float, default=2.0, help="b-ABC coefficient C (default 2)")
    common.add_argument("--metric", help="'conformal[:c]', 'sheared', or a JSON metric document/path")
    common.add_argument("--gridN", type=int, default=64)
    common.add_argument("--rtol", type=float, default=1e-10)
    common.add_argument("--tmax", type=float, default=1000.0)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=".", help="output directory")

    p = argparse.ArgumentParser(prog="bbeltrami", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", parents=[common], help="residual checks of a field")
    v.add_argument("--tol", type=float, default=1e-12)
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("simulate", parents=[common], help="integrate and classify orbits")
    s.add_argument("--start", action="append", help="x,y,z (repeatable; 'pi/2' style values allowed)")
    s.add_argument("--on-z", dest="on_z", action="store_true", help="integrate the restriction to Z")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("census", parents=[common], help="equilibria and escape-orbit census")
    c.add_argument("--mu", type=int, help="sample symmetric fields from the eigenspace E_mu")
    c.add_argument("--samples", type=int, default=1)
    c.set_defaults(func=cmd_census)

    sp = sub.add_parser("spectral", parents=[common], help="eigenspace basis and Morse statistics")
    sp.add_argument("--mu", type=int, required=True)
    sp.add_argument("--samples", type=int, default=0)
    sp.add_argument("--inject", action="append", help="extra function to audit, e.g. 'cos x'")
    sp.set_defaults(func=cmd_spectral)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.gridN < 32:
        parser.error("--gridN must be >= 32")
    if not args.rtol > 0 or not args.tmax > 0:
        parser.error("--rtol and --tmax must be positive")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_exit()
