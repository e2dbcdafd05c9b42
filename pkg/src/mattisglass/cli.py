"""Command-line entry point: ``mattisglass <command> [options]``.

Exit codes: 0 success, 1 a check failed, 2 usage or validation error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .expr import ExprError
from .model import DiscretePath, ModelSpec, SpecError, load_spec, spec_hash, spec_from_dict, validate_spec
from .parisi import psi_eval
from .variational import (
    PhiFunction, RateFunctionTable, check_basic_model, conjugate_table, legendre_dual, limit_free_energy,
    rate_function_IG, rate_function_J_basic,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
THREADS_ENV = "MATTISGLASS_THREADS"


class UsageError(Exception):
    pass


# -- helpers ---------------------------------------------------------------------------------

def default_spec_path() -> Path:
    return Path(str(resources.files("mattisglass") / "data" / "basic_model.json"))


def _load(args) -> ModelSpec:
    return load_spec(args.spec or default_spec_path())


def _vectors(items, d: int, name: str) -> list[np.ndarray]:
    out = []
    for item in items:
        try:
            v = np.array([float(c) for c in str(item).split(",")])
        except ValueError:
            raise UsageError(f"--{name}: cannot parse {item!r}") from None
        if v.size != d:
            raise UsageError(f"--{name}: {item!r} has {v.size} components, expected {d}")
        out.append(v)
    return out


def _ints(text: str, name: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--{name}: expected comma-separated integers, got {text!r}") from None


def _read_path(text: str | None, D: int) -> DiscretePath:
    if text is None:
        return DiscretePath.zero(D)
    p = Path(text)
    raw = p.read_text(encoding="utf-8") if p.exists() else text
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as err:
        raise UsageError(f"--path: invalid JSON ({err})") from None
    vals = [np.asarray(v, dtype=float).reshape(D, D) for v in doc["values"]]
    return DiscretePath(np.asarray(doc.get("zetas", []), dtype=float), np.stack(vals)).check()


def _meta(args, spec: ModelSpec, **extra) -> dict:
    meta = {
        "command": args.command,
        "spec_hash": spec_hash(spec),
        "seed": args.seed,
        "threads": os.environ.get(THREADS_ENV, "1"),
        "version": __version__,
    }
    meta.update(extra)
    return meta


def _fmt(v: float) -> str:
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return "%.17g" % v


def _emit(args, name: str, columns: list[str], rows: list[list], meta: dict) -> None:
    """Write a table as CSV (default) or JSON into --out, or to stdout without --out."""
    if args.format == "json":
        body = json.dumps({"columns": columns, "rows": [[_json(v) for v in r] for r in rows], "meta": meta},
                          indent=1) + "\n"
        suffix = ".json"
    else:
        lines = [",".join(columns)] + [",".join(_fmt(v) if isinstance(v, float) else str(v) for v in r) for r in rows]
        body = "\n".join(lines) + "\n"
        suffix = ".csv"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / (name + suffix)).write_text(body, encoding="utf-8", newline="\n")
        if args.format != "json":
            (out / (name + ".meta.json")).write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8",
                                                      newline="\n")
    else:
        sys.stdout.write(body)


def _json(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _write_table(args, name: str, table: RateFunctionTable) -> None:
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.format == "json":
            table.to_json(out / f"{name}.json")
        else:
            table.to_csv(out / f"{name}.csv")
            (out / f"{name}.meta.json").write_text(json.dumps(table.meta, indent=1) + "\n", encoding="utf-8",
                                                   newline="\n")
    else:
        sys.stdout.write(table.to_json() + "\n" if args.format == "json" else table.to_csv())


def _phi(args, spec: ModelSpec) -> PhiFunction:
    return PhiFunction(spec, args.k_rsb, args.quad_nodes)


# -- commands -------------------------------------------------------------------------------------

def cmd_psi(args) -> int:
    spec = _load(args)
    path = _read_path(args.path, spec.D)
    xs = _vectors(args.x or ["0" + ",0" * (spec.d - 1)], spec.d, "x")
    rows = [list(x.astype(float)) + [psi_eval(path, x, spec, args.quad_nodes)] for x in xs]
    cols = [f"x_{i + 1}" for i in range(spec.d)] + ["psi"]
    _emit(args, "psi", cols, rows, _meta(args, spec, quad_nodes=args.quad_nodes, path_jumps=path.k))
    return EXIT_OK


def cmd_phi(args) -> int:
    spec = _load(args)
    phi = _phi(args, spec)
    xs = _vectors(args.x or ["0" + ",0" * (spec.d - 1)], spec.d, "x")
    rows = []
    for x in xs:
        res = phi.result(x)
        rows.append(list(x.astype(float)) + [res.value, res.path.k])
    cols = [f"x_{i + 1}" for i in range(spec.d)] + ["phi", "levels"]
    _emit(args, "phi", cols, rows, _meta(args, spec, k=args.k_rsb, quad_nodes=args.quad_nodes))
    return EXIT_OK


def cmd_rate(args) -> int:
    spec = _load(args)
    if args.basic:
        check_basic_model(spec)
    phi = _phi(args, spec)
    table = conjugate_table(phi, spec, n_m=args.grid)
    rate = rate_function_J_basic(spec, phi, table) if args.basic else rate_function_IG(spec.G, spec, phi, table)
    rate.meta.update(_meta(args, spec, k=args.k_rsb, quad_nodes=args.quad_nodes))
    _write_table(args, "rate", rate)
    if "warning" in rate.meta:
        print(f"warning: {rate.meta['warning']}", file=sys.stderr)
    return EXIT_OK


def cmd_limit_fe(args) -> int:
    spec = _load(args)
    phi = _phi(args, spec)
    res = limit_free_energy(spec.G, spec, args.method, phi, n_m=args.grid)
    cols = [f"m_{i + 1}" for i in range(spec.d)] + ["limit_free_energy"]
    _emit(args, "limit_fe", cols, [list(res.m.astype(float)) + [res.value]],
          _meta(args, spec, method=args.method, k=args.k_rsb, warnings=res.warnings))
    return EXIT_OK


def _budget_check(spec: ModelSpec, n_list: list[int]) -> None:
    from .oracle import ENUMERATION_BUDGET
    S = spec.prior.support.shape[0]
    for n in n_list:
        if n < 1 or n * math.log(S) > math.log(ENUMERATION_BUDGET) + 1e-12:
            raise UsageError(f"N={n} is outside the enumeration budget ({S}^N <= {ENUMERATION_BUDGET}); use mcmc")


def cmd_enumerate(args) -> int:
    from .oracle import enumerate_states, finite_free_energy, sample_disorder
    spec = _load(args)
    n_list = _ints(args.n_list, "n-list")
    _budget_check(spec, n_list)
    rows = []
    for n in n_list:
        for s in range(args.samples):
            smp = sample_disorder(spec, n, args.seed + s)
            enum = enumerate_states(smp, spec)
            rows.append([n, args.seed + s, finite_free_energy(smp, spec, enum=enum),
                         finite_free_energy(smp, spec, "0", enum)])
    _emit(args, "enumerate", ["N", "seed", "free_energy_G", "free_energy_0"], rows, _meta(args, spec))
    return EXIT_OK


def cmd_mcmc(args) -> int:
    from .oracle import mcmc_sample, sample_disorder
    spec = _load(args)
    rows = []
    for n in _ints(args.n_list, "n-list"):
        smp = sample_disorder(spec, n, args.seed)
        res = mcmc_sample(smp, spec, args.sweeps, args.burn_in, args.seed)
        dist = res.dist
        for c, w in zip(dist.centers, dist.masses):
            if w > 0:
                rows.append([n] + list(c.astype(float)) + [float(w)])
        print(f"N={n}: acceptance rate {res.acceptance_rate:.4f}", file=sys.stderr)
    cols = ["N"] + [f"center_{i + 1}" for i in range(spec.d)] + ["mass"]
    _emit(args, "mcmc", cols, rows, _meta(args, spec, sweeps=args.sweeps, burn_in=args.burn_in))
    return EXIT_OK


def cmd_ldp_compare(args) -> int:
    from .oracle import empirical_rate, gibbs_magnetization_dist, sample_disorder
    spec = _load(args)
    n_list = _ints(args.n_list, "n-list")
    _budget_check(spec, n_list)
    phi = _phi(args, spec)
    table = conjugate_table(phi, spec, n_m=args.grid)
    rate = rate_function_IG(spec.G, spec, phi, table)
    sup, rmin = rate.meta["sup_G_minus_phistar"], float(np.min(rate.values))
    rows, summary = [], {}
    for n in n_list:
        tabs = [empirical_rate(gibbs_magnetization_dist(sample_disorder(spec, n, args.seed + s), spec))
                for s in range(args.samples)]
        vals = np.mean([t.values for t in tabs], axis=0)
        occ = np.isfinite(vals)
        if not occ.any():
            print(f"error: no bin is occupied in every sample at N={n}", file=sys.stderr)
            return EXIT_FAIL
        m = np.mean([np.where(np.isfinite(t.values)[:, None], t.m, 0.0) for t in tabs], axis=0)[occ]
        emp = vals[occ] - vals[occ].min()
        gv = np.asarray(spec.G(m), dtype=float).reshape(-1)
        var = np.array([-g + legendre_dual(phi, mm, spec.box_halfwidth).value + sup - rmin for g, mm in zip(gv, m)])
        summary[str(n)] = float(np.max(np.abs(emp - var)))
        for mm, e, v in zip(m, emp, var):
            rows.append([n] + list(mm.astype(float)) + [float(e), float(v), float(abs(e - v))])
    cols = ["N"] + [f"m_{i + 1}" for i in range(spec.d)] + ["empirical", "variational", "abs_diff"]
    _emit(args, "ldp_compare", cols, rows, _meta(args, spec, samples=args.samples, sup_distance=summary))
    for n, dist in summary.items():
        print(f"N={n}: sup-distance {dist:.6f}", file=sys.stderr)
    return EXIT_OK


def _overrides(items) -> dict[str, float]:
    from .acceptance import TOLERANCES
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep or key not in TOLERANCES:
            raise UsageError(f"--override expects CHECK=TOLERANCE with CHECK in {sorted(TOLERANCES)}")
        try:
            out[key] = float(val)
        except ValueError:
            raise UsageError(f"--override: bad tolerance {val!r}") from None
    return out


def cmd_verify(args) -> int:
    from .acceptance import CHECKS, AcceptanceContext, format_line, run_acceptance
    spec = _load(args)
    n_list = _ints(args.n_list, "n-list")
    _budget_check(spec, n_list)
    checks = _ints(args.checks, "checks") if args.checks else sorted(CHECKS)
    unknown = [c for c in checks if c not in CHECKS]
    if unknown:
        raise UsageError(f"--checks: unknown check numbers {unknown}")
    ctx = AcceptanceContext(spec, n_list, args.samples, args.seed, _overrides(args.override))
    results = run_acceptance(ctx, checks, echo=lambda line: print(line, file=sys.stderr))
    report = [{"check": r.check, "status": r.status, "measured": r.measured, "tolerance": r.tolerance,
               "seconds": r.seconds} for r in results]
    text = json.dumps(report, indent=1, default=float) + "\n"
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "verify_report.json").write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)
    failed = [r.check for r in results if not r.passed]
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


COMMANDS = {
    "psi": cmd_psi,
    "phi": cmd_phi,
    "rate": cmd_rate,
    "limit-fe": cmd_limit_fe,
    "enumerate": cmd_enumerate,
    "mcmc": cmd_mcmc,
    "ldp-compare": cmd_ldp_compare,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", help="model spec JSON (default: shipped basic model, beta = 0.2)")
    common.add_argument("--k-rsb", type=int, default=0, help="number of jumps in the path family")
    common.add_argument("--quad-nodes", type=int, default=32, help="Gauss-Hermite nodes per dimension")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--n-list", default="10,14,18", help="comma-separated system sizes")
    common.add_argument("--samples", type=int, default=50, help="disorder samples per N")
    common.add_argument("--grid", type=int, default=129, help="m-grid points per dimension")
    common.add_argument("--out", help="output directory (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    parser = argparse.ArgumentParser(prog="mattisglass", description="Mattis spin-glass variational formulas and finite-N oracle.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("psi", parents=[common], help="cascade functional for a step path")
    p.add_argument("--path", help="path JSON (inline or file): {\"zetas\": [...], \"values\": [[...], ...]}")
    p.add_argument("--x", action="append", help="x vector, comma-separated (repeatable)")
    p = sub.add_parser("phi", parents=[common], help="sup of the Parisi functional over paths")
    p.add_argument("--x", action="append", help="x vector, comma-separated (repeatable)")
    p = sub.add_parser("rate", parents=[common], help="rate function table")
    p.add_argument("--basic", action="store_true", help="basic model: require it and emit J")
    p = sub.add_parser("limit-fe", parents=[common], help="limit free energy")
    p.add_argument("--method", choices=("reduced", "infsup"), default="reduced")
    sub.add_parser("enumerate", parents=[common], help="exact finite-N free energies")
    p = sub.add_parser("mcmc", parents=[common], help="Metropolis magnetization histogram")
    p.add_argument("--sweeps", type=int, default=100_000)
    p.add_argument("--burn-in", type=int, default=1000)
    sub.add_parser("ldp-compare", parents=[common], help="empirical vs variational rate per N")
    p = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    p.add_argument("--checks", help="comma-separated check numbers (default: all)")
    p.add_argument("--override", action="append", help="CHECK=TOLERANCE (repeatable)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.quad_nodes < 2:
            raise UsageError("--quad-nodes must be >= 2")
        if args.k_rsb < 0:
            raise UsageError("--k-rsb must be >= 0")
        return COMMANDS[args.command](args)
    except SpecError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ExprError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
