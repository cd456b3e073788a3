"""Command-line interface.

Exit codes: 0 pass, 1 fail, 2 input error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .domains import Box, DomainError
from .expr import ExpressionSyntaxError, UnknownIdentifierError
from .fieldspec import StepTwoError, SliceError, check_step2
from .flows import FlowError, flow
from .harness import (EXPERIMENTS, EXPERIMENT_FLOWS, ExperimentReport, corpus, extension_config,
                      slice_fields, check_bundle)
from .manifest import ManifestError, load_manifest
from .norms import classical_besov_seminorm, flow_besov_terms, flow_modulus_profile
from .traceops import full_extension, write_grid_csv

EXIT_PASS, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
INPUT_ERRORS = (ManifestError, ExpressionSyntaxError, UnknownIdentifierError, DomainError, SliceError,
                StepTwoError, ValueError, OSError)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="manifest file")
    p.add_argument("--out", help="CSV output path (a directory for 'report')")
    p.add_argument("--seed", type=int, help="override experiment seed")
    p.add_argument("--p", type=float, help="override the integrability exponent")
    p.add_argument("--grid", type=int, help="override the norm grid resolution")
    p.add_argument("--delta", type=float, help="override the flow radius delta")
    p.add_argument("--verbose", action="store_true", help="stream progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hortrace", description="Trace and extension experiments "
                                     "for step-2 vector fields.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="bracket-generating check of the fields")
    _common(p)
    p.add_argument("--point", help="comma-separated point in R^n (default: centre of V2)")

    p = sub.add_parser("flow", help="flow a point along one field")
    _common(p)
    p.add_argument("--field", required=True, help="field name from the manifest")
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--point", help="comma-separated point in R^{n+1} (default: origin)")

    p = sub.add_parser("modulus", help="flow modulus profile of one corpus member")
    _common(p)
    p.add_argument("--member", type=int, default=0)

    p = sub.add_parser("norm", help="flow-Besov and classical Besov norms of the corpus")
    _common(p)

    p = sub.add_parser("extend", help="grid of the full extension of one corpus member")
    _common(p)
    p.add_argument("--member", type=int, default=0)
    p.add_argument("--res", type=int, default=9, help="grid points per axis")

    p = sub.add_parser("verify", help="run one experiment")
    p.add_argument("experiment", choices=sorted(EXPERIMENTS))
    _common(p)

    p = sub.add_parser("report", help="run every experiment, one CSV each")
    _common(p)
    return parser


def _point(text: str | None, dim: int, default) -> np.ndarray:
    if text is None:
        return np.asarray(default, dtype=float)
    pt = np.array([float(v) for v in text.split(",")])
    if pt.size != dim:
        raise ValueError(f"--point needs {dim} coordinates")
    return pt


def _emit_rows(header, rows, out: str | None) -> None:
    import csv

    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    finally:
        if out:
            fh.close()


def _emit_report(report: ExperimentReport, out: str | None) -> None:
    if out:
        report.write(out)
    else:
        report.to_csv(sys.stdout)
    print(report.headline(), file=sys.stderr)


def _run(args) -> int:
    man = load_manifest(args.config).with_overrides(args.p, args.grid, args.delta, args.seed)
    d = man.domain

    if args.command == "check":
        Y = slice_fields(man)
        pt = _point(args.point, man.n, d.V2.center)
        res = check_step2(Y, pt)
        print(f"rank {res.rank}, {'satisfied' if res.satisfied else 'not satisfied'}")
        for i, (l, m) in sorted(res.spanning_set.provenance.items()):
            print(f"[{Y[l].name}, {Y[m].name}] = {res.spanning_set[i]}")
        full = check_bundle(man, np.append(pt, 0.0))
        print(f"bundle on R^{man.n + 1}: rank {full.rank}, "
              f"{'satisfied' if full.satisfied else 'not satisfied'}")
        return EXIT_PASS if res.satisfied and full.satisfied else EXIT_FAIL

    if args.command == "flow":
        Z = man.get_field(args.field)
        x = _point(args.point, man.n + 1, np.zeros(man.n + 1))
        y = flow(Z, x, args.tau, box=d.U)
        _emit_rows([f"x{j + 1}" for j in range(man.n)] + ["t"], [y], args.out)
        return EXIT_PASS

    if args.command == "modulus":
        funcs = corpus(man)
        if not 0 <= args.member < len(funcs):
            raise ValueError(f"--member must lie in 0..{len(funcs) - 1}")
        f = funcs[args.member]
        Y = slice_fields(man)
        nodes = man.norms.nodes()
        profiles = [flow_modulus_profile(f, Z, d.V1, d.V, man.norms, EXPERIMENT_FLOWS, nodes) for Z in Y]
        rows = [[t] + [float(pr[i]) for pr in profiles] for i, t in enumerate(nodes)]
        _emit_rows(["t"] + [f"omega_{Z.name}" for Z in Y], rows, args.out)
        return EXIT_PASS

    if args.command == "norm":
        Y = slice_fields(man)
        rows = []
        for f in corpus(man):
            b = flow_besov_terms(f, Y, d.V1, d.V, man.norms, EXPERIMENT_FLOWS)
            c = classical_besov_seminorm(f, d.V, man.norms)
            rows.append([f.meta["index"], f.label, b.lp, *b.terms, b.value, c])
            if args.verbose:
                print(f"norm {f.meta['index']}: {b.value:.6g}", file=sys.stderr)
        _emit_rows(["function", "label", "lp"] + [f"term_{Z.name}" for Z in Y]
                   + ["flow_besov", "classical_seminorm"], rows, args.out)
        return EXIT_PASS

    if args.command == "extend":
        funcs = corpus(man)
        if not 0 <= args.member < len(funcs):
            raise ValueError(f"--member must lie in 0..{len(funcs) - 1}")
        cfg = extension_config(man)
        F = full_extension(funcs[args.member], cfg)
        box = Box(np.append(d.V1.lo, -cfg.cutoff_radius), np.append(d.V1.hi, cfg.cutoff_radius))
        if args.out:
            with open(args.out, "w", newline="") as fh:
                write_grid_csv(F, box, args.res, fh)
        else:
            write_grid_csv(F, box, args.res, sys.stdout)
        return EXIT_PASS

    if args.command == "verify":
        report = EXPERIMENTS[args.experiment](man, verbose=args.verbose)
        _emit_report(report, args.out)
        return EXIT_PASS if report.passed else EXIT_FAIL

    if args.command == "report":
        out_dir = Path(args.out or ".")
        out_dir.mkdir(parents=True, exist_ok=True)
        ok = True
        for name, run in EXPERIMENTS.items():
            report = run(man, verbose=args.verbose)
            report.write(out_dir / f"{name}.csv")
            print(report.headline(), file=sys.stderr)
            ok = ok and report.passed
        return EXIT_PASS if ok else EXIT_FAIL
    raise AssertionError(args.command)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_PASS
    if args.verbose:
        print(f"kernel backend: {kernels.BACKEND}", file=sys.stderr)
    try:
        return _run(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FlowError as exc:
        print(f"flow error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
