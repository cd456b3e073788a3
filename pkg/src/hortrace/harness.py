"""Experiment drivers and CSV reports.

Every ``verify_*`` function takes a :class:`~hortrace.manifest.Manifest` and
returns an :class:`ExperimentReport`. Pass rules are stability rules: the
constants in the inequalities are not explicit, so a run passes when the
measured ratios stay within a bounded spread across the dyadic corpus.
"""

from __future__ import annotations

import csv
import io
import sys
import time
from dataclasses import dataclass, field
from typing import IO, Callable

import numpy as np

from . import expr as ex
from .domains import Box, DomainError, ScalarField, bump, test_corpus, time_product, admissible_delta
from .fieldspec import (Basis, StepTwoError, VectorField, check_step2, complete_basis, is_d_dt,
                        restrict_to_slice)
from .flows import FlowSolverConfig, residual_exponent, straighten
from .manifest import Manifest, ManifestError
from .norms import NormParams, besov_term, flow_besov_terms, shift_norm, sobolev_terms
from .traceops import ExtensionConfig, extension_sobolev_terms, full_extension, restrict

EXPERIMENT_FLOWS = FlowSolverConfig(method="auto")


class AdmissibilityError(DomainError):
    """delta is too large for the flows to stay in V."""


@dataclass
class ExperimentReport:
    """Rows of per-function measurements plus an audited summary.

    ``params`` echoes every tolerance and grid used. ``wall_time`` is kept
    out of the CSV so identical inputs give byte-identical files.
    """

    experiment: str
    params: dict
    columns: list
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    passed: bool = False
    wall_time: float = 0.0

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows])

    def to_csv(self, out: IO[str]) -> None:
        out.write(f"# experiment = {self.experiment}\n")
        for key, value in self.params.items():
            out.write(f"# param {key} = {_fmt(value)}\n")
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_fmt(row[c]) for c in self.columns])
        for key, value in self.summary.items():
            out.write(f"# summary {key} = {_fmt(value)}\n")
        out.write(f"# pass = {'true' if self.passed else 'false'}\n")

    def csv_text(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            self.to_csv(fh)

    def headline(self) -> str:
        keys = [k for k in ("spread", "C", "drift", "slope", "degenerate", "roundtrip_error") if k in self.summary]
        info = ", ".join(f"{k}={_fmt(self.summary[k])}" for k in keys)
        return f"{self.experiment}: {'PASS' if self.passed else 'FAIL'} ({info})"


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (tuple, list)):
        if value and all(isinstance(v, (tuple, list)) for v in value):
            return "; ".join(", ".join(_fmt(x) for x in v) for v in value)
        return " ".join(_fmt(v) for v in value)
    return str(value)


def _progress(verbose: bool, message: str) -> None:
    if verbose:
        print(message, file=sys.stderr, flush=True)


def ratio_spread(ratios) -> float:
    r = np.asarray(ratios, dtype=float)
    if r.size == 0 or np.any(~np.isfinite(r)) or np.any(r <= 0):
        return float("inf")
    return float(r.max() / r.min())


def _ratio_summary(ratios, bound: float) -> tuple[dict, bool]:
    r = np.asarray(ratios, dtype=float)
    spread = ratio_spread(r)
    summary = {"min_ratio": float(r.min()), "max_ratio": float(r.max()),
               "median_ratio": float(np.median(r)), "spread": spread, "ratio_bound": bound}
    return summary, bool(spread <= bound)


# ------------------------------------------------------------ manifest views

def bundle(manifest: Manifest) -> tuple[list[VectorField], VectorField]:
    """(X fields, d/dt) from a manifest; exactly one field must be d/dt."""
    dts = [Z for Z in manifest.fields if is_d_dt(Z)]
    if len(dts) != 1:
        raise ManifestError("fields must contain exactly one d/dt field (0, ..., 0, 1)")
    return [Z for Z in manifest.fields if not is_d_dt(Z)], dts[0]


def slice_fields(manifest: Manifest) -> list[VectorField]:
    """Y_i = X_i restricted to t = 0."""
    xs, _ = bundle(manifest)
    grid = manifest.domain.V.vertices(5)
    return [restrict_to_slice(X, grid) for X in xs]


def check_bundle(manifest: Manifest, point=None):
    """Step-2 check of the bundle on R^{n+1} at (centre of V2, 0)."""
    if point is None:
        point = np.append(manifest.domain.V2.center, 0.0)
    return check_step2(manifest.fields, point)


def slice_basis(manifest: Manifest) -> Basis:
    return complete_basis(slice_fields(manifest), manifest.domain.V2.center)


def require_admissible(fields, manifest: Manifest, delta: float) -> None:
    d = manifest.domain
    got = admissible_delta(fields, d.V1, d.V, delta, EXPERIMENT_FLOWS, safety=1.0)
    if got < delta:
        raise AdmissibilityError(f"flows from V1 leave V before |tau| = {delta:g}")


def corpus(manifest: Manifest) -> list[ScalarField]:
    return test_corpus(manifest.domain, int(manifest.experiment.get("corpus_size", 10)))


def time_cutoff(manifest: Manifest) -> ScalarField:
    """bump in t with radius epsilon/2, so products live in V2 x (-eps/2, eps/2)."""
    return bump([0.0], manifest.domain.epsilon / 2)


def _scale_of(f: ScalarField) -> float:
    return float(f.meta.get("scale", np.nan))


def extension_config(manifest: Manifest, basis: Basis | None = None) -> ExtensionConfig:
    ext = manifest.extension
    d = manifest.domain
    kwargs = {}
    if "seeley" in ext:
        kwargs["seeley_coeffs"] = ext["seeley"]
    if "cutoff_radius" in ext:
        kwargs["cutoff_radius"] = ext["cutoff_radius"]
    return ExtensionConfig(basis or slice_basis(manifest), ext.get("delta", d.delta), V=d.V, V1=d.V1,
                           V2=d.V2, quad_order=ext.get("quad_order", 12), **kwargs)


def _base_params(manifest: Manifest) -> dict:
    params = manifest.describe()
    params["flow_method"] = EXPERIMENT_FLOWS.method
    params["flow_rtol"] = EXPERIMENT_FLOWS.rel_tol
    params["flow_atol"] = EXPERIMENT_FLOWS.abs_tol
    return params


# --------------------------------------------------------------- experiments

def verify_restriction(manifest: Manifest, verbose: bool = False) -> ExperimentReport:
    """Ratio ||R phi||_{W_{1-1/p,p}} / ||phi||_{W_{1,p}} over product test functions."""
    start = time.perf_counter()
    step2 = check_bundle(manifest)
    if not step2.satisfied:
        raise StepTwoError(f"bundle has rank {step2.rank} < {manifest.n + 1}")
    Y = slice_fields(manifest)
    params = manifest.norms
    require_admissible(Y, manifest, params.delta)
    d = manifest.domain
    rho = time_cutoff(manifest)
    bound = float(manifest.experiment.get("ratio_bound", 10.0))
    cols = ["function", "label", "scale", "besov_restriction", "sobolev", "ratio"]
    report = ExperimentReport("restriction", _base_params(manifest), cols)
    for f in corpus(manifest):
        phi = time_product(f, rho)
        num = flow_besov_terms(restrict(phi), Y, d.V1, d.V, params, EXPERIMENT_FLOWS).value
        den = sobolev_terms(phi, manifest.fields, d.U, params.p, manifest.sobolev_grid).value
        report.rows.append({"function": f.meta["index"], "label": f.label, "scale": _scale_of(f),
                            "besov_restriction": num, "sobolev": den, "ratio": num / den})
        _progress(verbose, f"restriction {f.meta['index']}: {num:.6g} / {den:.6g}")
    report.summary, report.passed = _ratio_summary(report.column("ratio"), bound)
    report.summary["step2_rank"] = step2.rank
    report.wall_time = time.perf_counter() - start
    return report


def roundtrip_error(psi: ScalarField, cfg: ExtensionConfig, points: np.ndarray) -> float:
    F = full_extension(psi, cfg)
    return float(np.max(np.abs(restrict(F)(points) - psi(points))))


def verify_extension(manifest: Manifest, verbose: bool = False) -> ExperimentReport:
    """Ratio ||rho S(E psi)||_{W_{1,p}} / ||psi||_{W_{1-1/p,p}} plus the roundtrip check."""
    start = time.perf_counter()
    basis = slice_basis(manifest)
    cfg = extension_config(manifest, basis)
    params = manifest.norms
    d = manifest.domain
    require_admissible(basis.first_layer, manifest, params.delta)
    bound = float(manifest.experiment.get("ratio_bound", 10.0))
    tol = float(manifest.experiment.get("roundtrip_tol", 1e-10))
    grid = int(manifest.extension.get("sobolev_grid", 12))
    panel = int(manifest.extension.get("panel_nodes", 3))
    rng = np.random.default_rng(manifest.seed)
    probe = np.concatenate([d.V2.vertices(9), rng.uniform(d.V2.lo, d.V2.hi, size=(256, d.n))])
    cols = ["function", "label", "scale", "sobolev_extension", "besov", "ratio", "roundtrip_error"]
    report = ExperimentReport("extension", _base_params(manifest) | cfg.describe(), cols)
    worst = 0.0
    for f in corpus(manifest):
        num = extension_sobolev_terms(f, cfg, None, params.p, grid, panel).value
        den = flow_besov_terms(f, basis.first_layer, d.V1, d.V, params, EXPERIMENT_FLOWS).value
        err = roundtrip_error(f, cfg, probe)
        worst = max(worst, err)
        report.rows.append({"function": f.meta["index"], "label": f.label, "scale": _scale_of(f),
                            "sobolev_extension": num, "besov": den, "ratio": num / den,
                            "roundtrip_error": err})
        _progress(verbose, f"extension {f.meta['index']}: {num:.6g} / {den:.6g}, roundtrip {err:.2g}")
    report.summary, stable = _ratio_summary(report.column("ratio"), bound)
    report.summary["roundtrip_error"] = worst
    report.summary["roundtrip_tol"] = tol
    report.passed = stable and worst <= tol
    report.wall_time = time.perf_counter() - start
    return report


def changed_basis(fields, matrix) -> list[VectorField]:
    """Y'_i = sum_j M_ij Y_j; entries are expressions in x1..xn."""
    fields = list(fields)
    n = fields[0].dim
    rows = [[ex.parse(str(c), n) if not isinstance(c, ex.Expression) else c for c in row] for row in matrix]
    if len(rows) != len(fields) or any(len(r) != len(fields) for r in rows):
        raise ManifestError(f"basis_change must be {len(fields)} x {len(fields)}")
    out = []
    for i, row in enumerate(rows):
        acc = VectorField.zero(n)
        for c, Y in zip(row, fields):
            acc = acc + Y.scale(c)
        out.append(VectorField(acc.coeffs, f"Y'{i + 1}"))
    return out


def _check_frame(fields, box: Box, res: int = 5) -> None:
    for pt in box.vertices(res):
        if not check_step2(fields, pt).satisfied:
            raise StepTwoError(f"changed basis fails the bracket condition at {pt.tolist()}")


def _scale_groups(functions) -> list[int]:
    """Dyadic level of each corpus member (0 for the base bump)."""
    scales = np.array([_scale_of(f) for f in functions])
    top = np.nanmax(scales)
    return [int(round(np.log2(top / s))) for s in scales]


def verify_basis_equivalence(manifest: Manifest, verbose: bool = False) -> ExperimentReport:
    """Ratios of flow-Besov norms under a change of first-layer basis."""
    start = time.perf_counter()
    Y = slice_fields(manifest)
    matrix = manifest.experiment.get("basis_change")
    if matrix is None:
        matrix = tuple(tuple("1" if i == j else "0" for j in range(len(Y))) for i in range(len(Y)))
    Yp = changed_basis(Y, matrix)
    d = manifest.domain
    _check_frame(Yp, d.V)
    params = manifest.norms
    require_admissible(Y + Yp, manifest, params.delta)
    drift_bound = float(manifest.experiment.get("drift_bound", 2.0))
    cols = ["function", "label", "scale", "level", "besov_beta", "besov_beta_prime", "ratio"]
    report = ExperimentReport("basis", _base_params(manifest), cols)
    funcs = corpus(manifest)
    for f, level in zip(funcs, _scale_groups(funcs)):
        a = flow_besov_terms(f, Y, d.V1, d.V, params, EXPERIMENT_FLOWS).value
        b = flow_besov_terms(f, Yp, d.V1, d.V, params, EXPERIMENT_FLOWS).value
        report.rows.append({"function": f.meta["index"], "label": f.label, "scale": _scale_of(f),
                            "level": level, "besov_beta": a, "besov_beta_prime": b, "ratio": b / a})
        _progress(verbose, f"basis {f.meta['index']}: {b:.6g} / {a:.6g}")
    r = report.column("ratio")
    C = float(np.max(np.maximum(r, 1.0 / r)))
    per_level = {}
    for row in report.rows:
        c = max(row["ratio"], 1.0 / row["ratio"])
        per_level[row["level"]] = max(per_level.get(row["level"], 1.0), c)
    levels = np.array(list(per_level.values()))
    drift = float(levels.max() / levels.min())
    report.summary = {"min_ratio": float(r.min()), "max_ratio": float(r.max()), "C": C,
                      "C_per_level": [per_level[k] for k in sorted(per_level)], "drift": drift,
                      "drift_bound": drift_bound}
    report.passed = bool(np.all((r >= 1.0 / C) & (r <= C)) and drift <= drift_bound)
    report.wall_time = time.perf_counter() - start
    return report


def shift_modulus_profile(psi: ScalarField, shift: Callable[[float], float], axis: int, V: Box,
                          params: NormParams) -> np.ndarray:
    """Running max over nodes of sup_{|tau| <= t} ||psi(. + shift(tau) e_axis) - psi||_{L^p(V)}."""
    e = np.zeros(psi.dim)
    e[axis] = 1.0
    fr = params.tau_fractions()
    out = []
    for t in params.nodes():
        taus = t * np.concatenate([fr, -fr])
        out.append(max(shift_norm(psi, shift(tau) * e, V, params.p, params.grid_res) for tau in taus))
    return np.maximum.accumulate(np.array(out))


def singular_gain_experiment(manifest: Manifest, verbose: bool = False) -> ExperimentReport:
    """X = t^m d/dx1: straightening check and the increment bound per test function."""
    start = time.perf_counter()
    m = int(manifest.experiment.get("m", 1))
    if m < 1:
        raise ManifestError("m must be >= 1")
    n = manifest.n
    d = manifest.domain
    params = manifest.norms
    coeffs = [f"t^{m}"] + ["0"] * n
    X = VectorField(tuple(ex.parse(c, n + 1) for c in coeffs), "X")
    st = straighten(X)
    tol = float(manifest.experiment.get("straighten_tol", 1e-9))
    rng = np.random.default_rng(manifest.seed)
    xs = rng.uniform(d.V2.lo, d.V2.hi, size=(64, n))
    ts = rng.uniform(-params.delta, params.delta, size=64)
    expected = xs.copy()
    expected[:, 0] += ts ** (m + 1) / (m + 1)
    st_err = float(np.max(np.abs(st.forward(xs, ts) - expected)))
    rho = time_cutoff(manifest)
    U = d.U
    dt = VectorField.coordinate(n, n + 1)
    shift = lambda tau: tau ** (m + 1) / (m + 1)  # noqa: E731
    bound = float(manifest.experiment.get("ratio_bound", 10.0))
    cols = ["function", "label", "scale", "increment_norm", "sobolev_dt_X", "ratio"]
    params_echo = _base_params(manifest) | {"m": m, "straighten_error": st_err, "straighten_tol": tol}
    report = ExperimentReport("singular", params_echo, cols)
    for f in corpus(manifest):
        phi = time_product(f, rho)
        omega = shift_modulus_profile(f, shift, 0, d.V, params)
        lhs = besov_term(omega, params.nodes(), params.theta, params.p)
        terms = sobolev_terms(phi, [dt, X], U, params.p, manifest.sobolev_grid).terms
        rhs = float(sum(terms))
        report.rows.append({"function": f.meta["index"], "label": f.label, "scale": _scale_of(f),
                            "increment_norm": lhs, "sobolev_dt_X": rhs, "ratio": lhs / rhs})
        _progress(verbose, f"singular {f.meta['index']}: {lhs:.6g} / {rhs:.6g}")
    report.summary, stable = _ratio_summary(report.column("ratio"), bound)
    report.summary["straighten_error"] = st_err
    report.passed = stable and st_err <= tol
    report.wall_time = time.perf_counter() - start
    return report


def verify_residuals(manifest: Manifest, verbose: bool = False) -> ExperimentReport:
    """Log-log slope of |F(s) y - e^{s[Z1, Z2]} y| for the configured pair."""
    start = time.perf_counter()
    Y = slice_fields(manifest)
    names = manifest.experiment.get("residual_pair")
    if names:
        xs, _ = bundle(manifest)
        lookup = {X.name: Yi for X, Yi in zip(xs, Y)}
        if any(nm not in lookup for nm in names) or len(names) != 2:
            raise ManifestError("residual_pair must name two non-d/dt fields")
        Z1, Z2 = lookup[names[0]], lookup[names[1]]
    else:
        if len(Y) < 2:
            raise ManifestError("need two first-layer fields")
        Z1, Z2 = Y[0], Y[1]
    s_grid = np.asarray(manifest.experiment.get("s_grid", 2.0 ** -np.arange(2, 11)), dtype=float)
    y = manifest.domain.V2.center
    fit = residual_exponent(Z1, Z2, y, s_grid, box=manifest.domain.V)
    cols = ["s", "residual", "included"]
    report = ExperimentReport("residuals", _base_params(manifest) | {"noise_floor": fit.noise_floor}, cols)
    for s, r, inc in zip(fit.s, fit.residuals, fit.included):
        report.rows.append({"s": s, "residual": r, "included": bool(inc)})
    report.summary = {"slope": fit.slope, "degenerate": fit.degenerate, "fit": fit.describe(),
                      "slope_window": (1.4, 2.1)}
    report.passed = bool(fit.degenerate or 1.4 <= fit.slope <= 2.1)
    report.wall_time = time.perf_counter() - start
    _progress(verbose, f"residuals: {fit.describe()}")
    return report


EXPERIMENTS = {
    "restriction": verify_restriction,
    "extension": verify_extension,
    "basis": verify_basis_equivalence,
    "singular": singular_gain_experiment,
    "residuals": verify_residuals,
}
