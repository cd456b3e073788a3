"""Flows of vector fields, their compositions, and asymptotic residual fits."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad_vec

from . import kernels
from ._program import STATUS_ESCAPED, STATUS_MAXSTEPS, STATUS_UNDERFLOW, compile_nodes
from .expr import Expression
from .fieldspec import Basis, VectorField, lie_bracket, restrict_to_slice


class FlowError(RuntimeError):
    pass


class FlowEscapeError(FlowError):
    """An integral curve left the working box."""


class StepSizeUnderflowError(FlowError):
    pass


class InsufficientPointsError(ValueError):
    """Too few residuals above the noise floor for a log-log fit."""


@dataclass(frozen=True)
class FlowSolverConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-10
    max_step: float = np.inf
    method: str = "dopri5"      # or "auto": exact segments for straight-line fields
    max_steps: int = 100_000

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_step <= 0:
            raise ValueError("max_step must be positive")
        if self.method not in ("dopri5", "auto"):
            raise ValueError(f"unknown integrator {self.method!r}")


DEFAULT_CFG = FlowSolverConfig()


def box_bounds(box, dim: int):
    """(lo, hi) arrays for a Box-like object, a (lo, hi) pair, or None."""
    if box is None:
        return np.zeros(0), np.zeros(0)
    if hasattr(box, "lo"):
        lo, hi = box.lo, box.hi
    else:
        lo, hi = box
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (dim,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (dim,)).copy()
    return lo, hi


@lru_cache(maxsize=256)
def _augmented_program(Z: VectorField):
    nodes = [c.node for c in Z.coeffs] + [Z.divergence().node]
    return compile_nodes(nodes, Z.dim + 1)


@lru_cache(maxsize=256)
def straight_line(Z: VectorField) -> bool:
    """True when Z(Z^j) = 0 for every j, so e^{tau Z} x = x + tau Z(x) exactly."""
    return all(Z.apply(c).is_zero() for c in Z.coeffs)


@lru_cache(maxsize=256)
def _constant_divergence_along(Z: VectorField) -> bool:
    return Z.apply(Z.divergence()).is_zero()


def _segment_flow(Z: VectorField, X, taus, lo, hi, jacobian: bool) -> "FlowResult":
    Y = X + taus[:, None] * Z(X)
    status = np.zeros(len(X), dtype=np.int32)
    nb = lo.size
    if nb:
        # a segment leaves a convex box iff one of its ends is outside
        out = np.any((Y[:, :nb] < lo) | (Y[:, :nb] > hi), axis=1)
        status[out] = STATUS_ESCAPED
    logj = taus * Z.divergence()(X) if jacobian else None
    return FlowResult(Y, status, logj)


@dataclass
class FlowResult:
    points: np.ndarray           # (N, d)
    status: np.ndarray           # (N,) kernel status codes
    log_jacobian: np.ndarray | None = None

    @property
    def ok(self) -> np.ndarray:
        return self.status == 0

    @property
    def escaped(self) -> np.ndarray:
        return self.status == STATUS_ESCAPED


def flow_batch(Z: VectorField, X, taus, cfg: FlowSolverConfig = DEFAULT_CFG, box=None,
               jacobian: bool = False, on_exit: str = "raise") -> FlowResult:
    """Flow every row of ``X`` along ``Z`` for its own time ``taus[i]``.

    With ``jacobian=True`` the log-determinant of the flow's derivative is
    carried along (Liouville: d/dtau log J = div Z). With ``on_exit="flag"``
    escaped points are reported through ``status`` instead of raising.
    With ``cfg.method == "auto"``, fields passing :func:`straight_line` are
    moved along exact segments instead of being integrated.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N, d = X.shape
    if d != Z.dim:
        raise ValueError(f"points have dimension {d}, field has {Z.dim}")
    taus = np.broadcast_to(np.asarray(taus, dtype=float), (N,))
    lo, hi = box_bounds(box, d)
    if cfg.method == "auto" and straight_line(Z) and (not jacobian or _constant_divergence_along(Z)):
        result = _segment_flow(Z, X, taus, lo, hi, jacobian)
    elif jacobian:
        state = np.column_stack([X, np.zeros(N)])
        Y, status = kernels.integrate(_augmented_program(Z), state, taus, cfg.rel_tol, cfg.abs_tol,
                                      cfg.max_step, lo, hi, cfg.max_steps)
        result = FlowResult(Y[:, :d], status, Y[:, d])
    else:
        Y, status = kernels.integrate(Z.program, X, taus, cfg.rel_tol, cfg.abs_tol,
                                      cfg.max_step, lo, hi, cfg.max_steps)
        result = FlowResult(Y, status)
    _raise_for_status(result.status, on_exit)
    return result


def _raise_for_status(status: np.ndarray, on_exit: str):
    if np.any(status == STATUS_UNDERFLOW):
        raise StepSizeUnderflowError("step size underflow")
    if np.any(status == STATUS_MAXSTEPS):
        raise FlowError("maximum number of steps exceeded")
    if on_exit == "raise" and np.any(status == STATUS_ESCAPED):
        raise FlowEscapeError(f"{int(np.sum(status == STATUS_ESCAPED))} curve(s) left the working box")


def flow(Z: VectorField, x, tau, cfg: FlowSolverConfig = DEFAULT_CFG, box=None) -> np.ndarray:
    """e^{tau Z} x for one point (d,) or a batch (N, d)."""
    x = np.asarray(x, dtype=float)
    out = flow_batch(Z, x, tau, cfg, box).points
    return out[0] if x.ndim == 1 else out


def flow_compose(basis: Basis | Sequence[VectorField], taus, x, cfg: FlowSolverConfig = DEFAULT_CFG,
                 box=None) -> np.ndarray:
    """e^{tau_1 Z_1} o ... o e^{tau_n Z_n} x; the last factor acts first.

    ``taus`` is (n,) or (N, n); ``x`` is (d,) or (N, d).
    """
    fields = list(basis)
    x = np.asarray(x, dtype=float)
    taus = np.asarray(taus, dtype=float)
    single = x.ndim == 1 and taus.ndim == 1
    T = np.atleast_2d(taus)
    Y = np.atleast_2d(x)
    if T.shape[1] != len(fields):
        raise ValueError(f"expected {len(fields)} times, got {T.shape[1]}")
    N = max(T.shape[0], Y.shape[0])
    T = np.broadcast_to(T, (N, T.shape[1]))
    Y = np.broadcast_to(Y, (N, Y.shape[1])).copy()
    for j in range(len(fields) - 1, -1, -1):
        Y = flow_batch(fields[j], Y, T[:, j], cfg, box).points
    return Y[0] if single else Y


def commutator_flow(Z1: VectorField, Z2: VectorField, s, y, cfg: FlowSolverConfig = DEFAULT_CFG,
                    box=None) -> np.ndarray:
    """Four-fold flow approximating e^{s [Z1, Z2]} y.

    s >= 0: e^{-r Z2} e^{-r Z1} e^{r Z2} e^{r Z1} y, r = sqrt(s)
    s <  0: e^{-r Z1} e^{-r Z2} e^{r Z1} e^{r Z2} y, r = sqrt(|s|)
    """
    y = np.asarray(y, dtype=float)
    s = np.asarray(s, dtype=float)
    Y = np.atleast_2d(y)
    N = max(Y.shape[0], s.size)
    Y = np.broadcast_to(Y, (N, Y.shape[1])).copy()
    S = np.broadcast_to(s.reshape(-1), (N,))
    r = np.sqrt(np.abs(S))
    pos = S >= 0
    pairs = ((Z1, Z2), (Z2, Z1))  # acting order for s >= 0 and s < 0
    for sign, pick in ((1.0, 0), (1.0, 1), (-1.0, 0), (-1.0, 1)):
        for mask, order in ((pos, pairs[0]), (~pos, pairs[1])):
            if np.any(mask):
                Y[mask] = flow_batch(order[pick], Y[mask], sign * r[mask], cfg, box).points
    return Y[0] if (y.ndim == 1 and s.ndim == 0) else Y


@dataclass
class ResidualFit:
    """Log-log slope of residual(s) against s over points above a noise floor."""

    s: np.ndarray
    residuals: np.ndarray
    included: np.ndarray
    noise_floor: float
    slope: float = float("nan")
    intercept: float = float("nan")
    degenerate: bool = False

    @property
    def excluded(self) -> np.ndarray:
        return self.s[~self.included]

    def describe(self) -> str:
        if self.degenerate:
            return "degenerate/exact (all residuals below noise floor)"
        return f"slope {self.slope:.4f} over {int(self.included.sum())} points"


def fit_residuals(s, residuals, noise_floor: float) -> ResidualFit:
    s = np.asarray(s, dtype=float)
    r = np.asarray(residuals, dtype=float)
    included = r >= noise_floor
    fit = ResidualFit(s, r, included, noise_floor)
    n = int(included.sum())
    if n == 0 and len(s) >= 3:
        fit.degenerate = True
        return fit
    if n < 3:
        raise InsufficientPointsError(f"{n} residual(s) above noise floor {noise_floor:g}; need 3")
    slope, intercept = np.polyfit(np.log(s[included]), np.log(r[included]), 1)
    fit.slope = float(slope)
    fit.intercept = float(intercept)
    return fit


def residual_exponent(Z1: VectorField, Z2: VectorField, y, s_grid, cfg: FlowSolverConfig = DEFAULT_CFG,
                      box=None) -> ResidualFit:
    """Fit |F(s) y - e^{s [Z1, Z2]} y| ~ C s^slope."""
    s_grid = np.asarray(s_grid, dtype=float)
    if np.any(s_grid <= 0):
        raise ValueError("s_grid must be positive")
    y = np.asarray(y, dtype=float)
    Y = np.broadcast_to(y, (len(s_grid), y.size))
    approx = commutator_flow(Z1, Z2, s_grid, Y, cfg, box)
    exact = flow_batch(lie_bracket(Z1, Z2), Y, s_grid, cfg, box).points
    res = np.linalg.norm(approx - exact, axis=1)
    return fit_residuals(s_grid, res, 100 * cfg.abs_tol)


# --------------------------------------------------------------- straightening

@dataclass(frozen=True, eq=False)
class Straightening:
    """p(x, t) solving (d/dt - X) p = 0, p(x, 0) = x, and its inverse h(y, s).

    Both are read off the flow of the lifted field (-a(x, t), 1) on R^{n+1}.
    """

    source: VectorField
    characteristic: VectorField
    cfg: FlowSolverConfig = DEFAULT_CFG
    box: object = None

    @property
    def n(self) -> int:
        return self.source.dim - 1

    def _run(self, Y, S, tau, jacobian=False):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        N = Y.shape[0]
        S = np.broadcast_to(np.asarray(S, dtype=float), (N,))
        tau = np.broadcast_to(np.asarray(tau, dtype=float), (N,))
        start = np.column_stack([Y, S])
        return flow_batch(self.characteristic, start, tau, self.cfg, self.box, jacobian=jacobian)

    def forward(self, x, t) -> np.ndarray:
        """p(x, t); characteristic through (x, t) followed back to t = 0."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        out = self._run(x, t, -t).points[:, : self.n]
        return out[0] if (x.ndim == 1 and t.ndim == 0) else out

    def inverse(self, y, s) -> np.ndarray:
        """h(y, s) with h(p(x, t), t) = x."""
        y = np.asarray(y, dtype=float)
        s = np.asarray(s, dtype=float)
        out = self._run(y, 0.0, s).points[:, : self.n]
        return out[0] if (y.ndim == 1 and s.ndim == 0) else out

    def inverse_with_jacobian(self, y, s):
        """(h(y, s), log |det d h / d y|)."""
        res = self._run(y, 0.0, s, jacobian=True)
        return res.points[:, : self.n], res.log_jacobian


def straighten(X: VectorField, box=None, cfg: FlowSolverConfig = DEFAULT_CFG) -> Straightening:
    """Straighten L = d/dt - X for a field X on R^{n+1} with no d/dt part."""
    if not X.coeffs[-1].is_zero():
        raise ValueError("X must have a zero d/dt coefficient")
    d = X.dim
    coeffs = tuple(-c for c in X.coeffs[:-1]) + (Expression.constant(1.0, d),)
    return Straightening(X, VectorField(coeffs, "L"), cfg, box)


def reconstruct(phi0: Callable, f: Callable, st: Straightening, x, t,
                cfg: FlowSolverConfig | None = None, tol: float = 1e-9) -> np.ndarray:
    """phi(x, t) = phi0(p(x, t)) + int_0^t f(h(p(x, t), tau), tau) dtau.

    ``phi0`` takes (N, n) points, ``f`` takes (N, n+1) points.
    """
    if cfg is not None and cfg != st.cfg:
        st = Straightening(st.source, st.characteristic, cfg, st.box)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    N = X.shape[0]
    T = np.broadcast_to(np.asarray(t, dtype=float), (N,)).copy()
    Y = np.atleast_2d(st.forward(X, T))
    base = np.asarray(phi0(Y), dtype=float)

    def integrand(u):
        tau = u * T
        H = np.atleast_2d(st.inverse(Y, tau))
        return T * np.asarray(f(np.column_stack([H, tau])), dtype=float)

    if np.all(T == 0):
        out = base
    else:
        integral, err = quad_vec(integrand, 0.0, 1.0, epsabs=tol * 0.1, epsrel=tol * 0.1, norm="max")
        if not np.all(np.isfinite(integral)) or err > tol:
            raise FlowError(f"quadrature did not converge (error estimate {err:g})")
        out = base + integral
    return out[0] if single and np.ndim(t) == 0 else out


def defect_residual(Y: VectorField, X: VectorField, x, t_grid, cfg: FlowSolverConfig = DEFAULT_CFG,
                    box=None) -> ResidualFit:
    """Fit |e^{-tY} p(x, t) - x| against t, p from straightening X."""
    sliced = restrict_to_slice(X)
    probe = np.random.default_rng(0).uniform(-0.5, 0.5, size=(16, Y.dim))
    if np.max(np.abs(sliced(probe) - Y(probe))) > 1e-10:
        raise ValueError("X restricted to t = 0 does not match Y")
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size < 3:
        raise InsufficientPointsError("need at least 3 values of t")
    st = straighten(X, None, cfg)
    x = np.asarray(x, dtype=float)
    Xs = np.broadcast_to(x, (t_grid.size, x.size))
    P = st.forward(Xs, t_grid)
    back = flow_batch(Y, P, -t_grid, cfg, box).points
    res = np.linalg.norm(back - Xs, axis=1)
    return fit_residuals(t_grid, res, 100 * cfg.abs_tol)


# ---------------------------------------------------------- frame diagnostics

@dataclass
class FrameReport:
    jacobian: np.ndarray
    fields_at_x: np.ndarray
    column_errors: np.ndarray
    rank: int
    n: int
    k: int
    tol: float = 1e-6
    notes: list = dc_field(default_factory=list)

    @property
    def rank_deficient(self) -> bool:
        return self.rank < self.n

    @property
    def passed(self) -> bool:
        return not self.rank_deficient and bool(np.all(self.column_errors[: self.k] <= self.tol))


def eta_frame_check(basis: Basis, x, tau_scale: float = 1e-4, cfg: FlowSolverConfig = DEFAULT_CFG,
                    box=None, tol: float = 1e-6) -> FrameReport:
    """Central-difference Jacobian of tau -> eta(tau, x) at tau = 0."""
    x = np.asarray(x, dtype=float)
    n = len(basis)
    E = np.eye(n) * tau_scale
    plus = flow_compose(basis, E, np.broadcast_to(x, (n, x.size)), cfg, box)
    minus = flow_compose(basis, -E, np.broadcast_to(x, (n, x.size)), cfg, box)
    J = ((plus - minus) / (2 * tau_scale)).T
    F = basis.matrix(x)
    errors = np.max(np.abs(J - F), axis=0)
    rank = basis.rank(x)
    report = FrameReport(J, F, errors, rank, n, basis.k, tol)
    if report.rank_deficient:
        report.notes.append(f"basis rank {rank} < {n} at x")
    return report
