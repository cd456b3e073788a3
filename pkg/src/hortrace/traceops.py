"""Trace restriction, Hardy averages along flows, and the extension operator.

The extension of psi on R^n to R^{n+1} is rho(t) * S(E psi)(x, t), where

* E psi(x, 0) = psi(x) and E psi(x, t) = H psi(x, t) for 0 < t < delta,
* H psi(x, t) averages psi(eta(tau, x)) over the tau box with sides t for
  first-layer fields and t^2 for bracket fields,
  eta(tau, x) = e^{tau_1 Z_1} o ... o e^{tau_n Z_n} x (Z_n acts first),
* S reflects to t < 0 by S phi(x, t) = sum_i a_i phi(x, -b_i t),
* rho(t) = b(t / r) with b the standard bump, b(0) = 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .domains import Box, ScalarField, SupportError
from .fieldspec import Basis, d_dt, lift
from .norms import SobolevNorm, TimeSlicing, dyadic_panels, sliced_sobolev_terms
from .flows import FlowSolverConfig, flow_batch

AUTO_FLOWS = FlowSolverConfig(method="auto")


@dataclass(frozen=True, eq=False)
class ExtensionConfig:
    """Parameters of the extension operator.

    Parameters
    ----------
    basis : Basis
        Completed basis Z_1..Z_n of R^n; the first ``basis.k`` are first layer.
    delta : float
        E psi is defined for 0 <= t < delta.
    V : Box, optional
        Working box; flows leaving it raise.
    V1, V2 : Box, optional
        When given, supp psi must lie in V2 and the x-support of H psi in V1.
    quad_order : int
        Gauss-Legendre nodes per tau axis (per panel).
    panels : int
        Equal sub-intervals of each tau window, each with its own
        ``quad_order``-point rule.
    seeley_coeffs : sequence of (a, b)
        Reflection terms; need sum a = 1 and sum a (-b) = 1.
    cutoff_radius : float, optional
        Radius r of rho. Defaults to delta / max(b), the largest radius on
        which S(E psi) is defined.
    flow_cfg : FlowSolverConfig
        Integrator settings; the default takes exact segments for
        straight-line fields.
    max_states : int
        Upper bound on simultaneous quadrature states (memory control).
    """

    basis: Basis
    delta: float
    V: Box | None = None
    V1: Box | None = None
    V2: Box | None = None
    quad_order: int = 12
    panels: int = 1
    seeley_coeffs: tuple = ((3.0, 1.0), (-2.0, 2.0))
    cutoff_radius: float | None = None
    flow_cfg: FlowSolverConfig = AUTO_FLOWS
    max_states: int = 1 << 20

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.quad_order < 1 or self.panels < 1:
            raise ValueError("quad_order and panels must be >= 1")
        coeffs = tuple((float(a), float(b)) for a, b in self.seeley_coeffs)
        if not coeffs or any(b <= 0 for _, b in coeffs):
            raise ValueError("Seeley b_i must be positive")
        a = np.array([c[0] for c in coeffs])
        b = np.array([c[1] for c in coeffs])
        if abs(a.sum() - 1.0) > 1e-12 or abs(np.dot(a, -b) - 1.0) > 1e-12:
            raise ValueError("Seeley coefficients need sum a = 1 and sum a(-b) = 1")
        object.__setattr__(self, "seeley_coeffs", coeffs)
        r = self.delta / b.max() if self.cutoff_radius is None else float(self.cutoff_radius)
        if not 0 < r <= self.delta / b.max() * (1 + 1e-12):
            raise ValueError(f"cutoff radius must lie in (0, delta/max b] = (0, {self.delta / b.max():g}]")
        object.__setattr__(self, "cutoff_radius", r)

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def b_max(self) -> float:
        return max(b for _, b in self.seeley_coeffs)

    def gauss(self) -> tuple[np.ndarray, np.ndarray]:
        """Composite nodes and weights on [0, 1]; the weights sum to 1."""
        g, w = np.polynomial.legendre.leggauss(self.quad_order)
        g, w = 0.5 * (g + 1.0), 0.5 * w
        k = self.panels
        nodes = (np.arange(k)[:, None] + g[None, :]).ravel() / k
        return nodes, np.tile(w, k) / k

    def windows(self, t) -> np.ndarray:
        """(N, n) window lengths: t for first-layer fields, t^2 for brackets."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        layer2 = np.arange(self.n) >= self.basis.k
        return np.where(layer2, t[:, None] ** 2, t[:, None])

    def cutoff(self, t) -> np.ndarray:
        """rho(t) = exp(1 - 1/(1 - (t/r)^2)) for |t| < r, else 0."""
        u = np.asarray(t, dtype=float) / self.cutoff_radius
        out = np.zeros_like(u)
        inside = np.abs(u) < 1.0
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
        return out

    def describe(self) -> dict:
        return {"ext_delta": self.delta, "quad_order": self.quad_order, "panels": self.panels,
                "seeley": ";".join(f"{a:g}:{b:g}" for a, b in self.seeley_coeffs),
                "cutoff_radius": self.cutoff_radius, "flow_method": self.flow_cfg.method,
                "flow_rtol": self.flow_cfg.rel_tol, "flow_atol": self.flow_cfg.abs_tol}


def restrict(phi: ScalarField) -> ScalarField:
    """R phi(x) = phi(x, 0)."""
    n = phi.dim - 1
    if n < 1:
        raise ValueError("phi must live on R^{n+1}, n >= 1")

    def value(X):
        return phi(np.column_stack([X, np.zeros(len(X))]))

    support = None
    if phi.support is not None:
        s = phi.support
        if s.lo[-1] <= 0.0 <= s.hi[-1]:
            support = Box(s.lo[:n], s.hi[:n])
        else:
            return ScalarField.constant(0.0, n, None)
    return ScalarField(n, value, support, kind="composed", sup_norm=phi.sup_norm,
                       label=f"R[{phi.label}]")


def _points(x, t, n: int):
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if X.shape[1] != n:
        raise ValueError(f"expected points in R^{n}")
    T = np.asarray(t, dtype=float)
    N = max(X.shape[0], T.size)
    X = np.broadcast_to(X, (N, n))
    T = np.broadcast_to(T.reshape(-1) if T.ndim else T, (N,))
    single = np.asarray(x).ndim == 1 and np.ndim(t) == 0
    return X, T, single


def hardy_average(psi: ScalarField, i: int, cfg: ExtensionConfig, x, t):
    """H_i psi(x, t): mean of psi(e^{tau Z_i} x) over tau in [0, t] (or [0, t^2]).

    ``i`` is 0-based; fields with index >= k use the squared window.
    """
    X, T, single = _points(x, t, cfg.n)
    if np.any(T <= 0) or np.any(T > cfg.delta):
        raise ValueError(f"t must lie in (0, {cfg.delta:g}]")
    g, w = cfg.gauss()
    q = g.size
    win = cfg.windows(T)[:, i]
    states = np.repeat(X, q, axis=0)
    taus = (win[:, None] * g[None, :]).ravel()
    moved = flow_batch(cfg.basis[i], states, taus, cfg.flow_cfg, cfg.V).points
    out = (psi(moved).reshape(len(X), q) * w).sum(axis=1)
    return float(out[0]) if single else out


def _sup_speeds(cfg: ExtensionConfig, margin: float = 1.25, grid_res: int = 9) -> np.ndarray:
    """(n, n) per-field, per-axis bounds on |Z_j| over V (sampled, with margin)."""
    box = cfg.V if cfg.V is not None else Box.cube(-1.0, 1.0, cfg.n)
    pts = box.vertices(grid_res)
    return margin * np.array([np.max(np.abs(Z(pts)), axis=0) for Z in cfg.basis])


def _nested_average(psi: ScalarField, cfg: ExtensionConfig, X: np.ndarray, T: np.ndarray,
                    order: Sequence[int]) -> np.ndarray:
    """Tensor Gauss average of psi(eta(tau, x)), stage by stage.

    The rule does not depend on psi, so the average is linear in psi. When
    psi has a support box B, a state is dropped as soon as the flows still
    to be applied cannot carry it into B; its contribution is exactly zero,
    so pruning changes the cost but not the result.
    """
    g, w = cfg.gauss()
    q = g.size
    win = cfg.windows(T)
    prune = psi.support is not None
    if prune:
        speeds = _sup_speeds(cfg)
        B = psi.support
    per_point = q ** len(order)
    chunk = max(1, cfg.max_states // per_point)
    out = np.zeros(len(X))
    for start in range(0, len(X), chunk):
        stop = min(start + chunk, len(X))
        states = X[start:stop]
        owner = np.arange(start, stop)
        weight = np.ones(stop - start)
        # the rightmost factor of eta acts first
        for m in range(len(order) - 1, -1, -1):
            if prune:
                rem = win[owner][:, order[: m + 1]] @ speeds[order[: m + 1]]
                keep = np.all((states + rem >= B.lo) & (states - rem <= B.hi), axis=1)
                states, owner, weight = states[keep], owner[keep], weight[keep]
            j = order[m]
            taus = (win[owner, j][:, None] * g[None, :]).ravel()
            states = flow_batch(cfg.basis[j], np.repeat(states, q, axis=0), taus, cfg.flow_cfg, cfg.V).points
            weight = (weight[:, None] * w[None, :]).ravel()
            owner = np.repeat(owner, q)
        if len(states):
            out += np.bincount(owner, psi(states) * weight, minlength=len(X))
    return out


def extend_H(psi: ScalarField, cfg: ExtensionConfig, x, t, order: Sequence[int] | None = None):
    """H psi(x, t), the average of psi(eta(tau, x)) over the tau box.

    Tensor Gauss-Legendre with ``cfg.quad_order`` nodes per axis; the flows
    are evaluated stage by stage so each partial composition is shared by
    all nodes of the remaining axes. ``order`` lists the factors of eta from
    left to right (default 0..n-1).
    """
    X, T, single = _points(x, t, cfg.n)
    if np.any(T <= 0) or np.any(T > cfg.delta):
        raise ValueError(f"t must lie in (0, {cfg.delta:g}]")
    order = list(range(cfg.n)) if order is None else list(order)
    if sorted(order) != list(range(cfg.n)):
        raise ValueError("order must be a permutation of the basis indices")
    out = _nested_average(psi, cfg, X, T, order)
    return float(out[0]) if single else out


def support_reach(cfg: ExtensionConfig, grid_res: int = 9) -> np.ndarray:
    """Per-axis bound on |eta(tau, x) - x| over tau windows at t = delta.

    Uses sup |Z_i| sampled on V (on [-1, 1]^n when V is None) with a 5%
    margin; each flow moves a point at most window * sup |Z_i| per axis.
    """
    return cfg.windows([cfg.delta])[0] @ _sup_speeds(cfg, 1.05, grid_res)


def _check_extension_support(psi: ScalarField, cfg: ExtensionConfig) -> Box | None:
    if cfg.V2 is not None:
        if psi.support is None or not cfg.V2.contains_box(psi.support):
            raise SupportError(f"support {psi.support!r} of {psi.label} is not inside V2 {cfg.V2!r}")
    if psi.support is None:
        return None
    reach_box = psi.support.expand(support_reach(cfg))
    if cfg.V1 is not None and not cfg.V1.contains_box(reach_box):
        raise SupportError(f"x-support of H psi may reach {reach_box!r}, outside V1 {cfg.V1!r}; "
                           f"reduce delta or shrink supp psi")
    return reach_box


def _slab(n: int, t_lo: float, t_hi: float) -> Box:
    """R^n x [t_lo, t_hi), the half-open end realised as the float just below t_hi."""
    return Box(np.append(np.full(n, -np.inf), t_lo), np.append(np.full(n, np.inf), np.nextafter(t_hi, -np.inf)))


def extend_E(psi: ScalarField, cfg: ExtensionConfig) -> ScalarField:
    """E psi on R^n x [0, delta): psi at t = 0, H psi for t > 0."""
    n = cfg.n
    if psi.dim != n:
        raise ValueError(f"psi lives on R^{psi.dim}, basis on R^{n}")
    reach_box = _check_extension_support(psi, cfg)

    def value(P):
        x, t = P[:, :n], P[:, n]
        if np.any(t < 0) or np.any(t >= cfg.delta):
            raise ValueError(f"E psi is defined for 0 <= t < {cfg.delta:g}")
        out = np.empty(len(P))
        zero = t == 0.0
        if np.any(zero):
            out[zero] = psi(x[zero])
        if np.any(~zero):
            out[~zero] = _nested_average(psi, cfg, x[~zero], t[~zero], list(range(n)))
        return out

    support = None
    if reach_box is not None:
        support = reach_box.times(Box([0.0], [cfg.delta]))
    return ScalarField(n + 1, value, support, kind="composed", sup_norm=psi.sup_norm,
                       label=f"E[{psi.label}]", meta={"psi": psi},
                       domain=_slab(n, 0.0, cfg.delta))


def seeley_extend(phi: ScalarField, cfg: ExtensionConfig) -> ScalarField:
    """S phi = phi for t >= 0 and sum_i a_i phi(x, -b_i t) for t < 0.

    Defined on R^n x (-delta/max b, delta).
    """
    n = phi.dim - 1
    t_lo = -cfg.delta / cfg.b_max

    def value(P):
        t = P[:, n]
        if np.any(t < t_lo) or np.any(t >= cfg.delta):
            raise ValueError(f"S phi is defined for {t_lo:g} <= t < {cfg.delta:g}")
        out = np.empty(len(P))
        pos = t >= 0
        if np.any(pos):
            out[pos] = phi(P[pos])
        neg = ~pos
        if np.any(neg):
            Q = P[neg].copy()
            acc = np.zeros(len(Q))
            for a, b in cfg.seeley_coeffs:
                Q[:, n] = -b * t[neg]
                acc += a * phi(Q)
            out[neg] = acc
        return out

    support = None
    if phi.support is not None:
        s = phi.support
        support = Box(np.append(s.lo[:n], t_lo), np.append(s.hi[:n], cfg.delta))
    sup = None
    if phi.sup_norm is not None:
        sup = phi.sup_norm * sum(abs(a) for a, _ in cfg.seeley_coeffs)
    return ScalarField(n + 1, value, support, kind="composed", sup_norm=sup, label=f"S[{phi.label}]",
                       domain=_slab(n, t_lo, cfg.delta))


def full_extension(psi: ScalarField, cfg: ExtensionConfig) -> ScalarField:
    """(x, t) -> rho(t) S(E psi)(x, t), and 0 for |t| >= cutoff radius."""
    n = cfg.n
    Sphi = seeley_extend(extend_E(psi, cfg), cfg)
    r = cfg.cutoff_radius

    def value(P):
        t = P[:, n]
        out = np.zeros(len(P))
        live = np.abs(t) < r
        if np.any(live):
            out[live] = cfg.cutoff(t[live]) * Sphi(P[live])
        return out

    support = None
    if Sphi.support is not None:
        s = Sphi.support
        support = Box(np.append(s.lo[:n], -r), np.append(s.hi[:n], r))
    return ScalarField(n + 1, value, support, kind="composed", sup_norm=Sphi.sup_norm,
                       label=f"rho S E[{psi.label}]", meta={"psi": psi})


# ------------------------------------------------------------------ CSV grids

def grid_table(phi: ScalarField, box: Box, res) -> np.ndarray:
    """Rows (x_1..x_n, t, value) on the vertex grid of ``box``."""
    pts = box.vertices(res)
    return np.column_stack([pts, phi(pts)])


def write_grid_csv(phi: ScalarField, box: Box, res, out: IO[str]) -> int:
    """Write ``grid_table`` as CSV with header x1..xn,t,value; returns the row count."""
    table = grid_table(phi, box, res)
    n = box.dim - 1
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow([f"x{j + 1}" for j in range(n)] + ["t", "value"])
    for row in table:
        writer.writerow([repr(float(v)) for v in row])
    return len(table)


# ------------------------------------------------------------- Sobolev norms

def extension_slicing(psi: ScalarField, cfg: ExtensionConfig, per_panel: int = 3,
                      finest: float | None = None) -> TimeSlicing:
    """t quadrature and x boxes covering the support of ``full_extension(psi)``.

    Panels halve from the cutoff radius down to ``finest`` (default a quarter
    of the smallest half-width of supp psi); the box at t is supp psi
    expanded by the reach of the tau windows at t (at b_max |t| for t < 0).
    """
    if psi.support is None:
        raise SupportError("slicing needs a support box for psi")
    r = cfg.cutoff_radius
    if finest is None:
        finest = min(r, 0.25 * float(np.min(psi.support.widths)) / 2)
    nodes, weights = dyadic_panels(r, finest, per_panel)
    speeds = _sup_speeds(cfg)
    boxes = []
    for t in nodes:
        depth = t if t >= 0 else cfg.b_max * -t
        reach = cfg.windows([depth])[0] @ speeds if depth > 0 else np.zeros(cfg.n)
        boxes.append(psi.support.expand(reach))
    return TimeSlicing(nodes, weights, tuple(boxes))


def extension_sobolev_terms(psi: ScalarField, cfg: ExtensionConfig, beta: Sequence | None = None,
                            p: float = 2.0, grid_res: int = 12, per_panel: int = 3) -> SobolevNorm:
    """Sobolev norm of rho S(E psi) on R^{n+1}.

    ``beta`` defaults to the first-layer fields (t-independent) and d/dt.
    """
    F = full_extension(psi, cfg)
    if beta is None:
        beta = [lift(Z) for Z in cfg.basis.first_layer] + [d_dt(cfg.n + 1)]
    return sliced_sobolev_terms(F, beta, extension_slicing(psi, cfg, per_panel), p, grid_res)
