"""L^p norms, flow and translation moduli, Besov-type and Sobolev-type norms.

Differences psi o Phi - psi of a compactly supported psi are integrated on
grids around supp(psi) only; the part of the integral where psi(x) = 0 is
moved onto supp(psi) by the change of variables y = Phi(x) (see
:func:`difference_power`). The grids then resolve psi at every scale, however
far Phi moves it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .domains import Box, ScalarField, SupportError
from .fieldspec import Basis, VectorField
from .flows import DEFAULT_CFG, FlowSolverConfig, flow_batch


@dataclass(frozen=True)
class NormParams:
    p: float = 2.0
    delta: float = 0.25
    t_nodes: int = 48
    tau_samples: int = 8
    t_min_exponent: int = 16
    grid_res: int = 33

    def __post_init__(self):
        if not 1.0 < self.p < np.inf:
            raise ValueError("p must lie in (1, inf)")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.t_nodes < 2 or self.tau_samples < 1:
            raise ValueError("need t_nodes >= 2 and tau_samples >= 1")

    @property
    def theta(self) -> float:
        return 1.0 - 1.0 / self.p

    @property
    def sigma(self) -> float:
        return 0.5 * (1.0 - 1.0 / self.p)

    def nodes(self) -> np.ndarray:
        """Log-spaced t nodes on [delta 2^-t_min_exponent, delta]."""
        return self.delta * np.logspace(-self.t_min_exponent * np.log10(2.0), 0.0, self.t_nodes)

    def tau_fractions(self) -> np.ndarray:
        """i/m for i = 1..m; the sign is applied separately."""
        return np.arange(1, self.tau_samples + 1) / self.tau_samples

    def refined(self) -> "NormParams":
        """Twice the t nodes and tau samples."""
        return NormParams(self.p, self.delta, 2 * self.t_nodes, 2 * self.tau_samples,
                          self.t_min_exponent, self.grid_res)

    def describe(self) -> dict:
        return {"p": self.p, "theta": self.theta, "sigma": self.sigma, "norm_delta": self.delta,
                "t_nodes": self.t_nodes, "tau_samples": self.tau_samples,
                "t_min": float(self.nodes()[0]), "norm_grid_res": self.grid_res}


def _region(f: ScalarField, box: Box) -> Box | None:
    if f.support is None:
        return box
    return box.intersect(f.support)


def _power_sum(values: np.ndarray, p: float, w: float) -> float:
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("non-finite sample in L^p sum")
    return float(np.sum(np.abs(values) ** p) * w)


def lp_norm(f: ScalarField, box: Box, p: float, grid_res: int) -> float:
    """Midpoint-rule L^p(box) norm, the grid laid over box n supp f."""
    region = _region(f, box)
    if region is None:
        return 0.0
    pts, w = region.midpoints(grid_res)
    return _power_sum(f(pts), p, w) ** (1.0 / p)


def _smooth_step(u):
    u = np.clip(u, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


def collar_cutoff(B: Box, margin: np.ndarray):
    """C-infinity function equal to 1 on B and 0 outside B expanded by ``margin``."""
    lo = B.lo - margin
    hi = B.hi + margin

    def chi(X):
        up = _smooth_step((X - lo) / margin)
        down = _smooth_step((hi - X) / margin)
        return np.prod(up * down, axis=1)

    return chi


def difference_grids(psi: ScalarField, V: Box, grid_res: int):
    """Grid boxes used by :func:`difference_power`: (outer, inner, cutoff)."""
    B = psi.support
    if B is None or not V.contains_box(B):
        return V, None, None
    margin = 0.25 * B.widths
    outer = B.expand(margin).intersect(V)
    return outer, B, collar_cutoff(B, margin)


def difference_power(psi: ScalarField, forward, backward, V: Box, p: float, grid_res: int) -> float:
    """int_V |psi(Phi x) - psi(x)|^p dx.

    ``forward(X) -> (Phi X, lost)`` runs on the outer grid and
    ``backward(Y) -> (Phi^-1 Y, log|det D Phi^-1|, lost)`` on the support
    grid; ``lost`` flags images that left V.

    With chi = 1 on the support box B the integral splits smoothly into
    int chi |psi o Phi - psi|^p + int_B (1 - chi(Phi^-1 y)) |psi(y)|^p J(y) dy,
    since psi = 0 wherever chi < 1.
    """
    outer, B, chi = difference_grids(psi, V, grid_res)
    pts, w = outer.midpoints(grid_res)
    img, lost = forward(pts)
    moved = psi(img)
    moved[lost] = 0.0
    if B is None:
        return _power_sum(moved - psi(pts), p, w)
    total = float(np.sum(chi(pts) * np.abs(moved - psi(pts)) ** p) * w)
    ypts, wy = B.midpoints(grid_res)
    base = psi(ypts)
    pre, logj, lost_b = backward(ypts)
    weight = np.where(lost_b | ~V.contains(pre), 0.0, 1.0 - chi(pre))
    total += float(np.sum(weight * np.abs(base) ** p * np.exp(logj)) * wy)
    if not np.isfinite(total):
        raise FloatingPointError("non-finite sample in L^p sum")
    return total


class _FlowMover:
    """e^{tau Z} on grid points, with Jacobians only when div Z != 0."""

    def __init__(self, Z: VectorField, V: Box, cfg: FlowSolverConfig):
        self.Z = Z
        self.V = V
        self.cfg = cfg
        self.needs_jac = not Z.divergence().is_zero()

    def run(self, pts, tau):
        res = flow_batch(self.Z, pts, tau, self.cfg, self.V, jacobian=self.needs_jac, on_exit="flag")
        logj = res.log_jacobian if self.needs_jac else np.zeros(len(pts))
        return res.points, logj, res.escaped


def _modulus_samples(psi, Z, V, p, grid_res, taus, cfg) -> np.ndarray:
    """||psi o e^{tau Z} - psi||_{L^p(V)} for each tau in a symmetric set."""
    mover = _FlowMover(Z, V, cfg)
    outer, B, _ = difference_grids(psi, V, grid_res)
    out_pts, _ = outer.midpoints(grid_res)
    in_pts = None if B is None else B.midpoints(grid_res)[0]
    out = np.empty(len(taus))
    for i, tau in enumerate(taus):
        if tau == 0.0:
            out[i] = 0.0
            continue
        fwd = mover.run(out_pts, tau)
        bwd = None if B is None else mover.run(in_pts, -tau)

        def forward(X, fwd=fwd):
            return fwd[0], fwd[2]

        def backward(Y, bwd=bwd):
            return bwd

        out[i] = difference_power(psi, forward, backward, V, p, grid_res) ** (1.0 / p)
    return out


def _check_support(psi: ScalarField, V1: Box | None):
    if V1 is not None and psi.support is not None and not V1.contains_box(psi.support):
        raise SupportError(f"support {psi.support!r} of {psi.label} is not inside V1 {V1!r}")


def flow_modulus(t: float, psi: ScalarField, Z: VectorField, V1: Box | None, V: Box, p: float,
                 params: NormParams | None = None, cfg: FlowSolverConfig = DEFAULT_CFG) -> float:
    """max over tau in {+-t i/m} of ||psi o e^{tau Z} - psi||_{L^p(V)}."""
    params = params or NormParams(p=p)
    _check_support(psi, V1)
    if t == 0.0:
        return 0.0
    fr = params.tau_fractions()
    taus = np.concatenate([t * fr, -t * fr])
    return float(np.max(_modulus_samples(psi, Z, V, p, params.grid_res, taus, cfg)))


def flow_modulus_profile(psi: ScalarField, Z: VectorField, V1: Box | None, V: Box, params: NormParams,
                         cfg: FlowSolverConfig = DEFAULT_CFG, nodes=None) -> np.ndarray:
    """Sampled sup_{|tau| <= t} at each node t, as a running maximum over nodes.

    Every tau sampled at a smaller node also satisfies |tau| <= t, so the
    running maximum is a sample of the same supremum and is monotone in t.
    """
    _check_support(psi, V1)
    nodes = params.nodes() if nodes is None else np.asarray(nodes)
    fr = params.tau_fractions()
    taus = np.concatenate([np.outer(nodes, fr).ravel(), -np.outer(nodes, fr).ravel()])
    vals = _modulus_samples(psi, Z, V, params.p, params.grid_res, taus, cfg)
    half = len(taus) // 2
    per_node = np.maximum(vals[:half], vals[half:]).reshape(len(nodes), len(fr)).max(axis=1)
    return np.maximum.accumulate(per_node)


def _dt_over_t(nodes: np.ndarray, values: np.ndarray) -> float:
    """Trapezoid rule for int values dt/t in the variable log t."""
    return float(np.trapezoid(values, np.log(nodes)))


def besov_term(moduli: np.ndarray, nodes: np.ndarray, exponent: float, p: float) -> float:
    """{int [t^-exponent omega(t)]^p dt/t}^(1/p)."""
    return _dt_over_t(nodes, (nodes ** -exponent * moduli) ** p) ** (1.0 / p)


@dataclass
class BesovNorm:
    value: float
    lp: float
    terms: list
    nodes: np.ndarray
    moduli: list = field(default_factory=list)


def flow_besov_terms(psi: ScalarField, beta_prime, V1: Box | None, V: Box, params: NormParams,
                     cfg: FlowSolverConfig = DEFAULT_CFG) -> BesovNorm:
    fields = list(beta_prime.first_layer if isinstance(beta_prime, Basis) else beta_prime)
    nodes = params.nodes()
    lp = lp_norm(psi, V, params.p, params.grid_res)
    terms, moduli = [], []
    for Z in fields:
        omega = flow_modulus_profile(psi, Z, V1, V, params, cfg, nodes)
        moduli.append(omega)
        terms.append(besov_term(omega, nodes, params.theta, params.p))
    return BesovNorm(lp + sum(terms), lp, terms, nodes, moduli)


def flow_besov_norm(psi: ScalarField, beta_prime, V1: Box | None, V: Box, params: NormParams,
                    cfg: FlowSolverConfig = DEFAULT_CFG) -> float:
    """||psi||_{L^p} + sum_i {int_0^delta [t^-theta omega_i(t)]^p dt/t}^(1/p)."""
    return flow_besov_terms(psi, beta_prime, V1, V, params, cfg).value


# ----------------------------------------------------------- classical moduli

def shift_directions(n: int, count: int | None = None) -> np.ndarray:
    """Unit vectors: +-e_i plus a deterministic spread on the sphere."""
    axes = np.concatenate([np.eye(n), -np.eye(n)])
    if n == 1:
        return axes
    if n == 2:
        ang = np.linspace(0, 2 * np.pi, count or 16, endpoint=False)
        extra = np.column_stack([np.cos(ang), np.sin(ang)])
    else:
        # Fibonacci-type spread; higher dimensions use seeded Gaussian draws
        m = count or 8 * n
        if n == 3:
            i = np.arange(m) + 0.5
            z = 1 - 2 * i / m
            r = np.sqrt(1 - z * z)
            phi = np.pi * (1 + 5 ** 0.5) * i
            extra = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
        else:
            g = np.random.default_rng(12345).standard_normal((m, n))
            extra = g / np.linalg.norm(g, axis=1, keepdims=True)
    return np.concatenate([axes, extra])


def shift_norm(psi: ScalarField, s: np.ndarray, V: Box, p: float, grid_res: int) -> float:
    """||psi(. + s) - psi||_{L^p(V)} for a fixed shift vector s."""
    def forward(X):
        Y = X + s
        return Y, np.zeros(len(X), dtype=bool)

    def backward(Y):
        X = Y - s
        return X, np.zeros(len(Y)), np.zeros(len(Y), dtype=bool)

    return difference_power(psi, forward, backward, V, p, grid_res) ** (1.0 / p)


def classical_modulus(t: float, psi: ScalarField, V: Box, p: float, grid_res: int = 33,
                      directions: np.ndarray | None = None) -> float:
    """sup over shifts s = t u (u in a direction set) of ||psi(. + s) - psi||_{L^p(V)}."""
    if t == 0.0:
        return 0.0
    U = shift_directions(V.dim) if directions is None else directions
    return max(shift_norm(psi, t * u, V, p, grid_res) for u in U)


def classical_besov_seminorm(psi: ScalarField, V: Box, params: NormParams) -> float:
    """{int_0^delta [t^-sigma omega(t)]^p dt/t}^(1/p) with the translation modulus."""
    nodes = params.nodes()
    U = shift_directions(V.dim)
    per_node = np.array([classical_modulus(t, psi, V, params.p, params.grid_res, U) for t in nodes])
    return besov_term(np.maximum.accumulate(per_node), nodes, params.sigma, params.p)


# -------------------------------------------------------------------- Sobolev

@dataclass
class SobolevNorm:
    value: float
    lp: float
    terms: list


def sobolev_terms(phi: ScalarField, beta: Sequence[VectorField], U: Box, p: float, grid_res=24,
                  finite_difference: bool | None = None, step: float | None = None) -> SobolevNorm:
    fields = list(beta)
    region = _region(phi, U)
    if region is None:
        return SobolevNorm(0.0, 0.0, [0.0] * len(fields))
    pts, w = region.midpoints(grid_res)
    values = phi(pts)
    lp = _power_sum(values, p, w) ** (1.0 / p)
    use_fd = phi.grad is None if finite_difference is None else finite_difference
    if phi.grad is None and not use_fd:
        raise ValueError(f"{phi.label or 'phi'} has no gradient; enable finite differences")
    terms = []
    if use_fd:
        h = step if step is not None else float(np.min(region.widths / np.asarray(grid_res))) / 8.0
        for Y in fields:
            a = Y(pts)
            d = (phi(pts + h * a) - phi(pts - h * a)) / (2 * h)
            terms.append(_power_sum(d, p, w) ** (1.0 / p))
    else:
        G = phi.gradient(pts)
        for Y in fields:
            d = np.sum(Y(pts) * G, axis=1)
            terms.append(_power_sum(d, p, w) ** (1.0 / p))
    return SobolevNorm(lp + sum(terms), lp, terms)


def sobolev_norm(phi: ScalarField, beta: Sequence[VectorField], U: Box, p: float, grid_res=24,
                 finite_difference: bool | None = None, step: float | None = None) -> float:
    """||phi||_{L^p(U)} + sum_j ||Y_j phi||_{L^p(U)}."""
    return sobolev_terms(phi, beta, U, p, grid_res, finite_difference, step).value


@dataclass(frozen=True)
class TimeSlicing:
    """A t quadrature and an x box per t node, for functions on R^{n+1}.

    ``boxes[i]`` must contain the x-support of phi(., t_nodes[i]); None
    marks a slice known to vanish.
    """

    t_nodes: np.ndarray
    t_weights: np.ndarray
    boxes: tuple

    def __post_init__(self):
        if not (len(self.t_nodes) == len(self.t_weights) == len(self.boxes)):
            raise ValueError("t_nodes, t_weights and boxes must have equal length")


def dyadic_panels(radius: float, finest: float, per_panel: int = 3, symmetric: bool = True):
    """Composite Gauss nodes on [0, finest] and [r 2^-(j+1), r 2^-j] up to r.

    Returns (nodes, weights) on [-r, r] (or [0, r] when not ``symmetric``).
    """
    if not 0 < finest <= radius:
        raise ValueError("need 0 < finest <= radius")
    g, w = np.polynomial.legendre.leggauss(per_panel)
    g, w = 0.5 * (g + 1.0), 0.5 * w
    edges = [radius]
    while edges[-1] / 2 >= finest * (1 - 1e-12):
        edges.append(edges[-1] / 2)
    edges.append(0.0)
    edges = np.array(edges[::-1])
    nodes = np.concatenate([a + (b - a) * g for a, b in zip(edges[:-1], edges[1:])])
    weights = np.concatenate([(b - a) * w for a, b in zip(edges[:-1], edges[1:])])
    if symmetric:
        nodes = np.concatenate([-nodes[::-1], nodes])
        weights = np.concatenate([weights[::-1], weights])
    return nodes, weights


def sliced_sobolev_terms(phi: ScalarField, beta: Sequence[VectorField], slicing: TimeSlicing, p: float,
                         grid_res: int = 12, step: float | None = None) -> SobolevNorm:
    """||phi||_{L^p} + sum_j ||Y_j phi||_{L^p} integrated slice by slice in t.

    Each slice uses a midpoint grid over its own x box and the derivatives
    are central differences along Y_j(x, t) with step ``step`` (default: an
    eighth of the slice's smallest x cell).
    """
    fields = list(beta)
    lp = 0.0
    acc = np.zeros(len(fields))
    t_nodes = np.asarray(slicing.t_nodes, dtype=float)
    for t, wt, box in zip(t_nodes, slicing.t_weights, slicing.boxes):
        if box is None:
            continue
        xs, w = box.midpoints(grid_res)
        pts = np.column_stack([xs, np.full(len(xs), t)])
        values = phi(pts)
        lp += wt * _power_sum(values, p, w)
        h = step if step is not None else float(np.min(box.widths)) / grid_res / 8.0
        for j, Y in enumerate(fields):
            a = Y(pts)
            d = (phi(pts + h * a) - phi(pts - h * a)) / (2 * h)
            acc[j] += wt * _power_sum(d, p, w)
    terms = [float(v) ** (1.0 / p) for v in acc]
    lp = lp ** (1.0 / p)
    return SobolevNorm(lp + sum(terms), lp, terms)


# -------------------------------------------------------------- Hardy check

@dataclass(frozen=True)
class HardyCheck:
    lhs: float
    rhs: float
    ratio: float


def hardy_littlewood_check(h, q: float, t=None, T: float | None = None) -> HardyCheck:
    """Compare {int_0^T |t^-1 int_0^t h|^q dt}^(1/q) with {int_0^T h^q}^(1/q).

    ``h`` is sampled on ``t`` (default: uniform grid on (0, T]); if the grid
    starts after 0 the value at 0 is extrapolated linearly (clamped at 0).
    """
    h = np.asarray(h, dtype=float)
    if not 1.0 < q < np.inf:
        raise ValueError("q must lie in (1, inf)")
    if np.any(h < 0):
        raise ValueError("h must be nonnegative")
    if t is None:
        T = 1.0 if T is None else T
        t = T * np.arange(1, h.size + 1) / h.size
    t = np.asarray(t, dtype=float)
    if t[0] > 0:
        h0 = h[0] - (h[1] - h[0]) * t[0] / (t[1] - t[0]) if h.size > 1 else h[0]
        t = np.concatenate([[0.0], t])
        h = np.concatenate([[max(h0, 0.0)], h])
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (h[1:] + h[:-1]) * np.diff(t))])
    avg = np.empty_like(h)
    avg[0] = h[0]
    avg[1:] = cum[1:] / t[1:]
    lhs = np.trapezoid(np.abs(avg) ** q, t) ** (1.0 / q)
    rhs = np.trapezoid(h ** q, t) ** (1.0 / q)
    if rhs == 0.0:
        if lhs > 0.0:
            raise ValueError("inconsistent input: rhs vanishes but lhs does not")
        return HardyCheck(0.0, 0.0, 0.0)
    return HardyCheck(float(lhs), float(rhs), float(lhs / rhs))
