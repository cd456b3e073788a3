"""Nested boxes, admissible flow radii, scalar fields and the test corpus."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .expr import Expression
from .flows import DEFAULT_CFG, FlowSolverConfig, flow_batch


class DomainError(ValueError):
    pass


class SupportError(DomainError):
    """A function's support is not where an operation requires it."""


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box [lo, hi] in R^d."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float)).copy()
        if lo.shape != hi.shape:
            raise DomainError("lo and hi must have the same shape")
        if np.any(hi <= lo):
            raise DomainError(f"empty box {lo.tolist()} .. {hi.tolist()}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, a: float, b: float, dim: int) -> "Box":
        return cls(np.full(dim, a), np.full(dim, b))

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def inradius(self) -> float:
        return float(0.5 * self.widths.min())

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def __eq__(self, other):
        return isinstance(other, Box) and np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __hash__(self):
        return hash((self.lo.tobytes(), self.hi.tobytes()))

    def __repr__(self):
        return "Box(" + " x ".join(f"[{a:g}, {b:g}]" for a, b in zip(self.lo, self.hi)) + ")"

    def contains(self, X, strict: bool = False) -> np.ndarray:
        X = np.atleast_2d(X)
        if strict:
            return np.all((X > self.lo) & (X < self.hi), axis=1)
        return np.all((X >= self.lo) & (X <= self.hi), axis=1)

    def contains_box(self, other: "Box", strict: bool = False) -> bool:
        if strict:
            return bool(np.all(self.lo < other.lo) and np.all(other.hi < self.hi))
        return bool(np.all(self.lo <= other.lo) and np.all(other.hi <= self.hi))

    def intersect(self, other: "Box") -> "Box | None":
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(hi <= lo):
            return None
        return Box(lo, hi)

    def hull(self, other: "Box") -> "Box":
        return Box(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def expand(self, margin) -> "Box":
        return Box(self.lo - margin, self.hi + margin)

    def times(self, other: "Box") -> "Box":
        return Box(np.concatenate([self.lo, other.lo]), np.concatenate([self.hi, other.hi]))

    def axis_nodes(self, res) -> list[np.ndarray]:
        res = np.broadcast_to(np.asarray(res, dtype=int), (self.dim,))
        return [self.lo[a] + (np.arange(res[a]) + 0.5) * (self.widths[a] / res[a]) for a in range(self.dim)]

    def midpoints(self, res) -> tuple[np.ndarray, float]:
        """Cell centres of a uniform ``res``-per-axis grid and the cell volume."""
        res = np.broadcast_to(np.asarray(res, dtype=int), (self.dim,))
        axes = self.axis_nodes(res)
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([m.ravel() for m in mesh])
        return pts, float(np.prod(self.widths / res))

    def vertices(self, res) -> np.ndarray:
        """Uniform grid including the faces, ``res`` points per axis."""
        axes = [np.linspace(self.lo[a], self.hi[a], res) for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def boundary_sample(self, res: int) -> np.ndarray:
        """Points of the grid ``vertices(res)`` lying on a face."""
        pts = self.vertices(res)
        on_face = np.any(np.isclose(pts, self.lo) | np.isclose(pts, self.hi), axis=1)
        return pts[on_face]


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """V2 compactly inside V1 compactly inside V, and U = V x (-eps, eps)."""

    V: Box
    V1: Box
    V2: Box
    epsilon: float = 0.5
    delta: float = 0.25
    grid_res: int = 33
    t_res: int = 24

    def __post_init__(self):
        if not (self.V.dim == self.V1.dim == self.V2.dim):
            raise DomainError("V, V1, V2 must share a dimension")
        if not self.V.contains_box(self.V1, strict=True):
            raise DomainError("V1 must lie strictly inside V")
        if not self.V1.contains_box(self.V2, strict=True):
            raise DomainError("V2 must lie strictly inside V1")
        if self.delta <= 0 or self.epsilon <= 0:
            raise DomainError("delta and epsilon must be positive")
        if self.grid_res < 8:
            raise DomainError("grid_res must be at least 8")

    @classmethod
    def default(cls, n: int, **overrides) -> "DomainSpec":
        base = dict(V=Box.cube(-1, 1, n), V1=Box.cube(-0.6, 0.6, n), V2=Box.cube(-0.4, 0.4, n))
        base.update(overrides)
        return cls(**base)

    @property
    def n(self) -> int:
        return self.V.dim

    @property
    def U(self) -> Box:
        return self.V.times(Box([-self.epsilon], [self.epsilon]))

    def with_(self, **changes) -> "DomainSpec":
        return replace(self, **changes)

    def describe(self) -> dict:
        return {
            "V": repr(self.V), "V1": repr(self.V1), "V2": repr(self.V2),
            "epsilon": self.epsilon, "delta": self.delta,
            "grid_res": self.grid_res, "t_res": self.t_res,
        }


# ---------------------------------------------------------------- scalar fields

@dataclass(frozen=True, eq=False)
class ScalarField:
    """A real function on R^dim, vectorized over (N, dim) point arrays.

    ``support`` is a box outside which the function vanishes (None: no
    claim). ``grad`` is an optional exact gradient. ``kind`` is
    ``"closed-form"`` or ``"composed"``. ``domain`` (None: all of R^dim)
    is where the function is defined; points outside it raise.
    """

    dim: int
    evaluator: Callable[[np.ndarray], np.ndarray]
    support: Box | None = None
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    kind: str = "closed-form"
    sup_norm: float | None = None
    label: str = ""
    meta: dict = field(default_factory=dict)
    domain: Box | None = None

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        P = np.atleast_2d(X)
        if P.shape[1] != self.dim:
            raise ValueError(f"expected points in R^{self.dim}, got {P.shape[1]}")
        if self.domain is not None and not np.all(self.domain.contains(P)):
            raise ValueError(f"{self.label or 'field'} is only defined on {self.domain!r}")
        if self.support is None:
            out = np.asarray(self.evaluator(P), dtype=float)
        else:
            inside = self.support.contains(P)
            out = np.zeros(P.shape[0])
            if np.any(inside):
                out[inside] = self.evaluator(P[inside])
        return out[0] if single else out

    def gradient(self, X) -> np.ndarray:
        if self.grad is None:
            raise ValueError(f"{self.label or 'field'} has no closed-form gradient")
        P = np.atleast_2d(np.asarray(X, dtype=float))
        if self.support is None:
            return self.grad(P)
        inside = self.support.contains(P)
        out = np.zeros_like(P)
        if np.any(inside):
            out[inside] = self.grad(P[inside])
        return out

    def scaled(self, a: float) -> "ScalarField":
        ev, gr = self.evaluator, self.grad
        return ScalarField(
            self.dim, lambda X: a * ev(X), self.support,
            None if gr is None else (lambda X: a * gr(X)),
            self.kind, None if self.sup_norm is None else abs(a) * self.sup_norm,
            f"{a:g}*{self.label}", dict(self.meta),
        )

    def __add__(self, other: "ScalarField") -> "ScalarField":
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        support = None if (self.support is None or other.support is None) else self.support.hull(other.support)
        grad = None
        if self.grad is not None and other.grad is not None:
            grad = lambda X: self.gradient(X) + other.gradient(X)  # noqa: E731
        sup = None if (self.sup_norm is None or other.sup_norm is None) else self.sup_norm + other.sup_norm
        kind = "closed-form" if self.kind == other.kind == "closed-form" else "composed"
        return ScalarField(self.dim, lambda X: self(X) + other(X), support, grad, kind, sup,
                           f"({self.label}+{other.label})")

    @classmethod
    def from_expression(cls, e: Expression, support: Box | None = None, label: str = "") -> "ScalarField":
        partials = [e.diff(j) for j in range(e.dim)]
        return cls(e.dim, e, support, lambda X: np.column_stack([p(X) for p in partials]),
                   label=label or str(e))

    @classmethod
    def constant(cls, c: float, dim: int, support: Box | None = None) -> "ScalarField":
        return cls(dim, lambda X: np.full(X.shape[0], float(c)), support,
                   lambda X: np.zeros_like(X), sup_norm=abs(c), label=f"{c:g}")


def _bump_profile(X, center, scale):
    U = (X - center) / scale
    r2 = np.sum(U * U, axis=1)
    out = np.zeros(X.shape[0])
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out, U, r2, inside


def bump(center, scale: float) -> ScalarField:
    """exp(1 - 1/(1 - r^2)), r = |x - center| / scale; equals 1 at the centre."""
    center = np.atleast_1d(np.asarray(center, dtype=float)).copy()
    scale = float(scale)
    if scale <= 0:
        raise DomainError("scale must be positive")

    def value(X):
        return _bump_profile(X, center, scale)[0]

    def grad(X):
        b, U, r2, inside = _bump_profile(X, center, scale)
        g = np.zeros_like(X)
        w = -2.0 * b[inside] / (1.0 - r2[inside]) ** 2 / scale
        g[inside] = w[:, None] * U[inside]
        return g

    support = Box(center - scale, center + scale)
    return ScalarField(center.size, value, support, grad, sup_norm=1.0,
                       label=f"bump(c={np.round(center, 6).tolist()}, s={scale:g})",
                       meta={"center": center, "scale": scale})


def modulated_bump(center, scale: float, axis: int = 0) -> ScalarField:
    """((x_axis - c_axis)/scale) * bump(center, scale); bounded by 1."""
    base = bump(center, scale)
    center = base.meta["center"]

    def value(X):
        return (X[:, axis] - center[axis]) / scale * base.evaluator(X)

    def grad(X):
        m = (X[:, axis] - center[axis]) / scale
        g = m[:, None] * base.grad(X)
        g[:, axis] += base.evaluator(X) / scale
        return g

    return ScalarField(base.dim, value, base.support, grad, sup_norm=1.0,
                       label=f"x{axis + 1}-modulated {base.label}", meta=dict(base.meta))


def time_product(psi: ScalarField, rho: ScalarField) -> ScalarField:
    """phi(x, t) = psi(x) * rho(t) on R^{n+1}."""
    if rho.dim != 1:
        raise ValueError("rho must be a function of t alone")
    n = psi.dim

    def value(X):
        return psi(X[:, :n]) * rho(X[:, n:])

    grad = None
    if psi.grad is not None and rho.grad is not None:
        def grad(X):
            a = psi(X[:, :n])
            b = rho(X[:, n:])
            return np.column_stack([psi.gradient(X[:, :n]) * b[:, None], a[:, None] * rho.gradient(X[:, n:])])

    support = None
    if psi.support is not None and rho.support is not None:
        support = psi.support.times(rho.support)
    sup = None if (psi.sup_norm is None or rho.sup_norm is None) else psi.sup_norm * rho.sup_norm
    return ScalarField(n + 1, value, support, grad, "closed-form" if grad else "composed", sup,
                       f"{psi.label} * {rho.label}(t)", {"space": psi, "time": rho})


def test_corpus(spec: DomainSpec, count: int) -> list[ScalarField]:
    """Deterministic family of smooth functions supported in V2.

    With R = inradius(V2)/2 and c = centre(V2), member 0 is bump(c, R); after
    that members come in groups of three, g = 0, 1, ...:

    * bump(c, R 2^-(g+1))
    * ((x1 - c1)/s) bump(c, s), s = R 2^-g
    * bump(c + (-1)^g R e_{g mod n}, R 2^-(g+1))
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    c = spec.V2.center
    R = spec.V2.inradius / 2
    n = spec.n
    out = [bump(c, R)]
    g = 0
    while len(out) < count:
        fine = R * 2.0 ** -(g + 1)
        out.append(bump(c, fine))
        if len(out) < count:
            out.append(modulated_bump(c, R * 2.0 ** -g, 0))
        if len(out) < count:
            shift = np.zeros(n)
            shift[g % n] = R if g % 2 == 0 else -R
            out.append(bump(c + shift, fine))
        g += 1
    for i, f in enumerate(out):
        f.meta["index"] = i
    return out


# -------------------------------------------------------------- admissibility

def admissible_delta(fields: Sequence, V1: Box, V: Box, delta_max: float,
                     cfg: FlowSolverConfig = DEFAULT_CFG, grid_res: int = 33,
                     safety: float = 0.9, iterations: int = 10) -> float:
    """Largest delta <= delta_max (bisection) with e^{tau Z}(dV1) inside V.

    Flows of every field from a boundary sample of V1 are integrated to
    tau = +-delta with V as the monitored box. The bisection result is
    multiplied by ``safety``.
    """
    if not V.contains_box(V1, strict=True):
        raise DomainError("V1 must lie strictly inside V")
    if delta_max <= 0:
        raise DomainError("delta_max must be positive")
    pts = V1.boundary_sample(2 * grid_res)
    fields = list(fields)

    def feasible(delta: float) -> bool:
        for Z in fields:
            for sign in (1.0, -1.0):
                res = flow_batch(Z, pts, sign * delta, cfg, V, on_exit="flag")
                if np.any(res.escaped):
                    return False
        return True

    if feasible(delta_max):
        return safety * delta_max
    lo, hi = 0.0, delta_max
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        raise DomainError(f"no admissible delta at resolution {delta_max / 2 ** iterations:g}")
    return safety * lo


test_corpus.__test__ = False  # keep pytest from collecting it when imported
