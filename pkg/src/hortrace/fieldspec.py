"""Vector fields with symbolic coefficients, Lie brackets and step-2 checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import expr as ex
from ._program import compile_nodes
from .expr import Expression


class StepTwoError(ValueError):
    """The fields and their first brackets do not span at the point."""


class SliceError(ValueError):
    """A field has a non-vanishing d/dt component on {t = 0}."""


@dataclass(frozen=True, eq=False)
class VectorField:
    """``sum_j coeffs[j] * d/dx_j`` on R^dim. On R^{n+1} the last slot is d/dt."""

    coeffs: tuple[Expression, ...]
    name: str = ""

    def __post_init__(self):
        if not self.coeffs:
            raise ValueError("a vector field needs at least one coefficient")
        dim = self.coeffs[0].dim
        if len(self.coeffs) != dim or any(c.dim != dim for c in self.coeffs):
            raise ValueError(f"expected {dim} coefficients over R^{dim}")

    @property
    def dim(self) -> int:
        return len(self.coeffs)

    @classmethod
    def coordinate(cls, index: int, dim: int, name: str = "") -> "VectorField":
        """The constant field d/dx_{index+1}."""
        return cls(tuple(Expression.constant(1.0 if j == index else 0.0, dim) for j in range(dim)), name)

    @classmethod
    def zero(cls, dim: int) -> "VectorField":
        return cls(tuple(Expression.constant(0.0, dim) for _ in range(dim)))

    @cached_property
    def program(self):
        return compile_nodes([c.node for c in self.coeffs], self.dim)

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.coeffs)

    def apply(self, f: Expression) -> Expression:
        """The derivative X(f) = sum_j X^j df/dx_j."""
        out = Expression.constant(0.0, self.dim)
        for j, c in enumerate(self.coeffs):
            out = out + c * f.diff(j)
        return out

    def divergence(self) -> Expression:
        out = Expression.constant(0.0, self.dim)
        for j, c in enumerate(self.coeffs):
            out = out + c.diff(j)
        return out

    def __call__(self, X) -> np.ndarray:
        return evaluate(self, X)

    def __add__(self, other: "VectorField") -> "VectorField":
        _same_dim(self, other)
        return VectorField(tuple(a + b for a, b in zip(self.coeffs, other.coeffs)))

    def __sub__(self, other: "VectorField") -> "VectorField":
        _same_dim(self, other)
        return VectorField(tuple(a - b for a, b in zip(self.coeffs, other.coeffs)))

    def __neg__(self) -> "VectorField":
        return VectorField(tuple(-c for c in self.coeffs), self.name)

    def scale(self, factor) -> "VectorField":
        """Multiply by a constant or by a scalar Expression."""
        return VectorField(tuple(factor * c for c in self.coeffs))

    def __eq__(self, other):
        return isinstance(other, VectorField) and self.coeffs == other.coeffs

    def __hash__(self):
        return hash(self.coeffs)

    def __str__(self):
        terms = []
        for j, c in enumerate(self.coeffs):
            if c.is_zero():
                continue
            s = str(c)
            terms.append(f"d{j + 1}" if s == "1" else f"({s})*d{j + 1}")
        return " + ".join(terms) if terms else "0"

    def __repr__(self):
        label = f"{self.name}: " if self.name else ""
        return f"VectorField({label}{', '.join(str(c) for c in self.coeffs)})"


def _same_dim(X: VectorField, Y: VectorField):
    if X.dim != Y.dim:
        raise ValueError(f"dimension mismatch: {X.dim} vs {Y.dim}")


def parse_field(coeff_texts: Sequence[str], dim: int | None = None, name: str = "") -> VectorField:
    """Parse one coefficient string per coordinate.

    >>> str(parse_field(["0", "1", "x1"], 3))
    'd2 + (x1)*d3'
    """
    if dim is None:
        dim = len(coeff_texts)
    if len(coeff_texts) != dim:
        raise ValueError(f"expected {dim} coefficients, got {len(coeff_texts)}")
    return VectorField(tuple(ex.parse(text, dim) for text in coeff_texts), name)


def evaluate(field: VectorField, point) -> np.ndarray:
    """Coefficient vector(s) at one point (d,) or many points (N, d)."""
    P = np.asarray(point, dtype=float)
    single = P.ndim == 1
    P = np.atleast_2d(P)
    if P.shape[1] != field.dim:
        raise ValueError(f"point has dimension {P.shape[1]}, field has {field.dim}")
    out = np.stack([c(P) for c in field.coeffs], axis=1)
    return out[0] if single else out


def lie_bracket(X: VectorField, Y: VectorField) -> VectorField:
    """[X, Y]^j = X(Y^j) - Y(X^j)."""
    _same_dim(X, Y)
    return VectorField(tuple(X.apply(Y.coeffs[j]) - Y.apply(X.coeffs[j]) for j in range(X.dim)))


@dataclass(frozen=True, eq=False)
class Basis:
    """Z_1..Z_n where Z_i = [Z_l, Z_m] for i >= k (0-based provenance pairs)."""

    fields: tuple[VectorField, ...]
    k: int
    provenance: dict[int, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.k <= len(self.fields):
            raise ValueError("k out of range")
        for i, (l, m) in self.provenance.items():
            if i < self.k or l >= self.k or m >= self.k:
                raise ValueError(f"bad provenance {i}: ({l}, {m})")

    def __len__(self):
        return len(self.fields)

    def __iter__(self):
        return iter(self.fields)

    def __getitem__(self, i):
        return self.fields[i]

    @property
    def n(self) -> int:
        return len(self.fields)

    @property
    def dim(self) -> int:
        return self.fields[0].dim

    @property
    def first_layer(self) -> tuple[VectorField, ...]:
        return self.fields[: self.k]

    def matrix(self, point) -> np.ndarray:
        """Columns are the fields evaluated at ``point``."""
        return np.column_stack([evaluate(Z, point) for Z in self.fields])

    def rank(self, point, rtol: float = 1e-8) -> int:
        return numerical_rank(self.matrix(point), rtol)

    def bracket_error(self, points) -> float:
        """Sup over ``points`` of |Z_i - [Z_l, Z_m]| for the bracket layer."""
        worst = 0.0
        for i, (l, m) in self.provenance.items():
            diff = evaluate(self.fields[i], points) - evaluate(lie_bracket(self.fields[l], self.fields[m]), points)
            worst = max(worst, float(np.max(np.abs(diff))) if diff.size else 0.0)
        return worst


def numerical_rank(M: np.ndarray, rtol: float = 1e-8) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


@dataclass(frozen=True)
class Step2Result:
    satisfied: bool
    rank: int
    spanning_set: Basis


def check_step2(fields: Sequence[VectorField], point, tol: float = 1e-8) -> Step2Result:
    """Rank of the fields plus all pairwise brackets at ``point``.

    ``tol`` is relative to the largest singular value.
    """
    fields = tuple(fields)
    if not fields:
        raise ValueError("no fields given")
    dim = fields[0].dim
    for Z in fields:
        if Z.dim != dim:
            raise ValueError("fields must share a dimension")
    k = len(fields)
    all_fields = list(fields)
    prov = {}
    for l in range(k):
        for m in range(l + 1, k):
            prov[len(all_fields)] = (l, m)
            all_fields.append(lie_bracket(fields[l], fields[m]))
    spanning = Basis(tuple(all_fields), k, prov)
    rank = numerical_rank(spanning.matrix(point), tol)
    return Step2Result(rank == dim, rank, spanning)


def complete_basis(first_layer: Sequence[VectorField], point, tol: float = 1e-8) -> Basis:
    """Append brackets [Z_l, Z_m], lexicographic in (l, m), until rank = dim."""
    fields = list(first_layer)
    result = check_step2(fields, point, tol)
    if not result.satisfied:
        raise StepTwoError(f"rank {result.rank} < {fields[0].dim} at {np.asarray(point).tolist()}")
    dim = fields[0].dim
    k = len(fields)
    chosen = list(fields)
    prov = {}
    rank = numerical_rank(np.column_stack([evaluate(Z, point) for Z in chosen]), tol)
    for l in range(k):
        for m in range(l + 1, k):
            if rank == dim:
                break
            B = lie_bracket(fields[l], fields[m])
            trial = numerical_rank(np.column_stack([evaluate(Z, point) for Z in chosen + [B]]), tol)
            if trial > rank:
                prov[len(chosen)] = (l, m)
                chosen.append(B)
                rank = trial
    if rank != dim or len(chosen) != dim:
        raise StepTwoError("first-layer fields are linearly dependent; cannot form a basis")
    return Basis(tuple(chosen), k, prov)


def restrict_to_slice(field: VectorField, grid=None, tol: float = 1e-10) -> VectorField:
    """Set t = 0 in the x-coefficients and drop the t slot.

    The d/dt coefficient must vanish at t = 0: checked symbolically, then on
    ``grid`` (points of R^n) when the symbolic form does not fold to zero.
    """
    d = field.dim
    if d < 2:
        raise ValueError("need a field on R^{n+1}, n >= 1")
    t_coeff = field.coeffs[-1].substitute(d - 1, 0.0)
    if not t_coeff.is_zero():
        if grid is None:
            grid = np.random.default_rng(0).uniform(-1.0, 1.0, size=(64, d - 1))
        pts = np.column_stack([np.asarray(grid, dtype=float), np.zeros(len(grid))])
        if np.max(np.abs(t_coeff(pts))) > tol:
            raise SliceError(f"d/dt coefficient {field.coeffs[-1]} does not vanish at t = 0")
    mapping = {j: j for j in range(d - 1)}
    coeffs = []
    for c in field.coeffs[:-1]:
        node = c.substitute(d - 1, 0.0).node
        coeffs.append(Expression(ex.reindex(node, mapping), d - 1))
    return VectorField(tuple(coeffs), field.name)


def lift(field: VectorField, extra_coeff: str | Expression = "0") -> VectorField:
    """View a field on R^n as a t-independent field on R^{n+1}."""
    d = field.dim + 1
    mapping = {j: j for j in range(field.dim)}
    coeffs = [Expression(ex.reindex(c.node, mapping), d) for c in field.coeffs]
    last = extra_coeff if isinstance(extra_coeff, Expression) else ex.parse(extra_coeff, d)
    coeffs.append(last)
    return VectorField(tuple(coeffs), field.name)


def d_dt(dim: int, name: str = "T") -> VectorField:
    """d/dt on R^dim (last coordinate)."""
    return VectorField.coordinate(dim - 1, dim, name)


def is_d_dt(field: VectorField) -> bool:
    return field == d_dt(field.dim)


# ------------------------------------------------------------- manifest lines

def parse_field_line(line: str) -> VectorField:
    """``name: c1, c2, ..., cd`` (``=`` is accepted in place of ``:``)."""
    sep = min((i for i in (line.find(":"), line.find("=")) if i >= 0), default=-1)
    if sep < 0:
        raise ValueError(f"field line needs 'name: coefficients': {line!r}")
    name = line[:sep].strip()
    coeffs = [c.strip() for c in line[sep + 1:].split(",")]
    if not name:
        raise ValueError(f"missing field name: {line!r}")
    return parse_field(coeffs, len(coeffs), name)


def parse_field_manifest(text: str) -> list[VectorField]:
    """One field per line, ``#`` comments; dimension from the coefficient count."""
    fields = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            fields.append(parse_field_line(line))
    if fields and len({Z.dim for Z in fields}) != 1:
        raise ValueError("all fields in a manifest must share a dimension")
    return fields
