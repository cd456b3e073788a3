"""Plain-text experiment manifests.

A manifest has sections ``fields:``, ``domain:``, ``norms:``, ``extension:``
and ``experiment:``. Field lines read ``name: c1, ..., cd`` (coefficients on
R^{n+1}, the last slot being d/dt); every other line is ``key = value``.
``#`` starts a comment.

Boxes are written either as ``a, b`` (the cube [a, b]^n) or as
``a1 b1; a2 b2; ...`` (one interval per axis).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .domains import Box, DomainSpec
from .fieldspec import VectorField, parse_field_line
from .norms import NormParams

SECTIONS = ("fields", "domain", "norms", "extension", "experiment")


class ManifestError(ValueError):
    """Malformed or inconsistent manifest."""


def _float(text: str) -> float:
    return float(text)


def _int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _matrix(text: str) -> tuple[tuple[str, ...], ...]:
    rows = tuple(tuple(c.strip() for c in row.split(",")) for row in text.split(";"))
    if len({len(r) for r in rows}) != 1:
        raise ValueError("ragged matrix")
    return rows


def _names(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _seeley(text: str) -> tuple[tuple[float, float], ...]:
    pairs = []
    for item in text.split(","):
        a, b = item.split(":")
        pairs.append((float(a), float(b)))
    return tuple(pairs)


def parse_box(text: str, dim: int) -> Box:
    parts = [p.strip() for p in text.split(";") if p.strip()]
    if len(parts) == 1:
        lo, hi = _floats(parts[0])
        return Box.cube(lo, hi, dim)
    if len(parts) != dim:
        raise ValueError(f"box needs 1 or {dim} intervals, got {len(parts)}")
    bounds = [tuple(float(v) for v in p.replace(",", " ").split()) for p in parts]
    return Box([b[0] for b in bounds], [b[1] for b in bounds])


# key -> converter, per section; boxes are handled separately
SCHEMA = {
    "domain": {"V": None, "V1": None, "V2": None, "epsilon": _float, "delta": _float,
               "grid_res": _int, "t_res": _int},
    "norms": {"p": _float, "t_nodes": _int, "tau_samples": _int, "t_min_exponent": _int,
              "grid_res": _int, "sobolev_grid": _int},
    "extension": {"delta": _float, "quad_order": _int, "seeley": _seeley, "cutoff_radius": _float,
                  "sobolev_grid": _int, "panel_nodes": _int},
    "experiment": {"name": str, "corpus_size": _int, "ratio_bound": _float, "drift_bound": _float,
                   "seed": _int, "m": _int, "basis_change": _matrix, "s_grid": _floats,
                   "residual_pair": _names, "roundtrip_tol": _float, "straighten_tol": _float},
}


@dataclass(frozen=True, eq=False)
class Manifest:
    """Parsed manifest; ``fields`` live on R^{n+1}."""

    fields: tuple[VectorField, ...]
    domain: DomainSpec
    norms: NormParams
    sobolev_grid: int = 24
    extension: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)
    path: str = ""

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def seed(self) -> int:
        return int(self.experiment.get("seed", 0))

    def get_field(self, name: str) -> VectorField:
        for Z in self.fields:
            if Z.name == name:
                return Z
        raise ManifestError(f"no field named {name!r}")

    def with_overrides(self, p: float | None = None, grid: int | None = None, delta: float | None = None,
                       seed: int | None = None) -> "Manifest":
        """Apply command-line overrides (None leaves a value unchanged)."""
        norms, domain, experiment = self.norms, self.domain, dict(self.experiment)
        try:
            if p is not None:
                norms = replace(norms, p=p)
            if grid is not None:
                norms = replace(norms, grid_res=grid)
                domain = domain.with_(grid_res=grid)
            if delta is not None:
                norms = replace(norms, delta=delta)
                domain = domain.with_(delta=delta)
        except ValueError as exc:
            raise ManifestError(str(exc)) from exc
        if seed is not None:
            experiment["seed"] = seed
        return replace(self, norms=norms, domain=domain, experiment=experiment)

    def describe(self) -> dict:
        out = {"manifest": self.path}
        out.update({f"field_{Z.name}": ", ".join(str(c) for c in Z.coeffs) for Z in self.fields})
        out.update(self.domain.describe())
        out.update(self.norms.describe())
        out["sobolev_grid"] = self.sobolev_grid
        out.update({f"ext_{k}": v for k, v in sorted(self.extension.items())})
        out.update({k: v for k, v in sorted(self.experiment.items())})
        return out


def _split_sections(text: str) -> dict[str, list[tuple[int, str]]]:
    sections: dict[str, list[tuple[int, str]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head = line[:-1].strip().lower() if line.endswith(":") else None
        if head in SECTIONS:
            if head in sections:
                raise ManifestError(f"line {lineno}: duplicate section {head!r}")
            current = head
            sections[current] = []
            continue
        if current is None:
            raise ManifestError(f"line {lineno}: content before the first section")
        sections[current].append((lineno, line))
    return sections


def _key_values(section: str, lines) -> dict:
    schema = SCHEMA[section]
    out = {}
    for lineno, line in lines:
        if "=" not in line:
            raise ManifestError(f"line {lineno}: expected 'key = value' in {section}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in schema:
            raise ManifestError(f"line {lineno}: unknown {section} key {key!r}")
        conv = schema[key]
        try:
            out[key] = value if conv is None else conv(value)
        except (ValueError, TypeError) as exc:
            raise ManifestError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return out


def parse_manifest(text: str, path: str = "") -> Manifest:
    sections = _split_sections(text)
    if "fields" not in sections or not sections["fields"]:
        raise ManifestError("manifest needs a non-empty fields: section")
    fields = []
    for lineno, line in sections["fields"]:
        try:
            fields.append(parse_field_line(line))
        except ValueError as exc:
            raise ManifestError(f"line {lineno}: {exc}") from exc
    dims = {Z.dim for Z in fields}
    if len(dims) != 1:
        raise ManifestError("all fields must share a dimension")
    names = [Z.name for Z in fields]
    if len(set(names)) != len(names):
        raise ManifestError("field names must be unique")
    n = dims.pop() - 1
    if n < 1:
        raise ManifestError("fields must live on R^{n+1} with n >= 1")

    dom = _key_values("domain", sections.get("domain", []))
    try:
        boxes = {k: parse_box(dom.pop(k), n) for k in ("V", "V1", "V2") if k in dom}
        domain = DomainSpec.default(n, **boxes, **dom)
    except ValueError as exc:
        raise ManifestError(f"domain: {exc}") from exc

    nrm = _key_values("norms", sections.get("norms", []))
    sobolev_grid = nrm.pop("sobolev_grid", 24)
    nrm.setdefault("delta", domain.delta)
    try:
        norms = NormParams(**nrm)
    except ValueError as exc:
        raise ManifestError(f"norms: {exc}") from exc

    ext = _key_values("extension", sections.get("extension", []))
    exp = _key_values("experiment", sections.get("experiment", []))
    for key in ("residual_pair",):
        for name in exp.get(key, ()):
            if name not in names:
                raise ManifestError(f"{key}: unknown field {name!r}")
    return Manifest(tuple(fields), domain, norms, sobolev_grid, ext, exp, path)


def load_manifest(path) -> Manifest:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    return parse_manifest(text, str(path))
