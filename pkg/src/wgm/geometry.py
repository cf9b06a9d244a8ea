"""Resonator cross-section model: subdomains, materials and tagged walls.

A geometry lives in the medial half-plane (r, z) with r >= 0.  It is a set of
non-overlapping dielectric subdomains (shapely polygons, possibly with holes)
plus a tagging of every exterior boundary piece with a wall condition.  All
coordinates are stored in meters; config files may declare another unit.

Geometries are immutable after construction and safe to share between
threads.
"""
from __future__ import annotations

import dataclasses
import io
import math
from dataclasses import dataclass, field

import numpy as np
import shapely
import yaml
from shapely.geometry import LineString, MultiLineString, Point, Polygon
from shapely.ops import unary_union

__all__ = [
    "ConfigError",
    "GeometryError",
    "Material",
    "Wall",
    "Subdomain",
    "BoundarySegment",
    "MeshControls",
    "Geometry",
    "Diagnostic",
    "parse_geometry",
    "serialize_geometry",
    "validate_geometry",
]

UNIT_FACTORS = {
    "m": 1.0,
    "cm": 1e-2,
    "mm": 1e-3,
    "um": 1e-6,
    "µm": 1e-6,
    "nm": 1e-9,
}

WALL_KINDS = ("electric", "magnetic", "impedance", "axis")


class ConfigError(ValueError):
    """Raised when a geometry config violates the documented schema."""


class GeometryError(ValueError):
    """Raised when a parsed geometry is geometrically inconsistent."""


@dataclass(frozen=True)
class Material:
    """Uniform dielectric with a diagonal permittivity tensor.

    ``eps_perp`` acts on the radial and azimuthal field directions,
    ``eps_par`` on the axial one.  ``tan_delta`` is only used when composing
    dielectric-loss quality factors; it never enters the eigenproblem.
    """

    label: str
    eps_perp: float = 1.0
    eps_par: float = 1.0
    tan_delta: float = 0.0
    shrink_perp: float = 1.0
    shrink_par: float = 1.0


@dataclass(frozen=True)
class Wall:
    """Boundary condition tag for one piece of the exterior boundary.

    kind is one of 'electric', 'magnetic', 'impedance', 'axis'.  Impedance
    walls carry a mixing angle (pi/4 matches an outward-going plane wave in
    free space) and a reference frequency used to scale the surface term.
    """

    kind: str
    theta_mix: float = 0.0
    f_ref: float | None = None

    def __post_init__(self):
        if self.kind not in WALL_KINDS:
            raise ConfigError(f"unknown wall kind {self.kind!r}")
        if self.kind == "impedance":
            if not (-math.pi / 2 < self.theta_mix <= math.pi / 2):
                raise ConfigError(
                    "impedance wall: theta_mix must lie in (-pi/2, pi/2]"
                )


ELECTRIC = Wall("electric")
MAGNETIC = Wall("magnetic")
AXIS = Wall("axis")


@dataclass(frozen=True)
class Subdomain:
    name: str
    material: Material
    polygon: Polygon  # shapely, CCW exterior, in meters


@dataclass(frozen=True)
class BoundarySegment:
    """One straight exterior boundary piece with its wall tag."""

    points: np.ndarray  # (2, 2) endpoints, meters
    wall: Wall


@dataclass(frozen=True)
class MeshControls:
    size: float = 0.0  # target element size in meters (0: pick from bbox)
    boxes: tuple = ()  # ((r0, z0, r1, z1, size), ...)
    quads: bool = False


@dataclass(frozen=True)
class Geometry:
    subdomains: tuple
    boundaries: tuple
    mesh: MeshControls = MeshControls()

    @property
    def bbox(self):
        b = unary_union([s.polygon for s in self.subdomains]).bounds
        return b

    @property
    def scale(self) -> float:
        r0, z0, r1, z1 = self.bbox
        return math.hypot(r1 - r0, z1 - z0)

    def material_of(self, name: str) -> Material:
        for s in self.subdomains:
            if s.material.label == name:
                return s.material
        raise KeyError(name)

    def with_materials(self, **eps) -> "Geometry":
        """Copy with selected material permittivities replaced.

        eps maps material label -> (eps_perp, eps_par).  Used by the
        permittivity fitter, which re-solves with trial permittivities on a
        fixed mesh.
        """
        subs = []
        for s in self.subdomains:
            if s.material.label in eps:
                ep, ea = eps[s.material.label]
                m = dataclasses.replace(s.material, eps_perp=ep, eps_par=ea)
                subs.append(dataclasses.replace(s, material=m))
            else:
                subs.append(s)
        return dataclasses.replace(self, subdomains=tuple(subs))


@dataclass(frozen=True)
class Diagnostic:
    entity: str
    rule: str
    detail: str = ""

    def __str__(self):
        msg = f"{self.entity}: {self.rule}"
        return f"{msg} ({self.detail})" if self.detail else msg


# ---------------------------------------------------------------------------
# config parsing


def _req(mapping, key, context):
    if key not in mapping:
        raise ConfigError(f"{context}: missing required key {key!r}")
    return mapping[key]


def _circle_points(center, radius, chords, start=0.0, stop=2 * math.pi, closed=True):
    n = max(8, int(chords))
    if closed:
        ang = start + (stop - start) * np.arange(n) / n
    else:
        ang = start + (stop - start) * np.arange(n + 1) / n
    r = center[0] + radius * np.cos(ang)
    z = center[1] + radius * np.sin(ang)
    return np.column_stack([r, z])


def _subdomain_polygon(spec, unit, context):
    chords = int(spec.get("chords", 64))
    if "polygon" in spec:
        pts = np.asarray(spec["polygon"], dtype=float) * unit
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
            raise ConfigError(f"{context}: polygon must be a list of [r, z] pairs")
        return Polygon(pts)
    if "rect" in spec:
        r0, z0, r1, z1 = (float(v) * unit for v in spec["rect"])
        if r1 <= r0 or z1 <= z0:
            raise ConfigError(f"{context}: rect must be [r0, z0, r1, z1] increasing")
        return Polygon([(r0, z0), (r1, z0), (r1, z1), (r0, z1)])
    if "circle" in spec:
        c = spec["circle"]
        center = np.asarray(_req(c, "center", context), dtype=float) * unit
        radius = float(_req(c, "radius", context)) * unit
        return Polygon(_circle_points(center, radius, int(c.get("chords", chords))))
    if "annulus" in spec:
        c = spec["annulus"]
        center = np.asarray(c.get("center", (0.0, 0.0)), dtype=float) * unit
        r_in = float(_req(c, "r_inner", context)) * unit
        r_out = float(_req(c, "r_outer", context)) * unit
        n = int(c.get("chords", chords))
        outer = _circle_points(center, r_out, n)
        inner = _circle_points(center, r_in, n)[::-1]
        return Polygon(outer, [inner])
    if "sector" in spec:
        c = spec["sector"]
        center = np.asarray(_req(c, "center", context), dtype=float) * unit
        radius = float(_req(c, "radius", context)) * unit
        a0 = math.radians(float(c.get("start_deg", -90.0)))
        a1 = math.radians(float(c.get("stop_deg", 90.0)))
        arc = _circle_points(center, radius, int(c.get("chords", chords)), a0, a1, closed=False)
        return Polygon(np.vstack([center, arc]))
    raise ConfigError(
        f"{context}: subdomain needs one of polygon/rect/circle/annulus/sector"
    )


def _shrink_polygon(poly: Polygon, sr: float, sz: float) -> Polygon:
    if sr == 1.0 and sz == 1.0:
        return poly
    # anisotropic contraction about the axis (r = 0) and equator (z = 0)
    return shapely.transform(poly, lambda pts: pts * np.array([sr, sz]))


class _Selector:
    """Boundary-piece selector from the config 'edges' entry."""

    def __init__(self, spec, unit, tol, context):
        self.tol = tol
        if spec == "all":
            self.kind = "all"
        elif spec == "axis":
            self.kind = "axis"
        elif isinstance(spec, dict) and "line" in spec:
            self.kind = "line"
            seg = np.asarray(spec["line"], dtype=float) * unit
            if seg.shape != (2, 2):
                raise ConfigError(f"{context}: line selector needs two [r, z] points")
            self.line = LineString(seg)
            self.tol = float(spec.get("tol", tol / unit)) * unit if "tol" in spec else tol
        elif isinstance(spec, dict) and "rect" in spec:
            self.kind = "rect"
            self.rect = tuple(float(v) * unit for v in spec["rect"])
        elif isinstance(spec, dict) and "circle" in spec:
            self.kind = "circle"
            c = spec["circle"]
            self.center = np.asarray(_req(c, "center", context), dtype=float) * unit
            self.radius = float(_req(c, "radius", context)) * unit
            self.tol = float(c.get("tol", tol / unit)) * unit if "tol" in c else tol
        else:
            raise ConfigError(f"{context}: unknown edge selector {spec!r}")

    def matches(self, pts: np.ndarray) -> bool:
        if self.kind == "all":
            return True
        if self.kind == "axis":
            return bool(np.all(np.abs(pts[:, 0]) <= self.tol))
        if self.kind == "line":
            return all(self.line.distance(Point(p)) <= self.tol for p in pts)
        if self.kind == "rect":
            r0, z0, r1, z1 = self.rect
            t = self.tol
            return bool(
                np.all((pts[:, 0] >= r0 - t) & (pts[:, 0] <= r1 + t))
                and np.all((pts[:, 1] >= z0 - t) & (pts[:, 1] <= z1 + t))
            )
        if self.kind == "circle":
            d = np.hypot(pts[:, 0] - self.center[0], pts[:, 1] - self.center[1])
            return bool(np.all(np.abs(d - self.radius) <= self.tol))
        raise AssertionError


def _exterior_pieces(subdomains):
    """Node all subdomain boundaries and return the exterior segments.

    Returns a list of (2, 2) arrays, one per straight exterior piece, plus
    the domain union (for validation).
    """
    rings = []
    for s in subdomains:
        rings.append(s.polygon.exterior)
        rings.extend(s.polygon.interiors)
    linework = unary_union(rings)
    if isinstance(linework, LineString):
        linework = MultiLineString([linework])
    union = unary_union([s.polygon for s in subdomains])
    boundary = union.boundary
    tol = 1e-9 * max(1.0, math.hypot(*np.subtract(union.bounds[2:], union.bounds[:2])))
    pieces = []
    for line in linework.geoms:
        coords = np.asarray(line.coords)
        for a, b in zip(coords[:-1], coords[1:]):
            mid = Point(0.5 * (a + b))
            if boundary.distance(mid) <= tol:
                pieces.append(np.array([a, b]))
    return pieces, union


def parse_geometry(text: str) -> Geometry:
    """Parse a YAML geometry config into a validated Geometry.

    Unit conversion and cryogenic shrink factors are applied here, so the
    returned coordinates are final (meters).  Raises ConfigError on schema
    violations and GeometryError on geometric inconsistencies.
    """
    try:
        cfg = yaml.safe_load(io.StringIO(text))
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("top level must be a mapping")
    known = {"units", "materials", "subdomains", "boundaries", "mesh"}
    for key in cfg:
        if key not in known:
            raise ConfigError(f"unknown top-level key {key!r}")

    unit_name = cfg.get("units", "m")
    if unit_name not in UNIT_FACTORS:
        raise ConfigError(f"units: unknown unit {unit_name!r}")
    unit = UNIT_FACTORS[unit_name]

    materials = {}
    for i, m in enumerate(cfg.get("materials", [])):
        ctx = f"materials[{i}]"
        if not isinstance(m, dict):
            raise ConfigError(f"{ctx}: must be a mapping")
        label = str(_req(m, "label", ctx))
        mat = Material(
            label=label,
            eps_perp=float(m.get("eps_perp", 1.0)),
            eps_par=float(m.get("eps_par", 1.0)),
            tan_delta=float(m.get("tan_delta", 0.0)),
            shrink_perp=float(m.get("shrink_perp", 1.0)),
            shrink_par=float(m.get("shrink_par", 1.0)),
        )
        if mat.eps_perp <= 0 or mat.eps_par <= 0:
            raise ConfigError(f"{ctx}: permittivities must be positive")
        materials[label] = mat

    subs = []
    occupied = None
    for i, s in enumerate(cfg.get("subdomains", [])):
        ctx = f"subdomains[{i}]"
        if not isinstance(s, dict):
            raise ConfigError(f"{ctx}: must be a mapping")
        mlabel = str(_req(s, "material", ctx))
        if mlabel not in materials:
            raise ConfigError(f"{ctx}: unknown material {mlabel!r}")
        mat = materials[mlabel]
        poly = _subdomain_polygon(s, unit, ctx)
        poly = _shrink_polygon(poly, mat.shrink_perp, mat.shrink_par)
        if bool(s.get("fill", False)):
            if occupied is not None:
                poly = poly.difference(occupied)
            if poly.is_empty:
                raise GeometryError(f"{ctx}: fill region is empty")
        polys = list(poly.geoms) if poly.geom_type == "MultiPolygon" else [poly]
        for j, p in enumerate(polys):
            p = shapely.geometry.polygon.orient(p, sign=1.0)
            name = str(s.get("name", mlabel if len(polys) == 1 else f"{mlabel}.{j}"))
            if len(polys) > 1:
                name = f"{name}.{j}" if "name" in s else name
            subs.append(Subdomain(name=name, material=mat, polygon=p))
        occupied = poly if occupied is None else unary_union([occupied, poly])
    if not subs:
        raise ConfigError("subdomains: at least one subdomain is required")

    scale = math.hypot(
        *np.subtract(unary_union([s.polygon for s in subs]).bounds[2:],
                     unary_union([s.polygon for s in subs]).bounds[:2])
    )
    tol = 1e-9 * max(1.0, scale)

    selectors = []
    for i, b in enumerate(cfg.get("boundaries", [])):
        ctx = f"boundaries[{i}]"
        if not isinstance(b, dict):
            raise ConfigError(f"{ctx}: must be a mapping")
        kind = str(_req(b, "kind", ctx))
        if kind not in WALL_KINDS:
            raise ConfigError(f"{ctx}: unknown wall kind {kind!r}")
        wall = Wall(
            kind=kind,
            theta_mix=float(b.get("theta_mix", math.pi / 4 if kind == "impedance" else 0.0)),
            f_ref=(float(b["f_ref"]) if "f_ref" in b else None),
        )
        selectors.append((_Selector(_req(b, "edges", ctx), unit, tol, ctx), wall))
    if not selectors:
        raise ConfigError("boundaries: at least one boundary entry is required")

    pieces, union = _exterior_pieces(subs)
    boundaries = []
    untagged = []
    for seg in pieces:
        wall = None
        for sel, w in selectors:
            if sel.matches(seg):
                wall = w
        if wall is None:
            untagged.append(seg)
        else:
            boundaries.append(BoundarySegment(points=seg, wall=wall))
    if untagged:
        raise GeometryError(
            f"untagged exterior edge(s), e.g. {untagged[0].tolist()}"
        )

    mesh_cfg = cfg.get("mesh", {}) or {}
    boxes = []
    for i, bx in enumerate(mesh_cfg.get("boxes", [])):
        ctx = f"mesh.boxes[{i}]"
        rect = tuple(float(v) * unit for v in _req(bx, "rect", ctx))
        boxes.append(rect + (float(_req(bx, "size", ctx)) * unit,))
    mesh = MeshControls(
        size=float(mesh_cfg.get("size", 0.0)) * unit,
        boxes=tuple(boxes),
        quads=bool(mesh_cfg.get("quads", False)),
    )

    geo = Geometry(subdomains=tuple(subs), boundaries=tuple(boundaries), mesh=mesh)
    diags = validate_geometry(geo)
    hard = [d for d in diags if d.rule != "warning"]
    if hard:
        raise GeometryError("; ".join(str(d) for d in hard))
    return geo


def serialize_geometry(geo: Geometry) -> str:
    """Emit a config (meters, shrink already applied) that re-parses to geo."""
    mats = {}
    for s in geo.subdomains:
        m = s.material
        mats[m.label] = {
            "label": m.label,
            "eps_perp": m.eps_perp,
            "eps_par": m.eps_par,
            "tan_delta": m.tan_delta,
        }
    subdomains = []
    for s in geo.subdomains:
        spec = {
            "name": s.name,
            "material": s.material.label,
            "polygon": [[float(r), float(z)] for r, z in s.polygon.exterior.coords[:-1]],
        }
        subdomains.append(spec)
    boundaries = []
    for b in geo.boundaries:
        entry = {
            "edges": {"line": [[float(v) for v in p] for p in b.points]},
            "kind": b.wall.kind,
        }
        if b.wall.kind == "impedance":
            entry["theta_mix"] = b.wall.theta_mix
            if b.wall.f_ref is not None:
                entry["f_ref"] = b.wall.f_ref
        boundaries.append(entry)
    mesh = {"size": geo.mesh.size, "quads": geo.mesh.quads}
    if geo.mesh.boxes:
        mesh["boxes"] = [
            {"rect": list(b[:4]), "size": b[4]} for b in geo.mesh.boxes
        ]
    doc = {
        "units": "m",
        "materials": list(mats.values()),
        "subdomains": subdomains,
        "boundaries": boundaries,
        "mesh": mesh,
    }
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)


def validate_geometry(geo: Geometry) -> list:
    """Check Geometry invariants; returns diagnostics (empty when clean)."""
    diags = []
    tol = 1e-12 * max(1.0, geo.scale)
    for s in geo.subdomains:
        coords = np.asarray(s.polygon.exterior.coords)
        if np.any(coords[:, 0] < -tol):
            diags.append(
                Diagnostic(
                    f"subdomain {s.name!r}",
                    "negative radius",
                    f"min r = {coords[:, 0].min():.3e}",
                )
            )
        if not s.polygon.is_valid:
            diags.append(Diagnostic(f"subdomain {s.name!r}", "invalid polygon"))
        m = s.material
        if m.eps_perp < 1.0 - 1e-9 or m.eps_par < 1.0 - 1e-9:
            diags.append(
                Diagnostic(
                    f"material {m.label!r}",
                    "warning",
                    "relative permittivity below vacuum",
                )
            )
    n = len(geo.subdomains)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = geo.subdomains[i], geo.subdomains[j]
            inter = a.polygon.intersection(b.polygon)
            if inter.area > 1e-12 * min(a.polygon.area, b.polygon.area):
                diags.append(
                    Diagnostic(
                        f"subdomains {a.name!r}/{b.name!r}",
                        "overlap",
                        f"area {inter.area:.3e}",
                    )
                )
    for b in geo.boundaries:
        if b.wall.kind == "axis" and np.any(np.abs(b.points[:, 0]) > 1e-9 * geo.scale):
            diags.append(
                Diagnostic("boundary", "axis wall off the r=0 axis", str(b.points.tolist()))
            )
    return diags
